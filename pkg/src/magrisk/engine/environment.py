"""Environments the agents act on.

An environment owns a key/value state. ``step`` is pure in
``(state, actions, key_taint, rng)`` and reports, for every key it writes,
which taint labels flowed into the new value.
"""

from __future__ import annotations

import random
import re
from typing import Any, Callable, Iterable, Mapping

from magrisk.core.scenario import MILESTONE_OPS

# (agent, action label, args, taint labels of the acting agent)
ActionRecord = tuple[str, str, Mapping[str, Any], frozenset]

_QTY = re.compile(r"^\s*\$?\s*([0-9][0-9,]*(?:\.[0-9]+)?)\s*([kKmMbB]?)\s*(?:units)?\s*$")
_SCALE = {"": 1, "k": 1_000, "m": 1_000_000, "b": 1_000_000_000}


def parse_quantity(value: Any) -> Any:
    """``"10.5K"`` -> 10500, ``"$9,999"`` -> 9999; anything else passes through."""
    if isinstance(value, (int, float)) or not isinstance(value, str):
        return value
    m = _QTY.match(value)
    if not m:
        return value
    number = float(m.group(1).replace(",", "")) * _SCALE[m.group(2).lower()]
    return int(number) if number.is_integer() else number


class Environment:
    """Base environment: static state, no transitions."""

    name = "static"

    def __init__(self, params: Mapping[str, Any] | None = None):
        self.params = dict(params or {})

    def initial_state(self) -> dict:
        return dict(self.params.get("initial", {}))

    def step(
        self,
        state: Mapping[str, Any],
        actions: list[ActionRecord],
        key_taint: Mapping[str, frozenset],
        rng: random.Random,
        step: int,
    ) -> tuple[dict, dict[str, frozenset]]:
        return dict(state), {}

    def view(self, state: Mapping[str, Any], keys: Iterable[str] | None) -> dict:
        if keys is None:
            return dict(state)
        return {k: state[k] for k in keys if k in state}


def _apply_op(state: dict, op: str, key: str, value: Any) -> None:
    value = parse_quantity(value)
    if op == "set":
        state[key] = value
    elif op == "add":
        state[key] = state.get(key, 0) + value
    elif op == "sub":
        state[key] = state.get(key, 0) - value
    elif op == "max":
        state[key] = max(state.get(key, value), value)
    elif op == "min":
        state[key] = min(state.get(key, value), value)
    elif op == "append":
        state[key] = [*state.get(key, []), value]
    else:
        raise ValueError(f"unknown state operation {op!r}")


def _cond_holds(state: Mapping[str, Any], cond: Mapping[str, Any]) -> bool:
    return MILESTONE_OPS[cond.get("op", "eq")](state.get(cond["key"]), cond.get("value"))


class LedgerEnvironment(Environment):
    """Declarative key/value environment.

    Parameters::

        initial: {key: value}
        actions: {label: [{op: set|add|sub|max|min|append, key, value | arg}]}
        rules:   [{when: [{key, op, value}], set: {key: value}}]   # derived effects
        shocks:  [{step, set: {key: value}}]                       # exogenous changes

    Actions are applied in agent-evaluation order, then shocks, then each rule
    once in declaration order. Rule-derived keys inherit the taint of the
    keys their condition reads.
    """

    name = "ledger"

    def step(self, state, actions, key_taint, rng, step):
        new = dict(state)
        taint: dict[str, frozenset] = {}
        table = self.params.get("actions", {})
        for _agent, label, args, labels in actions:
            for eff in table.get(label, []):
                value = args.get(eff["arg"]) if "arg" in eff else eff.get("value")
                _apply_op(new, eff.get("op", "set"), eff["key"], value)
                if labels:
                    taint[eff["key"]] = taint.get(eff["key"], frozenset()) | labels
        for shock in self.params.get("shocks", []):
            if shock["step"] == step:
                for k, v in shock.get("set", {}).items():
                    new[k] = parse_quantity(v)
        for rule in self.params.get("rules", []):
            conds = rule["when"] if isinstance(rule["when"], list) else [rule["when"]]
            if all(_cond_holds(new, c) for c in conds):
                inherited = frozenset().union(
                    *(key_taint.get(c["key"], frozenset()) | taint.get(c["key"], frozenset()) for c in conds)
                )
                for k, v in rule.get("set", {}).items():
                    new[k] = parse_quantity(v)
                    if inherited:
                        taint[k] = taint.get(k, frozenset()) | inherited
        return new, taint


ENVIRONMENTS: dict[str, Callable[[Mapping[str, Any]], Environment]] = {
    "static": Environment,
    "null": Environment,
    "ledger": LedgerEnvironment,
}


def register_environment(name: str, factory: Callable[[Mapping[str, Any]], Environment]) -> None:
    ENVIRONMENTS[name] = factory


def make_environment(name: str, params: Mapping[str, Any]) -> Environment:
    try:
        return ENVIRONMENTS[name](params)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}") from None
