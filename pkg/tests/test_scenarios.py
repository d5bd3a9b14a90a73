from __future__ import annotations

from importlib import resources

import pytest
import yaml

from magrisk.config import from_dict
from magrisk.core.scenario import validate
from magrisk.engine.runner import RunStatus, probe_agent, run_once
from magrisk.metrics import cascade_stats
from magrisk.scenarios import (
    SCENARIO_NAMES,
    SUPPLY_BASELINE_COST,
    SUPPLY_COST,
    TOM_WRONG_BELIEF,
    UnknownScenario,
    conformity_trial_spec,
    conformity_trials,
    export_scenario,
    final_state,
    load_scenario,
    supply_chain_spec,
    with_deadline,
)


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_golden_oracle(name):
    pkg = load_scenario(name)
    assert validate(pkg.spec) == []
    assert pkg.evaluate() == pkg.oracle


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_shipped_yaml_matches_builder(name):
    text = resources.files("magrisk").joinpath("data", f"{name}.yaml").read_text(encoding="utf-8")
    cfg = from_dict(yaml.safe_load(text))
    pkg = load_scenario(name)
    assert cfg.spec.digest() == pkg.spec.digest()
    assert cfg.seed_base == pkg.seed


def test_export_round_trip(tmp_path):
    path = export_scenario("retail-tom", tmp_path / "r.yaml", runs=7)
    assert path.read_text().startswith("# ")
    cfg = from_dict(yaml.safe_load(path.read_text()))
    assert cfg.runs == 7 and cfg.spec == load_scenario("retail-tom").spec


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        load_scenario("nope")


def test_supply_chain_without_misread_succeeds():
    counter = load_scenario("supply-chain-cascade").counterfactual
    result = run_once(counter, 20250101)
    assert result.status is RunStatus.SUCCESS


def test_supply_chain_chart_misread_seeds_its_own_taint():
    spec = supply_chain_spec(chart_read=0.0, inject=False)
    result = run_once(spec, 3)
    assert result.status is RunStatus.FAILURE
    stats = cascade_stats(result.trace, "chart-misread", SUPPLY_COST, SUPPLY_BASELINE_COST)
    assert stats.agents_reached == 4 and stats.origins == ["forecaster"]


def test_supply_chain_final_state():
    pkg = load_scenario("supply-chain-cascade")
    assert final_state(pkg.spec, pkg.run().trace)["shipping_units"] == 105_000


def test_power_grid_counterfactual_succeeds():
    pkg = load_scenario("power-grid-ambiguity")
    assert run_once(pkg.counterfactual, pkg.seed).status is RunStatus.SUCCESS


def test_retail_probe_exposes_wrong_belief():
    pkg = load_scenario("retail-tom")
    assert probe_agent(pkg.spec, pkg.seed, 2, "inventory", "What will pricing do next?") == TOM_WRONG_BELIEF


def test_conformity_trials_reproduce_threshold():
    trials = conformity_trials(sizes=[2, 3], runs=3, min_pressure=3)
    assert [t.final != t.initial for t in trials] == [False] * 3 + [True] * 3


def test_conformity_trial_spec_is_valid():
    assert validate(conformity_trial_spec(4)) == []


def test_deadline_turns_inventory_run_into_horizon_exceeded():
    pkg = load_scenario("inventory-cashflow")
    result = run_once(with_deadline(pkg.spec, 1), pkg.seed)
    assert result.status is RunStatus.HORIZON_EXCEEDED


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_scenarios_are_seed_stable(name):
    pkg = load_scenario(name)
    # scripted scenarios reach the same outcome on any seed
    assert pkg.run(seed=pkg.seed + 1000).status.value == pkg.oracle["status"]
