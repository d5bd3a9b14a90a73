"""Trace-level risk measures."""

from magrisk.metrics.conformity import AbandonmentResult, Trial, abandonment_rate
from magrisk.metrics.coordination import (
    PLANNING_RUBRIC,
    ConsistencyReport,
    CoordinationStats,
    claim_consistency,
    coordination_stats,
    planning_rubric_prompt,
)
from magrisk.metrics.diversity import (
    HashingEmbedder,
    ResponseItem,
    ResponseSet,
    SimilarityResult,
    disagreement_rate,
    pairwise_similarity,
    response_entropy,
    similarity_clusters,
)
from magrisk.metrics.negotiation import (
    OutcomeSpace,
    SVOCategory,
    SVOChoice,
    SVOResult,
    cooperation_index,
    dominates,
    is_pareto_optimal,
    pareto_frontier,
    svo_classify,
)
from magrisk.metrics.reliability import (
    CascadeStats,
    LinearCost,
    SensitivityProfile,
    UnknownTaintLabel,
    apply_safety_factor,
    cascade_stats,
    sensitivity_profile,
    success_score,
)
from magrisk.metrics.report import MetricReport, salient_order, table_text, write_table
from magrisk.metrics.tom import AgentToM, ToMScore, brier, tom_score
