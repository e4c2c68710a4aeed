"""The municipal authority: queries, evaluation circuit, verdicts and fines."""

from .circuit import FAILURE_CLASSES, EvaluationCircuit, Verdict, Witness, eval_circuit
from .fines import (FinePolicy, fine_margin_for_confidence, fine_threshold, levy_fine, rra_fine,
                    simulate_dishonest_utility)
from .queries import (ADMISSIBLE, CannotVerify, CongestionContribution, CongestionContributionLimit,
                      CongestionPricing, Emissions, EmissionsLimit, Identity, Period2Accuracy,
                      QueryRejected, RegulationBundle, SopSelection, SpeedLimit, TripCount,
                      WaitEquity, WaitTimeEquity, Wage, eval_query, query_from_dict, query_id,
                      query_to_dict)

__all__ = [
    "FAILURE_CLASSES", "EvaluationCircuit", "Verdict", "Witness", "eval_circuit", "FinePolicy",
    "fine_margin_for_confidence", "fine_threshold", "levy_fine", "rra_fine",
    "simulate_dishonest_utility", "ADMISSIBLE", "CannotVerify", "CongestionContribution",
    "CongestionContributionLimit", "CongestionPricing", "Emissions", "EmissionsLimit", "Identity",
    "Period2Accuracy", "QueryRejected", "RegulationBundle", "SopSelection", "SpeedLimit",
    "TripCount", "WaitEquity", "WaitTimeEquity", "Wage", "eval_query", "query_from_dict",
    "query_id", "query_to_dict",
]
