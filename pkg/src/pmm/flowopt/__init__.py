"""Network-flow models: MP routing, social optimum, tolls and project selection."""

from .projects import (AddEdge, AddTrainEdge, Project, SetDelay, SopResult, negative_travel_time,
                       parse_project, solve_sop, verify_sop)
from .social import KktCertificate, SocialOptimum, check_kkt, compute_tolls, solve_social_optimum_tt
from .steady import (FEAS_TOL, Infeasible, LpCertificate, MpObjective, ResidualReport, RouteSolution,
                     SteadyFlow, check_lp_certificate, check_steady_feasibility, format_steady_flow,
                     parse_steady_flow, solve_mp_routing)
from .timevarying import (TimeVaryingFlow, check_timevarying_feasibility, solve_timevarying_routing,
                          timevarying_objective)

__all__ = [
    "AddEdge", "AddTrainEdge", "Project", "SetDelay", "SopResult", "negative_travel_time",
    "parse_project", "solve_sop", "verify_sop", "KktCertificate", "SocialOptimum", "check_kkt",
    "compute_tolls", "solve_social_optimum_tt", "FEAS_TOL", "Infeasible", "LpCertificate",
    "MpObjective", "ResidualReport", "RouteSolution", "SteadyFlow", "check_lp_certificate",
    "check_steady_feasibility", "format_steady_flow", "parse_steady_flow", "solve_mp_routing",
    "TimeVaryingFlow", "check_timevarying_feasibility", "solve_timevarying_routing",
    "timevarying_objective",
]
