"""Entropic optimal transport with doubly-bounded target marginals.

Solvers for ``min <C, P> - eps H(P)`` subject to ``P 1 = a`` and
``b_d <= P^T 1 <= b_u``, plus bounded clustering and long-tailed
classification built on them.
"""

from .core import (
    DBOTError,
    DegenerateKernelError,
    InfeasibleProblemError,
    KernelOverflowError,
    TransportProblem,
    validate_problem,
)
from .solvers import (
    Solution,
    SolverConfig,
    lockstep_compare,
    solve,
    solve_bregman,
    solve_dual,
    solve_sinkhorn_knopp,
    solve_vanilla_sinkhorn,
)

__all__ = [
    "DBOTError",
    "DegenerateKernelError",
    "InfeasibleProblemError",
    "KernelOverflowError",
    "Solution",
    "SolverConfig",
    "TransportProblem",
    "lockstep_compare",
    "solve",
    "solve_bregman",
    "solve_dual",
    "solve_sinkhorn_knopp",
    "solve_vanilla_sinkhorn",
    "validate_problem",
]
__version__ = "0.1.0"
