from .ichol import FactorizationError, IncompleteCholesky, ichol_droptol
from .krylov import (ConvergenceError, SolveReport, as_apply, gmres, minres, pcg, pcg_multi,
                     write_history_csv)
from .operators import BlockOperator, LowRankUpdate, SPDSolver, smw_rank1_apply

__all__ = [
    "BlockOperator",
    "ConvergenceError",
    "FactorizationError",
    "IncompleteCholesky",
    "LowRankUpdate",
    "SPDSolver",
    "SolveReport",
    "as_apply",
    "gmres",
    "ichol_droptol",
    "minres",
    "pcg",
    "pcg_multi",
    "smw_rank1_apply",
    "write_history_csv",
]
