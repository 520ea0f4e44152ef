from .bnb import MilpSolution, MilpStatus, Mode, SolveStats, SolverConfig, solve_milp
from .formats import (
    ExportError,
    Format,
    ModelParseError,
    SolutionFormatError,
    export_model,
    export_name,
    import_model,
    import_solution,
)
from .lp import LPSolution, LPStatus, solve_lp

__all__ = [
    "MilpSolution", "MilpStatus", "Mode", "SolveStats", "SolverConfig", "solve_milp",
    "ExportError", "Format", "ModelParseError", "SolutionFormatError", "export_model",
    "export_name", "import_model", "import_solution", "LPSolution", "LPStatus", "solve_lp",
]
