"""Matrix-free Rosenbrock-Krylov integrators built on Lanczos biorthogonalization."""
from .errors import (BorokError, ConfigError, MaxStepsExceeded, NonFiniteState, ParseError,
                     RankDeficient, ReferenceMismatch, ReferenceUnavailable, SeriousBreakdown,
                     SingularSystem, StepsizeUnderflow, ValidationError)
from .integrator import (borok_step, borok_step_extended, full_space_row_step, rok_step,
                         stability_function_eval, stage_residual_first, stage_residual_full)
from .krylov import (arnoldi, arnoldi_adaptive, extend_basis, lanczos_biorth,
                     lanczos_biorth_adaptive)
from .problems import (FunctionProblem, GrayScottProblem, IvpProblem, LinearProblem,
                       ShallowWaterProblem, autonomize)
from .stepcontrol import (BasisStrategy, ControllerConfig, RunStats, integrate_adaptive,
                          integrate_fixed)
from .tableau import MethodTableau, builtin_tableau, load_tableau, read_tableau

__version__ = "0.1.0"

__all__ = [
    "BorokError", "ConfigError", "MaxStepsExceeded", "NonFiniteState", "ParseError",
    "RankDeficient", "ReferenceMismatch", "ReferenceUnavailable", "SeriousBreakdown",
    "SingularSystem", "StepsizeUnderflow", "ValidationError",
    "borok_step", "borok_step_extended", "full_space_row_step", "rok_step",
    "stability_function_eval", "stage_residual_first", "stage_residual_full",
    "arnoldi", "arnoldi_adaptive", "extend_basis", "lanczos_biorth", "lanczos_biorth_adaptive",
    "FunctionProblem", "GrayScottProblem", "IvpProblem", "LinearProblem", "ShallowWaterProblem",
    "autonomize",
    "BasisStrategy", "ControllerConfig", "RunStats", "integrate_adaptive", "integrate_fixed",
    "MethodTableau", "builtin_tableau", "load_tableau", "read_tableau",
]
