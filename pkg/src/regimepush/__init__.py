"""Solver and simulator toolkit for singular control of regime-switching
diffusions with state constraints."""

__version__ = "0.1.0"

from .grid import Grid, ValueField
from .model import (
    CoefficientField,
    ModelSpec,
    builtin_model,
    check_comparison_conditions,
    check_example3_params,
    load_model_toml,
    lyapunov_check,
    validate_generator,
    validate_reward,
)
from .operators import (
    TransformContext,
    apply_generator,
    exp_transform,
    exp_untransform,
    f_value,
    h_lambda,
    qvi_residual,
)
from .solver import (
    PolicyField,
    SolveOptions,
    SolveReport,
    extract_nonintervention_region,
    hierarchical_solve,
    residual_report,
    solve,
)
