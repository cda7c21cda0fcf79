"""lipflow: flows of locally Lipschitz vector fields and the distributional
calculus built on them, with executable checks of the governing estimates."""

from .calculus import (
    CutoffField,
    QuadratureAlongFlow,
    difference_quotient,
    distributional_pairing,
    lie_residual,
    make_cutoff_field,
    mean_operator,
    pullback,
)
from .errors import (
    EscapeError,
    EvaluationError,
    GridMismatchError,
    IntegrationError,
    LipflowError,
    LipschitzDeclarationError,
    ParseError,
    RegionError,
    ScenarioError,
    SupportError,
)
from .expr import Expression, evaluate, evaluate_many, parse, to_source
from .field import (
    VectorField,
    divergence_at,
    divergence_field,
    divergence_many,
    estimate_lipschitz,
    eval_field,
)
from .flow import (
    FlowSample,
    IntegratorConfig,
    check_advance_estimate,
    check_gronwall,
    flow_many,
    flow_point,
    jacobian_det,
    jacobian_many,
    jacobian_matrix,
)
from .grid import (
    SampledFunction,
    TestFunction,
    integrate,
    l1_distance,
    l1_norm,
    load_csv,
    midpoint_grid,
    pair,
    sample,
    save_csv,
)
from .region import Region

__version__ = "0.1.0"
