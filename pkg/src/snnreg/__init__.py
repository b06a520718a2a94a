"""Two-step semiparametric estimation on rank-transformed single indices."""

from .bandwidth import CvResult, cross_validate
from .errors import (
    BandwidthError,
    ConvergenceError,
    EstimationError,
    IdentificationError,
    SeparationError,
)
from .estimators import (
    CI_LEVELS,
    EstimateReport,
    MatchingSample,
    SelectionSample,
    matching_estimate,
    ols_no_correction,
    plugin_estimate,
    selection_estimate,
)
from .first_stage import (
    FirstStageMethod,
    IndexFit,
    SearchConfig,
    fixed_index,
    max_score,
    normalize_direction,
    probit_mle,
)
from .kernels import QUARTIC, Kernel, KernelFamily
from .montecarlo import (
    Arm,
    DgpSpec,
    Family,
    McResult,
    bahadur_check,
    generate,
    index_smoothness,
    run_table,
    theorem1_gap,
)
from .ranks import RankValues, ranks, ranks_loo
from .snn import (
    SnnFit,
    default_bandwidth_bounds,
    snn_fit,
    snn_fit_grid,
    xi_boundary,
)

__version__ = "0.1.0"
