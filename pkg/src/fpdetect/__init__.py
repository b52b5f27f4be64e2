"""Round-off analysis and low-cost runtime error detectors for iterative
stencil computations.

The pipeline has an offline and an online half.  Offline: unroll a
stencil's T-step effective coefficients (`unroll_coefficients`), bound the
worst-case round-off of the iterated and direct evaluation routes
(`error_estimate`), and synthesize cost-optimal detector configurations
into a lookup table (`offline_profile`).  Online: `run_protected` scans
the data's exponent range once, picks the configuration, and interleaves
detector evaluations and checks with the plain stencil updates, flagging
any divergence beyond the certified round-off threshold.  `inject`
provides soft-error and software-bug campaigns against that runtime.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    EmptyProtectedRegionError,
    FpdetectError,
    IllegalTilingError,
    InfeasibleConfigError,
    InvalidSpecError,
    MalformedInputError,
    UnknownBenchmarkError,
    UnsupportedCoverageError,
    UnsupportedExponentRangeError,
)
from .stencil import (  # noqa: F401
    DIRICHLET_FIXED,
    DIRICHLET_TIME,
    NEUMANN,
    BoundaryCondition,
    CouplingPair,
    ExponentRange,
    GridState,
    StencilSpec,
    run_iterated,
    scan_exponent_range,
    spec_from_json,
    step_iterated,
    validate_spec,
)
from .benchmarks import BENCHMARKS, build_benchmark  # noqa: F401
from .coeffs import (  # noqa: F401
    CoeffTable,
    coeff_checksum,
    load_table,
    row_sum,
    save_table,
    unroll_coefficients,
)
from .fpmodel import (  # noqa: F401
    DEFAULT_MODEL,
    PROFILED_WIDTH_MAX,
    FloatModel,
    clamp_range,
    detector_precision,
    direct_error_bound,
    error_estimate,
    iterated_error_bound,
)
from .synthesis import (  # noqa: F401
    ConfigLUT,
    DetectorConfig,
    EssentialWidth,
    WeightedSupport,
    adjust_coverage,
    build_support,
    config_cost,
    coverage_fraction,
    essential_width,
    max_contrib,
    min_contrib,
    offline_profile,
    protected_width,
)
from .runtime import (  # noqa: F401
    CheckOutcome,
    RunManifest,
    detection_threshold,
    eval_detector,
    detector_check,
    kahan_dot,
    matched_bits,
    placement,
    plan_schedule,
    read_outcomes,
    run_protected,
    trailing_check,
    write_outcomes,
)
from .inject import (  # noqa: F401
    CampaignConfig,
    CampaignReport,
    SoftFaultPlan,
    TiledVariant,
    draw_fault_plan,
    flip_bit,
    inject_soft_fault,
    make_fault_hook,
    read_campaign_csv,
    run_campaign,
    write_campaign_csv,
)
