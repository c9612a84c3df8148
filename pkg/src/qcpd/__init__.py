"""Real-time change-point detection in nonlinear quantile regression.

Workflow: fit a quantile model on a change-free historical block
(:func:`fit_quantile`), freeze the fitted parameters and the inverse
square root of the gradient outer-product matrix into
:class:`HistoricalArtifacts`, then stream new observations through a
detector (:func:`init_detector` / :func:`push`) that alarms when the
normalized CUSUM of the check-loss subgradient crosses a Monte-Carlo
critical value (:func:`critical_value` / :func:`build_table`).
"""

from .critvals import (
    CriticalValueTable,
    FormatError,
    MissingCriticalValue,
    Procedure,
    build_table,
    critical_value,
    load_table,
    save_table,
    simulate_sup,
)
from .detector import (
    AllZeroMatrix,
    DetectorState,
    DimensionMismatch,
    HistoricalArtifacts,
    NoObservations,
    Verdict,
    boundary_z,
    compute_jm,
    init_detector,
    inv_sqrt_psd,
    push,
    z_sup,
)
from .models import (
    Observation,
    QuantileLevel,
    RegressionModel,
    builtin_growth,
    builtin_linear,
    check_loss,
    finite_difference_grad,
    get_model,
    psi,
    register_model,
)
from .qfit import (
    FitConfig,
    FitResult,
    InsufficientData,
    NonFiniteObjective,
    fit_quantile,
    objective_at,
)
from .simlab import (
    AggregateReport,
    ErrorLaw,
    ReplicationSummary,
    Scenario,
    generate_stream,
    load_presets,
    preset_scenarios,
    report_csv,
    run_experiment,
    run_replication,
)

__version__ = "0.1.0"
