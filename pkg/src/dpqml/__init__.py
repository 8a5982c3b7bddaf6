"""Quasi maximum-likelihood estimation of dynamic panel data models.

Levels estimators fit the model augmented with a time-invariant control
function (iterated FGLS for an unrestricted error covariance, ECME for the
effect-plus-heteroskedastic structure).  Differenced estimators fit the
first-difference system jointly with linear projections of the initial
differences.  GMM baselines and a seeded Monte Carlo harness round out the
toolkit.
"""

from .companion import (
    CompanionMatrices,
    antidiagonal,
    build_aj_bj,
    build_dj,
    companion,
    companion_matrices,
    companion_powers,
)
from .differenced import (
    DiffFitConfig,
    DiffParams,
    PhiScaleCovariance,
    diff_quasi_loglik,
    diff_score,
    fit_diff_structured,
    fit_diff_unrestricted,
    phi_matrix,
    phi_solve,
)
from .errors import (
    DpqmlError,
    InsufficientMomentsError,
    InsufficientPeriodsError,
    NotPositiveDefiniteError,
    ParseError,
    RankDeficientError,
    SingularHessianError,
    UnbalancedPanelError,
    UnsupportedLagOrderError,
)
from .gmm import GmmSpec, build_instruments, fit_gmm
from .levels import (
    FitConfig,
    LevelsParams,
    StructuredCovariance,
    ecme_cm1,
    ecme_cm2,
    ecme_estep,
    fgls_step,
    fit_ecme,
    fit_iterated_fgls,
    mean_error_correlation,
    omega_update_unrestricted,
    quasi_loglik,
    sandwich_covariance,
    score,
)
from .montecarlo import (
    DgpConfig,
    McCellResult,
    McReport,
    generate_sample,
    report_csv,
    report_markdown,
    run_grid,
    substream,
    table_grid,
)
from .panel import (
    AugmentedDesign,
    CsvSchema,
    DifferencedSystem,
    PanelDataset,
    build_augmented,
    build_differenced,
    load_csv,
)
from .results import QmlFit, fit_document

__version__ = "0.1.0"
