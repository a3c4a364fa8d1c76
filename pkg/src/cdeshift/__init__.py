"""Conditional density estimation under covariate shift.

Nearest-neighbor importance weights, nearest-neighbor and spectral series
conditional density estimators, shift-corrected losses, stacking, and
calibration diagnostics.  Hot loops run under numba when it is available;
set ``CDESHIFT_DISABLE_NUMBA=1`` to force the numpy kernels.
"""

__version__ = "0.1.0"

from .data import DataError, Sample, SplitSpec, load_table, save_table, split, standardize  # noqa: E402
from .grid import DensityGrid, normalize, read_catalog, uniform_grid, write_catalog  # noqa: E402
from .simulate import OracleSpec, SelectionScheme, make_oracle, rejection_sample  # noqa: E402
from .weights import WeightModel, clean_zero_weights, fit_weights, predict_beta, select_M  # noqa: E402
from .cde_nn import NnCdeModel, fit_nn_cde, marginal_model  # noqa: E402
from .cde_series import SeriesModel, fit_series, tune_series  # noqa: E402
from .losses import LossReport, evaluate, loss_labeled, loss_oracle, loss_shifted  # noqa: E402
from .stacking import StackedModel, forward_select, exhaustive_select, solve_simplex_qp, stack  # noqa: E402
from .diagnostics import coverage_curve, diagnose, hpd_region, pit_ks, qq_curve  # noqa: E402
from .pipeline import Grids, PipelineError, fit_combined  # noqa: E402
