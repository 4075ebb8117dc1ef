"""Functional data analysis of loss-development triangles.

Triangles become collections of incremental-loss-ratio curves; functional
depth ranks them and flags outliers, FPCA plus regression priors complete
partially developed curves by penalized least squares, and a functional
bootstrap supplies pointwise and depth-based predictive envelopes,
benchmarked against the Mack chain ladder.
"""

from .bootstrap import (BootstrapEnsemble, PredictiveRegion, bootstrap_forecast,
                        clr_region, exd_region, make_worlds, pointwise_interval)
from .chainladder import ClFit, cl_curves, fit_cl, mack
from .completion import (CompletedCurve, CompletionConfig, TrainedModel,
                         complete_pls, default_k_grid, fit_pipeline,
                         fixed_origin_backtest, sequential_completion,
                         truncate_curve, tune)
from .depth import (DepthReport, Envelope, OutlierRule, band_depth,
                    central_envelope, extremal_depth, flag_outliers,
                    marginal_ranks, modified_band_depth, stratified_envelopes)
from .errors import (ConvergenceWarning, DegenerateResampleError,
                     InsufficientDataError, LossFdaError, ParseError,
                     SingularityError, ValidationError)
from .fpca import FpcaModel, ScoreMatrix, fit_fpca, reconstruct, score_matrix, scores
from .regression import CVSpec, ScorePrior, fit_lasso, predict_prior
from .scoring import (EvalReport, cis, coverage, evaluate_methods,
                      functional_coverage, interval_score, mape_ultimate,
                      pit_ks, pit_values, uis_weighted)
from .seeding import spawn_rng
from .synthetic import SynthDataset, SynthSpec, generate, inject_outliers
from .triangles import (CompanyFeatures, DevCurve, FeatureEncoder, LossTriangle,
                        SelectionFilters, SummaryTable, ilr_from_clr,
                        ingest_triangles, read_features, summarize, to_clr, to_ilr)

__version__ = "0.1.0"
