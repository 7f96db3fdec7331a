"""Multiple imputation by chained equations with delta-adjusted MNAR sensitivity analysis."""

__version__ = "0.1.0"

from .data import (Dataset, MissingnessSummary, VariableMeta, load_csv,  # noqa: E402
                   missingness_indicator, summarize_missingness, write_csv)
from .engine import (MiceSpec, MultiImputation, PredictorMatrix, make_predictor_matrix,  # noqa: E402
                     run_fcs, run_narfcs, trace_statistics)
from .pooling import AnalysisModel, PooledResult, fit_target, pool, recommend_m  # noqa: E402
from .ums import UmsExpression, evaluate_ums, parse_ums  # noqa: E402

__all__ = [
    "AnalysisModel", "Dataset", "MiceSpec", "MissingnessSummary", "MultiImputation",
    "PooledResult", "PredictorMatrix", "UmsExpression", "VariableMeta", "evaluate_ums",
    "fit_target", "load_csv", "make_predictor_matrix", "missingness_indicator", "parse_ums",
    "pool", "recommend_m", "run_fcs", "run_narfcs", "summarize_missingness", "trace_statistics",
    "write_csv",
]
