"""Parameter selection: stream-model fitting, historical surfaces, online tuning."""
from .logstore import LogStore
from .recommend import KNNRegressor, LinkFeatures, Recommendation, Regressor, offline_recommend
from .stream_model import StreamModelFit, fit_stream_model, optimal_streams
from .surface import ThroughputSurface, build_surface, local_maxima, surface_argmax
from .tuning import SimnetJob, TuningBudget, TuningGrid, TuningResult, online_tune, tune_job

__all__ = [
    "LogStore", "KNNRegressor", "LinkFeatures", "Recommendation", "Regressor", "offline_recommend",
    "StreamModelFit", "fit_stream_model", "optimal_streams",
    "ThroughputSurface", "build_surface", "local_maxima", "surface_argmax",
    "SimnetJob", "TuningBudget", "TuningGrid", "TuningResult", "online_tune", "tune_job",
]
