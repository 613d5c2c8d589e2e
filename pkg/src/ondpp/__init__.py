"""Streaming/online MAP inference and online learning for low-rank NDPPs."""

__version__ = "0.1.0"

from .core import (
    DetCounter,
    NdppModel,
    f_det,
    load_model,
    logdet_normalizer,
    logdet_normalizer_factored,
    save_model,
    validate_model,
)
from .inference import (
    StreamPoint,
    brute_force_map,
    offline_greedy,
    run_offline,
    run_online,
    stream_from_model,
)
from .learning import LearningConfig, online_learn, full_log_likelihood, sample_exact_small
