"""Multi-hypothesis camera pose regression with Bingham-Gaussian mixtures."""
from .bingham import BinghamParams
from .errors import (ConfigurationError, DegenerateInputError, EnvelopeError, FormatError,
                     NonFiniteLossError)
from .gaussian import GaussianDiag
from .mixtures import PoseHypothesis, PoseMixture
from .normtable import NormTable, build_norm_table
from .regressor import MhpRegressor, TrainConfig
from .scenes import SceneSample, SceneSpec

__all__ = [
    "BinghamParams", "ConfigurationError", "DegenerateInputError", "EnvelopeError", "FormatError",
    "GaussianDiag", "MhpRegressor", "NonFiniteLossError", "NormTable", "PoseHypothesis", "PoseMixture",
    "SceneSample", "SceneSpec", "TrainConfig", "build_norm_table",
]
