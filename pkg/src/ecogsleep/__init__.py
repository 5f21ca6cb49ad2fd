"""Sleep/wake episode detection in multichannel rodent ECoG.

Windowed mean and deviation features of normalized channels feed a single
sigmoid neuron. A Morlet-wavelet labeler produces training labels, and a
synthetic generator provides recordings with known ground truth.
"""

from .errors import DataError
from .ingest import (
    BS,
    WS,
    Hypnogram,
    Recording,
    align_hypnograms,
    load_hypnogram,
    load_recording,
    save_hypnogram,
    save_recording,
)
from .metrics import ConfusionMatrix, accuracy, confusion, dor
from .model import (
    PerceptronModel,
    TrainConfig,
    TrainResult,
    align_labels,
    average_models,
    classify,
    forward,
    load_model,
    predict_proba,
    pretrained,
    save_model,
    train,
)
from .preprocess import (
    Calibration,
    FeatureSeries,
    NormalizedSignal,
    extract_features,
    normalize,
    renormalize_features,
    sliding_features,
)
from .streaming import StreamingClassifier, StreamOutput, stream_push
from .synth import SynthSpec, generate
from .wavelet import (
    BandEnergySeries,
    CwtSurface,
    ThresholdConfig,
    band_energy,
    cwt_morlet,
    estimate_thresholds,
    markup_bs_ws,
)

__version__ = "0.1.0"

__all__ = [
    "accuracy",
    "align_hypnograms",
    "align_labels",
    "average_models",
    "band_energy",
    "BandEnergySeries",
    "BS",
    "Calibration",
    "classify",
    "confusion",
    "ConfusionMatrix",
    "cwt_morlet",
    "CwtSurface",
    "DataError",
    "dor",
    "estimate_thresholds",
    "extract_features",
    "FeatureSeries",
    "forward",
    "generate",
    "Hypnogram",
    "load_hypnogram",
    "load_model",
    "load_recording",
    "markup_bs_ws",
    "normalize",
    "NormalizedSignal",
    "PerceptronModel",
    "predict_proba",
    "pretrained",
    "Recording",
    "renormalize_features",
    "save_hypnogram",
    "save_model",
    "save_recording",
    "sliding_features",
    "stream_push",
    "StreamingClassifier",
    "StreamOutput",
    "SynthSpec",
    "ThresholdConfig",
    "train",
    "TrainConfig",
    "TrainResult",
    "WS",
]
