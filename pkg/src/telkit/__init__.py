"""Audio classification with a joint cross-entropy + triplet objective.

The pieces, bottom to top: WAV decoding and log-mel features, a small
reverse-mode autodiff engine with compiled conv/pool kernels, triplet
mining and the joint loss, a training loop with three regimes, and
evaluation/embedding tools, all behind one CLI (``telkit``).
"""

from .audio import AudioClip, decode_wav, resample, write_wav
from .augment import AugmentSpec, spec_augment
from .autodiff import Tensor, backward, no_grad
from .batching import derive_pk, make_batches
from .errors import (
    AudioDecodeError,
    CheckpointError,
    ConfigError,
    DataError,
    GraphError,
    NoValidTriplets,
    NumericalError,
    ShapeError,
    TelkitError,
)
from .evaluate import (
    ConfusionMatrix,
    EvalResult,
    GroupReport,
    embed_dataset,
    emit_curves,
    evaluate,
    export_embeddings,
    knn_classify,
)
from .features import FeatureConfig, Spectrogram, mel_spectrogram
from .gradcheck import check_gradients, grad_check
from .losses import (
    LossBreakdown,
    TripletSet,
    cross_entropy,
    mine_triplets,
    pairwise_sq_dist,
    tel_loss,
    triplet_loss,
)
from .model import Model, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .optim import Adam
from .train import RunReport, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "decode_wav", "resample", "write_wav",
    "AugmentSpec", "spec_augment",
    "Tensor", "backward", "no_grad",
    "derive_pk", "make_batches",
    "TelkitError", "ShapeError", "NumericalError", "GraphError", "ConfigError",
    "DataError", "AudioDecodeError", "CheckpointError", "NoValidTriplets",
    "ConfusionMatrix", "EvalResult", "GroupReport", "embed_dataset",
    "emit_curves", "evaluate", "export_embeddings", "knn_classify",
    "FeatureConfig", "Spectrogram", "mel_spectrogram",
    "check_gradients", "grad_check",
    "LossBreakdown", "TripletSet", "cross_entropy", "mine_triplets",
    "pairwise_sq_dist", "tel_loss", "triplet_loss",
    "Model", "ModelConfig", "init_model", "load_checkpoint", "save_checkpoint",
    "Adam",
    "RunReport", "TrainConfig", "train",
    "__version__",
]
