"""A from-scratch CNN library for exposure-distortion image classification."""

from .data import (
    Dataset,
    ImageSample,
    LabelClass,
    decode_ppm,
    encode_ppm,
    label_from_filename,
    load_directory,
    one_hot,
    resize_bilinear,
    synth_generate,
    to_float_scaled,
)
from .errors import (
    CorruptionError,
    ExpcnnError,
    FormatError,
    LabelingError,
    NumericError,
    ShapeError,
    TrainingError,
    UsageError,
)
from .layers import (
    ConvLayer,
    DenseLayer,
    ModelConfig,
    flatten_params,
    init_params,
    model_backward,
    model_forward,
    param_count,
    softmax,
)
from .model_io import load_model, save_model
from .training import (
    EpochMetrics,
    TrainConfig,
    TrainReport,
    batch_iterator,
    cross_entropy_loss,
    evaluate,
    gradient_check,
    render_report,
    sgd_step,
    split_dataset,
    train,
)

__version__ = "0.1.0"
