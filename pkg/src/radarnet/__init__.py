"""FM-CW radar vehicle classification pipeline."""

from .radar import (
    CLASS_ORDER,
    BeatSignal,
    ClassProfile,
    Geometry,
    NyquistError,
    PointTarget,
    ProfileTable,
    RadarParams,
    RampPolarity,
    Scatterer,
    Scenario,
    VehicleClass,
    beat_frequencies,
    instantaneous_tx_frequency,
    invert_beat,
    modulating_frequency,
    sample_vehicle_scenario,
    synthesize_beat_signal,
    synthesize_point_targets,
    tri,
)
from .spectrogram import (
    PadOverflowError,
    RdTensor,
    Spectrogram,
    build_spectrograms,
    build_tensor,
    compute_mean_tensor,
    export_pgm,
    fft_modulus,
    mean_normalize,
    segment_ramps,
    signal_to_tensor,
)
from .dataset import (
    BadMagicError,
    Dataset,
    DimensionOverflowError,
    FoldSplit,
    TensorFormatError,
    TruncatedFileError,
    balanced_batches,
    generate_dataset,
    load_dataset,
    load_signal,
    load_tensor,
    save_signal,
    save_tensor,
    stratified_fold_split,
)
from .network import (
    Network,
    StaleCacheError,
    TrainConfig,
    WeightShapeError,
    WeightsFormatError,
    backward,
    build_network,
    forward,
    gradient_check,
    load_weights,
    loss_and_grad,
    predict,
    save_weights,
    sgd_step,
)
from .evaluation import (
    ConfusionMatrix,
    CvReport,
    confusion_matrix,
    cross_validate,
    evaluate,
    select_best_epoch,
    train_fold,
)

__version__ = "0.1.0"
