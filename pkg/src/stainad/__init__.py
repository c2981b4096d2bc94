"""stainad: corrupt-and-reconstruct anomaly detection for grayscale images.

Train an autoencoder (optionally with additive skip connections) to undo
synthetic corruptions -- stains, scratches, drops, Gaussian noise -- and flag
anomalies at test time from the reconstruction residual or from MCDropout
uncertainty. Includes dataset plumbing, tie-aware ROC/AUC evaluation and a CLI.
"""

from .image import GrayImage
from .errors import ConfigError, DataError, TrainingDiverged
from .corruption import (
    CorruptionSpec,
    CorruptedSample,
    StainShape,
    ScratchShape,
    DropsShape,
    corrupt,
    sample_stain,
    sample_scratch,
    sample_drops,
    apply_stain,
    apply_gaussian,
    apply_scratch,
    apply_drops,
)
from .dataset import (
    DatasetIndex,
    TestItem,
    SyntheticDatasetSpec,
    scan_mvtec,
    load_image,
    load_mask,
    make_synthetic,
    validation_split,
)
from .model import (
    ModelSpec,
    build,
    forward,
    mc_forward,
    param_count,
    save_checkpoint,
    load_checkpoint,
)
from .training import (
    TrainConfig,
    TrainHistory,
    PlateauLrSchedule,
    train,
    psnr,
)
from .detection import (
    AnomalyMap,
    residual_map,
    uncertainty_map,
    image_score,
    pixel_scores,
    save_map,
    load_map,
)
from .evaluation import (
    RocResult,
    CategoryResult,
    EvalReport,
    roc_auc,
    evaluate_image_wise,
    evaluate_pixel_wise,
    evaluate_index,
    render_report,
)

__version__ = "0.1.0"
