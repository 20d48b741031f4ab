"""Domain-adaptation training kit for imbalanced binary classification.

Submodules:

* ``tensor``  — float64 tensors with reverse-mode (and second-order) autodiff
* ``nets``    — feature extractor, label classifier, domain critic
* ``losses``  — cross entropy, weighted focal loss, critic objectives
* ``train``   — pretraining, alternating adversarial optimization, optimizers
* ``data``    — CSV ingestion, domain splits, synthetic shift generator
* ``metrics`` — precision/recall/F1, rank AUC, ROC, multi-run CI summary
* ``cli``     — the ``wassda`` command (synth / train / report)
"""

from .data import (
    DomainDataset,
    LabeledSplit,
    RawTable,
    ShiftSpec,
    batch_iter,
    generate_shifted_domains,
    load_csv,
    make_splits,
    make_target_baseline,
)
from .losses import (
    LossConfig,
    adversarial_objective,
    cross_entropy,
    gradient_penalty,
    interpolate_pairs,
    wasserstein_objective,
    weighted_focal_loss,
)
from .metrics import (
    MetricsReport,
    RobustnessSummary,
    auc,
    confusion,
    evaluate,
    prf1,
    robustness_summary,
    roc_points,
)
from .nets import (
    ArchConfig,
    DomainCritic,
    FeatureExtractor,
    LabelClassifier,
    ModelBundle,
    classify,
    criticize,
    extract_features,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import CapabilityError, ParamStore, ShapeError, Tensor, grad, no_grad
from .train import (
    OptimizerConfig,
    TrainConfig,
    TrainLog,
    TrainingDiverged,
    adversarial_train,
    evaluate_model,
    fit_critic_distance,
    optimizer_step,
    pretrain_source,
    run_mode,
)

__version__ = "0.1.0"
