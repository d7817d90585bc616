"""Feature disentanglement and augmentation toolkit for few-shot classification."""

from .analysis import (
    dbi,
    geometry_report,
    inter_class_distance,
    intra_class_variance,
    nn_class_retention,
    project_2d,
)
from .backbone import Conv4Backbone, IdentityBackbone, make_backbone, pool_class_feature
from .covariance import PooledCovariance, estimate_pooled_covariance, sample_perturbation
from .episodes import (
    AugmentationScheme,
    AugmentedSupport,
    BenchmarkReport,
    ClassifierConfig,
    Episode,
    augment_feature_set,
    augment_support,
    embed_features,
    evaluate,
    fit_classifier,
    prepare_scheme,
    run_benchmark,
    sample_episode,
)
from .model import (
    DisentangledFeature,
    FeatureDisentangler,
    LatentStats,
    LossBreakdown,
    ModelConfig,
    PlainVae,
    gaussian_prior_kl,
    kl_decomposed,
    loss_aug,
    loss_cls,
    loss_intra,
    loss_recon,
    reparameterize,
    total_loss,
)
from .synth import (
    LabeledDataset,
    TaskSpec,
    load_feature_file,
    make_task_spec,
    render_features,
    sample_class_factors,
    sample_dataset,
    save_feature_file,
)
from .train import (
    TrainConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    schedule_lr,
    train,
    train_plain_vae,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
