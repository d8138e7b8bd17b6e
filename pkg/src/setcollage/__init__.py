"""Set-attentive adversarial collage generation.

A hybrid generative model: randomly sampled sets of style templates replace
the usual noise input, a set-attention U-Net predicts per-pixel convex blend
weights (plus optional per-template affine warps), the weighted sum of the
templates forms a collage, and a convolutional U-Net refines it. Training is
adversarial against a patch discriminator, optionally guided by a content
image. Inference rolls out fully convolutionally over tiles for arbitrarily
large canvases.
"""

from .checkpoint import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    Batch,
    Corpus,
    CorpusError,
    MemorySet,
    load_corpus,
    load_image,
    make_minibatch,
    sample_memory_set,
    sample_patch,
    save_png,
)
from .discriminator import PatchDiscriminator
from .generator import (
    Generator,
    GeneratorConfig,
    GeneratorOutput,
    assemble_input,
    blend_weights,
    colorize_weights,
    generator_forward,
    set_pool,
    warp_templates,
)
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    entropy_loss,
    generator_total_loss,
    max_usage_loss,
    tv_loss,
)
from .nn_core import (
    IDENTITY_THETA,
    ConvBlock,
    gradcheck,
    grid_sample_bilinear,
    identity_theta,
    instance_norm,
    module_gradcheck,
)
from .rollout import RolloutResult, TilePlan, plan_tiles, render_tiled
from .set_blocks import RefinerUNet, STUNet, SetAttention
from .trainer import (
    ModelState,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    build_models,
    init_state,
    train,
    train_step,
)

__version__ = "0.1.0"
