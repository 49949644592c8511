"""fanet: attention over entity sets, supervised to focus on related pairs.

The core idea: compute scaled dot-product attention over a set of entities
(detected objects, words), normalize the logits two ways -- per reference row
for feature aggregation, and across the whole matrix as one probability
distribution over ordered pairs -- and push that distribution onto known
related pairs with a focal cross-entropy "center-mass" loss. All gradients
are closed-form; everything is reproducible bit-for-bit from seeds.

Layout:

  matrices     float64 matrix guards and stabilized softmax kernels
  attention    entity sets, the attention block, exact backward pass
  losses       center-mass, focal/l2/smooth-l1 variants, logit gradients
  supervision  IoU matching and target builders for boxes and tagged tokens
  metrics      top-K pair extraction, relationship recall, word importance
  synthgen     synthetic relational worlds with known labels and relations
  trainer      end-to-end training, gradient checking, ablation, checkpoints
  cli          the `fanet` command (gen / train / eval / ablate / ...)
"""

from .attention import (
    AttentionParams,
    AttentionState,
    EntitySet,
    aggregate,
    attention_logits,
    backward,
    forward,
    init_params,
    residual_combine,
)
from .losses import (
    FocusLossConfig,
    center_mass,
    center_mass_grad_logits,
    focal_loss,
    l2_loss,
    relation_loss,
    relation_loss_backward,
    smooth_l1_loss,
)
from .matrices import (
    DEFAULT_EPS,
    ShapeError,
    ValidationError,
    softmax_cols,
    softmax_matrix,
    softmax_rows,
    stable_log,
)
from .metrics import (
    CenterMassSummary,
    GroundTruthRelation,
    RelationPair,
    center_mass_report,
    relation_recall,
    top_k_pairs,
    word_importance,
)
from .supervision import (
    GroundTruthObject,
    LexicalPairTable,
    build_language_target,
    build_vision_target,
    entity_gt_matching,
    iou,
)
from .synthgen import (
    DocumentSpec,
    Instance,
    WorldSpec,
    default_document_spec,
    default_world_spec,
    generate_dataset,
    generate_document_instance,
    generate_instance,
    read_jsonl,
    write_jsonl,
)
from .trainer import (
    DivergenceError,
    EvalResult,
    ModelParams,
    TrainConfig,
    TrainReport,
    ablate,
    evaluate,
    forward_task,
    grad_check,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # matrices
    "DEFAULT_EPS",
    "ValidationError",
    "ShapeError",
    "softmax_rows",
    "softmax_cols",
    "softmax_matrix",
    "stable_log",
    # attention
    "EntitySet",
    "AttentionParams",
    "AttentionState",
    "init_params",
    "attention_logits",
    "forward",
    "aggregate",
    "residual_combine",
    "backward",
    # losses
    "FocusLossConfig",
    "center_mass",
    "focal_loss",
    "l2_loss",
    "smooth_l1_loss",
    "center_mass_grad_logits",
    "relation_loss",
    "relation_loss_backward",
    # supervision
    "GroundTruthObject",
    "LexicalPairTable",
    "iou",
    "entity_gt_matching",
    "build_vision_target",
    "build_language_target",
    # metrics
    "RelationPair",
    "GroundTruthRelation",
    "CenterMassSummary",
    "top_k_pairs",
    "relation_recall",
    "word_importance",
    "center_mass_report",
    # synthgen
    "WorldSpec",
    "DocumentSpec",
    "Instance",
    "generate_instance",
    "generate_document_instance",
    "generate_dataset",
    "default_world_spec",
    "default_document_spec",
    "read_jsonl",
    "write_jsonl",
    # trainer
    "TrainConfig",
    "ModelParams",
    "TrainReport",
    "EvalResult",
    "DivergenceError",
    "init_model",
    "forward_task",
    "train",
    "evaluate",
    "grad_check",
    "ablate",
    "save_checkpoint",
    "load_checkpoint",
]
