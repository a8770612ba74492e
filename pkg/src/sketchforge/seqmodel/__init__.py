"""Toy autoregressive sequence models for primitives and constraints."""

from .autodiff import Tensor, token_nll_nats  # noqa: F401
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
from .data import (  # noqa: F401
    constraint_batch,
    constraint_example,
    noisy_primitive_triples,
    tokenize_primitives,
)
from .generate import (  # noqa: F401
    GenerationStats,
    generate_constraints,
    generate_primitives,
)
from .models import (  # noqa: F401
    ConstraintModel,
    ContextMismatch,
    DimMismatch,
    ImagePrimitiveModel,
    ModelConfig,
    OutOfVocab,
    PrimitiveModel,
    SeqTooLong,
    pad_triples,
    pointer_logits,
)
from .sampling import (  # noqa: F401
    CONSTRAINT_NUCLEUS_P,
    PRIMITIVE_NUCLEUS_P,
    SamplerConfig,
    nucleus_sample,
    nucleus_support,
)
from .training import (  # noqa: F401
    AdamW,
    NonFiniteLoss,
    TrainConfig,
    one_cycle_lr,
    train,
)
