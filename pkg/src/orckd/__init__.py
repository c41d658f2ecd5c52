"""Group knowledge distillation with online role change, on a small numpy autodiff core."""

from .errors import (
    BroadcastError,
    ConfigError,
    DomainError,
    FormatError,
    LabelError,
    LadderError,
    OrcError,
    ShapeError,
    SpecError,
    StateError,
    TrainError,
)
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
