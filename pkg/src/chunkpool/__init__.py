"""Long-document classification by chunked transformer encoding and CLS pooling."""
from .autodiff import Parameter, Tensor, backward, grad_check, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .model import DocumentClassifier, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "DocumentClassifier",
    "ModelConfig",
    "Parameter",
    "Tensor",
    "backward",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
