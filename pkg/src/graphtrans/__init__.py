"""Graph-Transformer NMT laboratory on a small numpy autodiff core."""

from .errors import ContractError, DimensionError, SizeGuardError
from .model import BOS, EOS, PAD, UNK, ModelConfig, Seq2Seq
from .tensor import Tensor, backward, no_grad, precision

__version__ = "0.1.0"
