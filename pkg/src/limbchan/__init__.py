"""limbchan: reconstruct missing ECG leads with a GRU seq2seq model and
classify the completed view with a 1-D ResNet."""

__version__ = "0.1.0"

from .errors import LimbchanError  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["LimbchanError", "BACKEND", "__version__"]
