"""Information-bottleneck regularized training and robustness evaluation.

Layers, bottom to top: a NumPy/Cython kernel pair (`kernels`), a
reverse-mode autodiff engine (`autodiff`), an HSIC dependence estimator
(`hsic`), small convolutional classifiers with activation tracing and
channel masks (`network`), the regularized and adversarial training
losses (`losses`), gradient attacks (`attacks`), the training /
evaluation pipeline (`pipeline`), and a CLI (`cli`).
"""

from .autodiff import Tensor, ShapeError, backward, grad, finite_diff_check
from .kernels import backend_name

__all__ = [
    "Tensor",
    "ShapeError",
    "backward",
    "grad",
    "finite_diff_check",
    "backend_name",
]

__version__ = "0.1.0"
