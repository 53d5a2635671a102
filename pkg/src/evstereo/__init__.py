"""Event-camera stereo disparity estimation with uncertainty-aware refinement."""

from .autograd import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad"]
__version__ = "0.1.0"
