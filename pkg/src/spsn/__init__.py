"""Superpixel prototype sampling network for RGB-D salient object detection."""

from .autodiff import Tensor, grad_check
from .config import Config
from .model import SPSNModel, forward_full

__all__ = ["Tensor", "grad_check", "Config", "SPSNModel", "forward_full"]
__version__ = "0.1.0"
