"""Surrogate gradients for spiking networks on a small reverse-mode autodiff engine."""
from .autograd import Tape, Var, backward, detach, grad_check
from .surrogate import (
    DEFAULT_SHAPE,
    DoubleGaussian,
    Gaussian,
    Mechanism,
    TanhDeriv,
    bypass,
    dblgaussian,
    gaussian,
    inject,
    parse_shape,
    spike,
    step,
)

__version__ = "0.1.0"
