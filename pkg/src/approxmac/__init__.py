"""Bit-exact emulation of approximate multipliers in fixed-point CNN inference."""

__version__ = "0.1.0"

from .errors import ApproxMacError  # noqa: E402
from .mulkit import MultiplierSpec, make_multiplier, parse_spec  # noqa: E402
from .nncore import forward, topk  # noqa: E402

__all__ = ["ApproxMacError", "MultiplierSpec", "make_multiplier", "parse_spec", "forward",
           "topk", "__version__"]
