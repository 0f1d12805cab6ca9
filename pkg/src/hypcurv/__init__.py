"""Curvature measures of convex bodies in hyperbolic space."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("hypcurv")
except PackageNotFoundError:  # running from a source tree without install
    __version__ = "0.0.0"
