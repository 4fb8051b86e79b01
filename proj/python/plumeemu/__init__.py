"""Python bindings for the plumeemu footprint emulator."""

from ._plumeemu import *  # noqa: F401,F403
from ._plumeemu import __version__  # noqa: F401
