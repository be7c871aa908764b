"""Virtual-time simulator and component library for industrial IoT architectures.

Set ``IIOTSIM_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""

from iiotsim._kernels import backend

__version__ = "0.1.0"

__all__ = ["__version__", "backend"]
