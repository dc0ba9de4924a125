"""regrom: registration-based model order reduction for parameterized PDEs.

The library learns parameter-dependent bijective spatial mappings that make
solution manifolds linearly compressible, builds mapped hyper-reduced
Galerkin ROMs, and applies the same machinery to geometry reduction.
"""

from regrom._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
