"""Numeric kernel dispatch.

The compiled extension ``sao._kernels_c`` is used when it was built and
imports cleanly; otherwise the numpy reference in ``sao._kernels_py`` is
used.  Set ``SAO_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SAO_PURE_PYTHON"):
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py

gaussian_density = _impl.gaussian_density
# numpy's vectorized tanh beats the compiled elementwise loop, so plain GELU
# always uses the reference; only the fused pair kernel gains from fusion.
gelu_forward = _kernels_py.gelu_forward
gelu_backward = _kernels_py.gelu_backward
pair_hidden_forward = _impl.pair_hidden_forward
pair_hidden_backward = _impl.pair_hidden_backward
so3_exp = _impl.so3_exp
so3_exp_grad = _impl.so3_exp_grad

__all__ = [
    "BACKEND",
    "gaussian_density",
    "gelu_backward",
    "gelu_forward",
    "pair_hidden_backward",
    "pair_hidden_forward",
    "so3_exp",
    "so3_exp_grad",
]
