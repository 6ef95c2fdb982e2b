"""Kernel backend selection.

The compiled extension is used when it imports; set ``DOCNMT_KERNELS=python``
to force the numpy fallback (benchmarks and equivalence tests do this).
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DOCNMT_KERNELS", "auto").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
xent_fwd = _impl.xent_fwd
xent_bwd = _impl.xent_bwd
