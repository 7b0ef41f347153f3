"""Backend selection and the convolution / pooling plumbing built on it.

At import time the compiled extension `_cykernels` is preferred when
present; `IBRAR_KERNELS=numpy` forces the fallback and
`IBRAR_KERNELS=cython` makes a missing extension an error instead of a
silent downgrade.  Everything above the data-movement layer (GEMMs,
padding, layout fixes) is shared, so the two backends differ only in how
patches are gathered and scattered.
"""

import os

import numpy as np

from . import _npkernels

_choice = os.environ.get("IBRAR_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"IBRAR_KERNELS must be 'cython' or 'numpy', got {_choice!r}")

if _choice == "numpy":
    _impl, BACKEND = _npkernels, "numpy"
else:
    try:
        from . import _cykernels as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl, BACKEND = _npkernels, "numpy"


def backend_name():
    return BACKEND


def _contig(a):
    return np.ascontiguousarray(a)


def conv2d_fwd(x, w, b, pad):
    """Stride-1 cross-correlation with symmetric zero padding.

    Returns the output map and the im2col patch matrix, which the caller
    keeps for the weight-gradient GEMM.
    """
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _impl.im2col(_contig(xp), k)
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    y2 = cols @ w.reshape(co, ci * k * k).T
    y = _contig(y2.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    if b is not None:
        y += b[None, :, None, None]
    return y, cols


def conv2d_bwd(gy, x_shape, w, cols, pad, need_x, need_w):
    """Gradients of conv2d_fwd w.r.t. input and weight (bias is a plain sum).

    Either gradient can be skipped; attacks only ever need the input one.
    """
    n, c, h, wd = x_shape
    co, ci, k, _ = w.shape
    gy2 = _contig(gy.transpose(0, 2, 3, 1)).reshape(-1, co)
    gx = gw = None
    if need_w:
        gw = (gy2.T @ cols).reshape(w.shape)
    if need_x:
        gcols = gy2 @ w.reshape(co, ci * k * k)
        gxp = _impl.col2im_add(_contig(gcols), n, c, h + 2 * pad, wd + 2 * pad, k)
        gx = _contig(gxp[:, :, pad:pad + h, pad:pad + wd]) if pad else gxp
    return gx, gw


def maxpool2x2_fwd(x):
    """2x2/stride-2 max-pool; odd trailing rows/columns are dropped."""
    n, c, h, wd = x.shape
    he, we = h - h % 2, wd - wd % 2
    xe = x if (he == h and we == wd) else _contig(x[:, :, :he, :we])
    return _impl.maxpool2x2_fwd(_contig(xe))


def maxpool2x2_bwd(idx, gy, x_shape):
    gxe = _impl.maxpool2x2_bwd(idx, _contig(gy))
    if gxe.shape == x_shape:
        return gxe
    gx = np.zeros(x_shape, dtype=gy.dtype)
    gx[:, :, :gxe.shape[2], :gxe.shape[3]] = gxe
    return gx
