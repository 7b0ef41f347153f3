"""NumPy data-movement kernels: im2col / col2im and 2x2 max-pool.

These are the fallback implementations behind :mod:`ibrar.kernels`; the
Cython module `_cykernels` exports the same four functions with the same
layouts.  Matrix products stay out of this module on purpose, both
backends feed the same BLAS through ``np.dot``.

Layouts
-------
im2col produces ``(N*Ho*Wo, C*K*K)`` rows in output-pixel order, columns
in (channel, ky, kx) order, so a convolution is one fat GEMM against the
``(Co, C*K*K)`` flattened weight.  col2im_add scatters such a matrix back
onto the padded input, accumulating overlaps.  Max-pool indices record
the winning position within each 2x2 window in row-major window order
(0..3), first winner on ties.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, k):
    """Patch matrix of a padded batch  ``(N,C,Hp,Wp) -> (N*Ho*Wo, C*K*K)``."""
    n, c, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    sn, sc, sh, sw = xp.strides
    view = as_strided(xp, (n, ho, wo, c, k, k), (sn, sh, sw, sc, sh, sw))
    return np.ascontiguousarray(view).reshape(n * ho * wo, c * k * k)


def col2im_add(cols, n, c, hp, wp, k):
    """Scatter-add patch rows back onto a zeroed padded input."""
    ho, wo = hp - k + 1, wp - k + 1
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    g = cols.reshape(n, ho, wo, c, k, k)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + ho, kx:kx + wo] += g[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return xp


def maxpool2x2_fwd(x):
    """2x2/stride-2 max-pool on even spatial dims.

    Returns the pooled map and a uint8 index array holding each window's
    argmax in row-major window order (ties -> first).
    """
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, idx


def maxpool2x2_bwd(idx, gy):
    """Route pooled gradients back to the winning input positions."""
    n, c, ho, wo = gy.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=gy.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), gy[..., None], axis=-1)
    return win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
