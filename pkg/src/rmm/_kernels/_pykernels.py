"""Pure-numpy reference versions of the hot kernels.

These are used when the compiled extension is unavailable or when
``RMM_PURE_PYTHON=1`` is set. Both backends produce bit-identical results.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_INV2 = 0.5


def im2col(xpad, k, stride, ho, wo):
    """Unfold a padded (N, C, Hp, Wp) array into (C*k*k, N*ho*wo) patch columns."""
    n, c = xpad.shape[:2]
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, hp, wp, k, stride, ho, wo):
    """Scatter-add patch columns back into a padded (N, C, Hp, Wp) array."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    view = cols.reshape(c, k, k, n, ho, wo)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += view[
                :, ki, kj
            ].transpose(1, 0, 2, 3)
    return out


def haar_analysis(x):
    """One orthonormal Haar level on (M, H, W) -> (M, 4, H/2, W/2)."""
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    out = np.empty((x.shape[0], 4, x.shape[1] // 2, x.shape[2] // 2), dtype=np.float64)
    out[:, 0] = (a + b + c + d) * _INV2
    out[:, 1] = (a + b - c - d) * _INV2
    out[:, 2] = (a - b + c - d) * _INV2
    out[:, 3] = (a - b - c + d) * _INV2
    return out


def haar_synthesis(bands):
    """Inverse of :func:`haar_analysis`: (M, 4, h, w) -> (M, 2h, 2w)."""
    ll, lh, hl, hh = bands[:, 0], bands[:, 1], bands[:, 2], bands[:, 3]
    m, _, h, w = bands.shape
    out = np.empty((m, 2 * h, 2 * w), dtype=np.float64)
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) * _INV2
    out[:, 0::2, 1::2] = (ll + lh - hl - hh) * _INV2
    out[:, 1::2, 0::2] = (ll - lh + hl - hh) * _INV2
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) * _INV2
    return out
