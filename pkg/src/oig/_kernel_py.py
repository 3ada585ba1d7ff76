"""Pure-numpy blend kernel, used when the compiled extension is absent.

Semantics are identical to the Cython kernel in ``_kernel.pyx``: splats
are processed in the given (depth-sorted) order; per pixel, a
contribution is taken only while transmittance >= 1e-4, alphas below
1/255 are skipped, and alpha is clamped at 0.99.
"""

import numpy as np

BACKEND = "python"

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4


def blend_kernel(mx, my, inv_a, inv_b, inv_c, qcut, opac, gidx,
                 x0, x1, y0, y1, payload, width, height,
                 data, alpha, transm, rec_pix, rec_g, rec_w):
    """Accumulate splats into data/alpha and record per-contribution weights.

    Returns the number of record entries written.
    """
    k = 0
    xs_full = np.arange(width, dtype=np.float64)
    ys_full = np.arange(height, dtype=np.float64)
    for s in range(mx.shape[0]):
        ax0, ax1, ay0, ay1 = x0[s], x1[s], y0[s], y1[s]
        if ax0 >= ax1 or ay0 >= ay1:
            continue
        dx = xs_full[ax0:ax1] - mx[s]
        dy = ys_full[ay0:ay1] - my[s]
        q = (inv_a[s] * dx * dx)[None, :] \
            + (2.0 * inv_b[s]) * dy[:, None] * dx[None, :] \
            + (inv_c[s] * dy * dy)[:, None]
        a = np.minimum(ALPHA_CLAMP, opac[s] * np.exp(-0.5 * q))
        t_patch = transm[ay0:ay1, ax0:ax1]
        live = (q <= qcut[s]) & (a >= ALPHA_SKIP) & (t_patch >= T_STOP)
        if not live.any():
            continue
        w = np.where(live, a * t_patch, 0.0)
        data[ay0:ay1, ax0:ax1, :] += w[:, :, None] * payload[s]
        alpha[ay0:ay1, ax0:ax1] += w
        t_patch[live] *= 1.0 - a[live]
        yy, xx = np.nonzero(live)
        n = yy.shape[0]
        rec_pix[k:k + n] = (yy + ay0) * width + (xx + ax0)
        rec_g[k:k + n] = gidx[s]
        rec_w[k:k + n] = w[yy, xx]
        k += n
    return k
