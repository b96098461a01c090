"""Pure-numpy fallbacks for the compiled kernels.

Slower (col2im in particular materialises a 6-d view and loops over the
kernel window) but dependency-free; used when the extension is not built
or when TELKIT_KERNELS=numpy is set.
"""

import numpy as np


def _out_dims(h, w, kh, kw, sh, sw, ph, pw):
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    """Lower (B, C, H, W) into patch rows of shape (B*Ho*Wo, C*kh*kw)."""
    b, c, h, w = x.shape
    ho, wo = _out_dims(h, w, kh, kw, sh, sw, ph, pw)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # one strided slice per kernel offset; cheap for small kernels
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    return np.ascontiguousarray(
        cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, c * kh * kw)
    )


def col2im(cols, x_shape, kh, kw, sh, sw, ph, pw):
    """Adjoint of im2col: scatter-add patch rows back into (B, C, H, W)."""
    b, c, h, w = x_shape
    ho, wo = _out_dims(h, w, kh, kw, sh, sw, ph, pw)
    cols = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, i, j]
    if ph or pw:
        out = out[:, :, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(out)


def maxpool_fwd(x, k):
    """Non-overlapping k-by-k max pool; returns (out, argmax flat plane index)."""
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    win = x[:, :, : ho * k, : wo * k].reshape(b, c, ho, k, wo, k)
    win = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 3, 5)).reshape(b, c, ho, wo, k * k)
    # first-occurrence argmax matches the compiled kernel's scan order
    arg = win.argmax(axis=4)
    out = np.take_along_axis(win, arg[..., None], axis=4)[..., 0]
    rows = (np.arange(ho) * k)[None, None, :, None] + arg // k
    colz = (np.arange(wo) * k)[None, None, None, :] + arg % k
    return np.ascontiguousarray(out), (rows * w + colz).astype(np.int64)


def maxpool_bwd(g, idx, x_shape):
    """Route pooled gradients back to the argmax positions."""
    b, c, h, w = x_shape
    out = np.zeros((b, c, h * w), dtype=g.dtype)
    flat_idx = idx.reshape(b, c, -1)
    # non-overlapping windows make the indices unique within each plane
    np.put_along_axis(out, flat_idx, g.reshape(b, c, -1), axis=2)
    return out.reshape(b, c, h, w)
