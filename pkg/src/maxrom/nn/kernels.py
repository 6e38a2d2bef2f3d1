"""Plain numpy forward/adjoint kernels shared by the autodiff graph and inference.

Tensors are NCHW float64. A convolution weight has shape
``(c_out, c_in, k_h, k_w)``; a transposed convolution reuses the weight of the
convolution it is the adjoint of, so its shape is ``(c_in_t, c_out_t, k_h, k_w)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgumentError


def conv_output_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def tconv_output_padding(n_in, n_out, k, s, p):
    """Extra rows needed so a transposed conv maps ``n_in`` to ``n_out``."""
    op = n_out - ((n_in - 1) * s - 2 * p + k)
    if not 0 <= op < s:
        raise InvalidArgumentError(
            f"transposed conv cannot map size {n_in} to {n_out} with k={k}, s={s}, p={p}"
        )
    return op


def _windows(x, kh, kw, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, kh, kw)


def conv2d(x, w, b, stride, pad):
    """Cross-correlation ``y[b,o,i,j] = sum_{c,m,n} x_pad[b,c,i s+m,j s+n] w[o,c,m,n] + b[o]``."""
    B, C, H, W = x.shape
    O, Ci, kh, kw = w.shape
    if C != Ci:
        raise InvalidArgumentError(f"conv expects {Ci} input channels, got {C}")
    Ho, Wo = conv_output_size(H, kh, stride, pad), conv_output_size(W, kw, stride, pad)
    if Ho < 1 or Wo < 1:
        raise InvalidArgumentError(f"conv output would be empty for input {H}x{W}")
    win = _windows(x, kh, kw, stride, pad)[:, :, :Ho, :Wo]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, O)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if b is not None:
        y += b[None, :, None, None]
    return y


def conv2d_weight_grad(x, gy, kh, kw, stride, pad):
    """Gradient of ``conv2d`` with respect to its weight."""
    Ho, Wo = gy.shape[2], gy.shape[3]
    win = _windows(x, kh, kw, stride, pad)[:, :, :Ho, :Wo]
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)


def conv2d_adjoint(gy, w, stride, pad, out_hw):
    """Adjoint of ``conv2d`` in its input: maps (B, O, Ho, Wo) to (B, C, H, W)."""
    B, O, Ho, Wo = gy.shape
    _, C, kh, kw = w.shape
    H, W = out_hw
    Hp, Wp = H + 2 * pad, W + 2 * pad
    need_h, need_w = (Ho - 1) * stride + kh, (Wo - 1) * stride + kw
    gx = np.zeros((B, C, max(Hp, need_h), max(Wp, need_w)))
    # per kernel offset: gx[:, :, m + s i, n + s j] += sum_o gy[:, o, i, j] w[o, :, m, n]
    contrib = np.tensordot(gy, w, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
    contrib = contrib.transpose(0, 3, 4, 5, 1, 2)  # (B, C, kh, kw, Ho, Wo)
    for m in range(kh):
        for n in range(kw):
            gx[:, :, m : m + stride * Ho : stride, n : n + stride * Wo : stride] += contrib[:, :, m, n]
    return np.ascontiguousarray(gx[:, :, pad : pad + H, pad : pad + W])


def conv_transpose2d(x, w, b, stride, pad, out_hw):
    """Transposed convolution: the adjoint of ``conv2d`` with weight ``w``.

    ``x`` has ``w.shape[0]`` channels; the output has ``w.shape[1]`` channels
    and spatial size ``out_hw``.
    """
    if x.shape[1] != w.shape[0]:
        raise InvalidArgumentError(f"transposed conv expects {w.shape[0]} channels, got {x.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    for n_in, n_out, k in ((x.shape[2], out_hw[0], kh), (x.shape[3], out_hw[1], kw)):
        if conv_output_size(n_out, k, stride, pad) != n_in:
            raise InvalidArgumentError(
                f"output size {n_out} is not compatible with input {n_in} (k={k}, s={stride}, p={pad})"
            )
    y = conv2d_adjoint(x, w, stride, pad, out_hw)
    if b is not None:
        y += b[None, :, None, None]
    return y


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def dense(x, w, b):
    """``x @ w.T + b`` for a batch ``x`` of shape (B, in) and ``w`` of shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise InvalidArgumentError(f"dense expects {w.shape[1]} inputs, got {x.shape[-1]}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y
