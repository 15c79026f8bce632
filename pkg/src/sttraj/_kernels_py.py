"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one for one and are used when the compiled
extension is unavailable (or ``STTRAJ_PURE_PYTHON=1`` is set).
"""
import numpy as np


def _windows(x, k):
    pad = (k - 1) // 2
    cin, length, n = x.shape
    xp = np.zeros((cin, length + 2 * pad, n))
    xp[:, pad:pad + length, :] = x
    return np.stack([xp[:, j:j + length, :] for j in range(k)])


def conv_time_forward(x, w, b):
    """Same-length convolution along axis 1 of ``x`` (Cin, L, N)."""
    k = w.shape[2]
    xw = _windows(x, k)
    out = np.einsum("ocj,jcln->oln", w, xw)
    out += b[:, None, None]
    return out


def conv_time_backward(x, w, gout):
    """Gradients of ``conv_time_forward`` w.r.t. x, w and b."""
    k = w.shape[2]
    pad = (k - 1) // 2
    cin, length, n = x.shape
    xw = _windows(x, k)
    gw = np.einsum("oln,jcln->ocj", gout, xw)
    gb = gout.sum(axis=(1, 2))
    gxp = np.zeros((cin, length + 2 * pad, n))
    for j in range(k):
        gxp[:, j:j + length, :] += np.einsum("oc,oln->cln", w[:, :, j], gout)
    gx = gxp[:, pad:pad + length, :].copy()
    return gx, gw, gb


def _pair_terms(a, b, inv_two_s2):
    diff = a[:, None, :] - b[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    kern = np.zeros_like(d2)
    dk = np.zeros_like(d2)
    for c in inv_two_s2:
        e = np.exp(-d2 * c)
        kern += e
        dk += e * (2.0 * c)
    return diff, kern, dk


def mmd_rbf(x, y, bandwidths):
    """Biased squared MMD with a sum of RBF kernels, plus its gradients.

    Returns ``(value, grad_x, grad_y)``.
    """
    m = x.shape[0]
    l = y.shape[0]
    inv = 1.0 / (2.0 * np.asarray(bandwidths, dtype=np.float64) ** 2)
    dxx, kxx, gxx = _pair_terms(x, x, inv)
    dyy, kyy, gyy = _pair_terms(y, y, inv)
    dxy, kxy, gxy = _pair_terms(x, y, inv)
    value = kxx.sum() / (m * m) + kyy.sum() / (l * l) - 2.0 * kxy.sum() / (m * l)
    # d k(a, b) / d a = -sum_s k_s * (a - b) / s^2
    grad_x = (-2.0 / (m * m)) * np.einsum("ij,ijd->id", gxx, dxx)
    grad_x += (2.0 / (m * l)) * np.einsum("ij,ijd->id", gxy, dxy)
    grad_y = (-2.0 / (l * l)) * np.einsum("ij,ijd->id", gyy, dyy)
    grad_y -= (2.0 / (m * l)) * np.einsum("ij,ijd->jd", gxy, dxy)
    return float(value), grad_x, grad_y
