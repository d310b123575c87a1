"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The convolution forward/backward passes and the angle-bank cosine sum
dominate runtime.  Each kernel exists twice: a ``*_numpy`` version built on
vectorised numpy (im2col via stride tricks feeding BLAS) and a ``*_numba``
version compiled with ``@njit``.  Which family backs the public names is
decided once at import time:

* ``REGIONTAG_NUMBA=0`` (or ``false``/``no``/``off``) forces the numpy path;
* otherwise numba is used when it imports cleanly.

Both families produce the same results to floating-point rounding; the test
suite and ``benchmarks/bench_kernels.py`` exercise them side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def _numba_enabled() -> bool:
    flag = os.environ.get("REGIONTAG_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return False
    return HAS_NUMBA


USE_NUMBA = _numba_enabled()


def _pad1(x: np.ndarray) -> np.ndarray:
    """Zero-pad the trailing two axes of a (B, C, H, W) tensor by one."""
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


# ---------------------------------------------------------------------------
# pure-numpy kernels
# ---------------------------------------------------------------------------


def _windows3x3(x: np.ndarray) -> np.ndarray:
    """All 3x3 windows of a zero-padded (B, C, H, W) tensor: (B, C, H, W, 3, 3)."""
    return np.lib.stride_tricks.sliding_window_view(_pad1(x), (3, 3), axis=(2, 3))


def conv3x3_forward_numpy(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution with bias.

    x : (B, C, H, W), w : (K, C, 3, 3), b : (K,) -> (B, K, H, W)
    """
    win = _windows3x3(x)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b[None, :, None, None]


def conv3x3_backward_numpy(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the same-size 3x3 convolution.

    Returns (gx, gw, gb) matching the shapes of (x, w, bias).
    """
    win = _windows3x3(x)
    gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = gy.sum(axis=(0, 2, 3))
    w_rot = w[:, :, ::-1, ::-1]
    gy_win = _windows3x3(gy)
    gx = np.tensordot(gy_win, w_rot, axes=([1, 4, 5], [0, 2, 3]))
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gw, gb


def avgpool2_forward_numpy(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; trailing odd rows/columns drop."""
    B, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    v = x[:, :, : H2 * 2, : W2 * 2].reshape(B, C, H2, 2, W2, 2)
    return v.mean(axis=(3, 5))


def avgpool2_backward_numpy(gy: np.ndarray, h: int, w: int) -> np.ndarray:
    """Gradient of 2x2 average pooling back to an (h, w) input plane."""
    B, C, H2, W2 = gy.shape
    gx = np.zeros((B, C, h, w), dtype=gy.dtype)
    spread = np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) * 0.25
    gx[:, :, : H2 * 2, : W2 * 2] = spread
    return gx


def df_bank_numpy(ipd: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Sum of cos(ipd - phase) over microphone pairs for a bank of angles.

    ipd : (P, T, F) measured phase differences
    phase : (A, P, F) expected phase per angle and pair
    -> (A, T, F)
    """
    A = phase.shape[0]
    T, F = ipd.shape[1], ipd.shape[2]
    out = np.empty((A, T, F), dtype=ipd.dtype)
    for a in range(A):
        out[a] = np.cos(ipd - phase[a][:, None, :]).sum(axis=0)
    return out


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _conv3x3_padded_numba(xp, w, b):
    """Valid 3x3 convolution of an already padded input.

    xp : (B, C, H+2, W+2), w : (K, C, 3, 3), b : (K,) -> (B, K, H, W).
    The inner loop runs over the contiguous last axis so it vectorises.
    """
    B, C, Hp, Wp = xp.shape
    K = w.shape[0]
    H, W = Hp - 2, Wp - 2
    y = np.empty((B, K, H, W), dtype=xp.dtype)
    for bb in range(B):
        for k in range(K):
            acc = np.full((H, W), b[k], dtype=xp.dtype)
            for c in range(C):
                w00 = w[k, c, 0, 0]
                w01 = w[k, c, 0, 1]
                w02 = w[k, c, 0, 2]
                w10 = w[k, c, 1, 0]
                w11 = w[k, c, 1, 1]
                w12 = w[k, c, 1, 2]
                w20 = w[k, c, 2, 0]
                w21 = w[k, c, 2, 1]
                w22 = w[k, c, 2, 2]
                for i in range(H):
                    r0 = xp[bb, c, i]
                    r1 = xp[bb, c, i + 1]
                    r2 = xp[bb, c, i + 2]
                    a = acc[i]
                    for j in range(W):
                        a[j] += (
                            w00 * r0[j]
                            + w01 * r0[j + 1]
                            + w02 * r0[j + 2]
                            + w10 * r1[j]
                            + w11 * r1[j + 1]
                            + w12 * r1[j + 2]
                            + w20 * r2[j]
                            + w21 * r2[j + 1]
                            + w22 * r2[j + 2]
                        )
            y[bb, k] = acc
    return y


@njit(cache=True)
def _conv3x3_gw_numba(xp, gy):
    """Weight gradient: correlate padded input with the output gradient.

    One pass over each (input channel, output channel) image pair feeds
    all nine taps at once.
    """
    B, C, Hp, Wp = xp.shape
    K = gy.shape[1]
    H, W = Hp - 2, Wp - 2
    gw = np.zeros((K, C, 3, 3), dtype=xp.dtype)
    for bb in range(B):
        for k in range(K):
            for c in range(C):
                s00 = 0.0
                s01 = 0.0
                s02 = 0.0
                s10 = 0.0
                s11 = 0.0
                s12 = 0.0
                s20 = 0.0
                s21 = 0.0
                s22 = 0.0
                for i in range(H):
                    r0 = xp[bb, c, i]
                    r1 = xp[bb, c, i + 1]
                    r2 = xp[bb, c, i + 2]
                    gr = gy[bb, k, i]
                    for j in range(W):
                        g = gr[j]
                        s00 += r0[j] * g
                        s01 += r0[j + 1] * g
                        s02 += r0[j + 2] * g
                        s10 += r1[j] * g
                        s11 += r1[j + 1] * g
                        s12 += r1[j + 2] * g
                        s20 += r2[j] * g
                        s21 += r2[j + 1] * g
                        s22 += r2[j + 2] * g
                gw[k, c, 0, 0] += s00
                gw[k, c, 0, 1] += s01
                gw[k, c, 0, 2] += s02
                gw[k, c, 1, 0] += s10
                gw[k, c, 1, 1] += s11
                gw[k, c, 1, 2] += s12
                gw[k, c, 2, 0] += s20
                gw[k, c, 2, 1] += s21
                gw[k, c, 2, 2] += s22
    return gw


@njit(cache=True)
def _avgpool2_forward_numba(x):
    B, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    y = np.empty((B, C, H2, W2), dtype=x.dtype)
    for bi in range(B):
        for c in range(C):
            for i in range(H2):
                for j in range(W2):
                    y[bi, c, i, j] = 0.25 * (
                        x[bi, c, 2 * i, 2 * j]
                        + x[bi, c, 2 * i, 2 * j + 1]
                        + x[bi, c, 2 * i + 1, 2 * j]
                        + x[bi, c, 2 * i + 1, 2 * j + 1]
                    )
    return y


@njit(cache=True)
def _avgpool2_backward_numba(gy, h, w):
    B, C, H2, W2 = gy.shape
    gx = np.zeros((B, C, h, w), dtype=gy.dtype)
    for bi in range(B):
        for c in range(C):
            for i in range(H2):
                for j in range(W2):
                    g = 0.25 * gy[bi, c, i, j]
                    gx[bi, c, 2 * i, 2 * j] = g
                    gx[bi, c, 2 * i, 2 * j + 1] = g
                    gx[bi, c, 2 * i + 1, 2 * j] = g
                    gx[bi, c, 2 * i + 1, 2 * j + 1] = g
    return gx


@njit(cache=True)
def _df_bank_numba(ipd, phase):
    P, T, F = ipd.shape
    A = phase.shape[0]
    out = np.zeros((A, T, F), dtype=ipd.dtype)
    for a in range(A):
        for p in range(P):
            for t in range(T):
                row = ipd[p, t]
                ph = phase[a, p]
                acc = out[a, t]
                for f in range(F):
                    acc[f] += np.cos(row[f] - ph[f])
    return out


def conv3x3_forward_numba(x, w, b):
    return _conv3x3_padded_numba(
        _pad1(np.ascontiguousarray(x)),
        np.ascontiguousarray(w),
        np.ascontiguousarray(b),
    )


def conv3x3_backward_numba(x, w, gy):
    xp = _pad1(np.ascontiguousarray(x))
    gy = np.ascontiguousarray(gy)
    gw = _conv3x3_gw_numba(xp, gy)
    gb = gy.sum(axis=(0, 2, 3))
    # The input gradient is itself a same-size convolution: correlate the
    # padded output gradient with the weights rotated 180 degrees and with
    # their in/out channel axes swapped.
    w_swap = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = _conv3x3_padded_numba(
        _pad1(gy), w_swap, np.zeros(w.shape[1], dtype=w.dtype)
    )
    return gx, gw, gb


def avgpool2_forward_numba(x):
    return _avgpool2_forward_numba(np.ascontiguousarray(x))


def avgpool2_backward_numba(gy, h, w):
    return _avgpool2_backward_numba(np.ascontiguousarray(gy), h, w)


def df_bank_numba(ipd, phase):
    return _df_bank_numba(np.ascontiguousarray(ipd), np.ascontiguousarray(phase))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    conv3x3_forward = conv3x3_forward_numba
    conv3x3_backward = conv3x3_backward_numba
    avgpool2_forward = avgpool2_forward_numba
    avgpool2_backward = avgpool2_backward_numba
    df_bank = df_bank_numba
else:
    conv3x3_forward = conv3x3_forward_numpy
    conv3x3_backward = conv3x3_backward_numpy
    avgpool2_forward = avgpool2_forward_numpy
    avgpool2_backward = avgpool2_backward_numpy
    df_bank = df_bank_numpy


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def warmup() -> None:
    """Trigger JIT compilation on tiny inputs so later calls run hot."""
    if not USE_NUMBA:
        return
    x = np.zeros((1, 1, 4, 4))
    w = np.zeros((1, 1, 3, 3))
    b = np.zeros(1)
    y = conv3x3_forward(x, w, b)
    conv3x3_backward(x, w, y)
    p = avgpool2_forward(x)
    avgpool2_backward(p, 4, 4)
    df_bank(np.zeros((1, 2, 3)), np.zeros((1, 1, 3)))
