"""Hot numeric kernels against naive loop oracles and across backends."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from regiontag import kernels


def naive_conv3x3(x, w, b):
    """Reference 3x3 same-padding convolution as plain Python loops."""
    B, C, H, W = x.shape
    K = w.shape[0]
    y = np.zeros((B, K, H, W))
    for bb in range(B):
        for k in range(K):
            for i in range(H):
                for j in range(W):
                    acc = b[k]
                    for c in range(C):
                        for di in range(3):
                            for dj in range(3):
                                ii, jj = i + di - 1, j + dj - 1
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += x[bb, c, ii, jj] * w[k, c, di, dj]
                    y[bb, k, i, j] = acc
    return y


def naive_avgpool2(x):
    B, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    y = np.zeros((B, C, H2, W2))
    for i in range(H2):
        for j in range(W2):
            y[:, :, i, j] = (
                x[:, :, 2 * i, 2 * j]
                + x[:, :, 2 * i + 1, 2 * j]
                + x[:, :, 2 * i, 2 * j + 1]
                + x[:, :, 2 * i + 1, 2 * j + 1]
            ) / 4.0
    return y


def naive_df_bank(ipd, phase):
    A = phase.shape[0]
    P, T, F = ipd.shape
    out = np.zeros((A, T, F))
    for a in range(A):
        for p in range(P):
            for t in range(T):
                for f in range(F):
                    out[a, t, f] += np.cos(ipd[p, t, f] - phase[a, p, f])
    return out


class TestConvForward:
    def test_matches_naive_loops(self):
        rng = np.random.default_rng(41)
        for _ in range(3):
            x = rng.normal(size=(2, 3, 5, 6))
            w = rng.normal(size=(4, 3, 3, 3))
            b = rng.normal(size=4)
            np.testing.assert_allclose(
                kernels.conv3x3_forward(x, w, b), naive_conv3x3(x, w, b), atol=1e-12
            )

    def test_single_pixel_input(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(1, 2, 1, 1))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        # Only the centre tap sees data when the map is 1x1.
        expected = np.einsum("kc,bc->bk", w[:, :, 1, 1], x[:, :, 0, 0]) + b
        np.testing.assert_allclose(
            kernels.conv3x3_forward(x, w, b)[:, :, 0, 0], expected, atol=1e-12
        )

    def test_identity_kernel(self):
        rng = np.random.default_rng(43)
        x = rng.normal(size=(1, 1, 7, 7))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        y = kernels.conv3x3_forward(x, w, np.zeros(1))
        np.testing.assert_allclose(y, x, atol=1e-14)


class TestConvBackward:
    def test_weight_grad_matches_naive(self):
        rng = np.random.default_rng(44)
        x = rng.normal(size=(2, 3, 5, 4))
        w = rng.normal(size=(2, 3, 3, 3))
        gy = rng.normal(size=(2, 2, 5, 4))
        _, gw, gb = kernels.conv3x3_backward(x, w, gy)
        h = 1e-6
        for idx in [(0, 0, 0, 0), (1, 2, 1, 1), (0, 1, 2, 2), (1, 0, 0, 2)]:
            wp = w.copy()
            wp[idx] += h
            wm = w.copy()
            wm[idx] -= h
            fd = (
                (kernels.conv3x3_forward(x, wp, np.zeros(2)) * gy).sum()
                - (kernels.conv3x3_forward(x, wm, np.zeros(2)) * gy).sum()
            ) / (2 * h)
            assert gw[idx] == pytest.approx(fd, abs=1e-5)

    def test_bias_grad(self):
        rng = np.random.default_rng(45)
        x = rng.normal(size=(2, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        gy = rng.normal(size=(2, 3, 4, 4))
        _, _, gb = kernels.conv3x3_backward(x, w, gy)
        np.testing.assert_allclose(gb, gy.sum(axis=(0, 2, 3)), atol=1e-12)

    def test_input_grad_matches_finite_difference(self):
        rng = np.random.default_rng(46)
        x = rng.normal(size=(1, 2, 4, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        gy = rng.normal(size=(1, 3, 4, 5))
        gx, _, _ = kernels.conv3x3_backward(x, w, gy)
        h = 1e-6
        for idx in [(0, 0, 0, 0), (0, 1, 3, 4), (0, 0, 2, 2), (0, 1, 1, 3)]:
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            fd = (
                (kernels.conv3x3_forward(xp, w, np.zeros(3)) * gy).sum()
                - (kernels.conv3x3_forward(xm, w, np.zeros(3)) * gy).sum()
            ) / (2 * h)
            assert gx[idx] == pytest.approx(fd, abs=1e-5)

    def test_adjoint_identities(self):
        # The map is linear in x for fixed w and vice versa, so
        # <gy, conv(x, w, b)> equals <gx, x> + <gb, b> and <gw, w> + <gb, b>.
        rng = np.random.default_rng(47)
        x = rng.normal(size=(2, 2, 6, 3))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        gy = rng.normal(size=(2, 4, 6, 3))
        gx, gw, gb = kernels.conv3x3_backward(x, w, gy)
        lhs = (gy * kernels.conv3x3_forward(x, w, b)).sum()
        assert lhs == pytest.approx((gx * x).sum() + (gb * b).sum(), rel=1e-10)
        assert lhs == pytest.approx((gw * w).sum() + (gb * b).sum(), rel=1e-10)


class TestAvgPool:
    def test_matches_naive(self):
        rng = np.random.default_rng(48)
        x = rng.normal(size=(2, 3, 6, 8))
        np.testing.assert_allclose(
            kernels.avgpool2_forward(x), naive_avgpool2(x), atol=1e-14
        )

    def test_odd_edges_truncated(self):
        rng = np.random.default_rng(49)
        x = rng.normal(size=(1, 1, 7, 5))
        y = kernels.avgpool2_forward(x)
        assert y.shape == (1, 1, 3, 2)
        np.testing.assert_allclose(y, naive_avgpool2(x[:, :, :6, :4]), atol=1e-14)

    def test_backward_adjoint(self):
        # <gy, pool(x)> == <pool_backward(gy), x>
        rng = np.random.default_rng(50)
        x = rng.normal(size=(2, 2, 5, 7))
        gy = rng.normal(size=(2, 2, 2, 3))
        gx = kernels.avgpool2_backward(gy, 5, 7)
        assert gx.shape == x.shape
        lhs = (gy * kernels.avgpool2_forward(x)).sum()
        rhs = (gx * x).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_backward_constant(self):
        gy = np.ones((1, 1, 2, 2))
        gx = kernels.avgpool2_backward(gy, 4, 4)
        np.testing.assert_allclose(gx, 0.25)


class TestDfBank:
    def test_matches_naive(self):
        rng = np.random.default_rng(51)
        ipd = rng.uniform(-np.pi, np.pi, size=(4, 3, 5))
        phase = rng.uniform(-20.0, 20.0, size=(6, 4, 5))
        np.testing.assert_allclose(
            kernels.df_bank(ipd, phase), naive_df_bank(ipd, phase), atol=1e-12
        )

    def test_perfect_match_hits_pair_count(self):
        phase = np.random.default_rng(52).uniform(-9.0, 9.0, size=(2, 4, 7))
        ipd = phase[1][:, None, :].repeat(3, axis=1)
        out = kernels.df_bank(ipd, phase)
        np.testing.assert_allclose(out[1], 4.0, atol=1e-12)
        assert np.all(out[0] <= 4.0 + 1e-12)


needs_numba = pytest.mark.skipif(
    not kernels.HAS_NUMBA, reason="numba not installed"
)


@needs_numba
class TestBackendEquivalence:
    def test_conv_forward(self):
        rng = np.random.default_rng(53)
        x = rng.normal(size=(2, 5, 12, 17))
        w = rng.normal(size=(7, 5, 3, 3))
        b = rng.normal(size=7)
        np.testing.assert_allclose(
            kernels.conv3x3_forward_numba(x, w, b),
            kernels.conv3x3_forward_numpy(x, w, b),
            atol=1e-11,
        )

    def test_conv_backward(self):
        rng = np.random.default_rng(54)
        x = rng.normal(size=(2, 4, 9, 11))
        w = rng.normal(size=(6, 4, 3, 3))
        gy = rng.normal(size=(2, 6, 9, 11))
        for a, e in zip(
            kernels.conv3x3_backward_numba(x, w, gy),
            kernels.conv3x3_backward_numpy(x, w, gy),
        ):
            np.testing.assert_allclose(a, e, atol=1e-10)

    def test_pool_and_df(self):
        rng = np.random.default_rng(55)
        x = rng.normal(size=(3, 2, 9, 13))
        np.testing.assert_allclose(
            kernels.avgpool2_forward_numba(x),
            kernels.avgpool2_forward_numpy(x),
            atol=1e-14,
        )
        gy = rng.normal(size=(3, 2, 4, 6))
        np.testing.assert_allclose(
            kernels.avgpool2_backward_numba(gy, 9, 13),
            kernels.avgpool2_backward_numpy(gy, 9, 13),
            atol=1e-14,
        )
        ipd = rng.uniform(-np.pi, np.pi, size=(4, 6, 9))
        phase = rng.uniform(-30.0, 30.0, size=(5, 4, 9))
        np.testing.assert_allclose(
            kernels.df_bank_numba(ipd, phase),
            kernels.df_bank_numpy(ipd, phase),
            atol=1e-11,
        )


class TestDispatch:
    def test_flag_selects_numpy(self):
        code = (
            "from regiontag import kernels; "
            "print(kernels.backend_name(), kernels.conv3x3_forward "
            "is kernels.conv3x3_forward_numpy)"
        )
        env = dict(os.environ, REGIONTAG_NUMBA="0")
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.split() == ["numpy", "True"]

    def test_backend_name_known(self):
        assert kernels.backend_name() in ("numba", "numpy")

    def test_warmup_runs(self):
        kernels.warmup()
