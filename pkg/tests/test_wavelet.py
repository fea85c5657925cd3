"""Single- and multi-level Haar transform: hand oracles and invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haarmix.numerics import GradTape, ShapeMismatchError, Tensor, gradcheck, ops
from haarmix.wavelet import SubbandSet, dhwt_forward, dhwt_inverse, dhwt_multilevel


def naive_dhwt(x: np.ndarray):
    """Independent per-block filter-bank oracle (explicit python loops)."""
    h, w, c = x.shape
    ll = np.zeros((h // 2, w // 2, c))
    lh = np.zeros_like(ll)
    hl = np.zeros_like(ll)
    hh = np.zeros_like(ll)
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                a = x[2 * i, 2 * j, ch]
                b = x[2 * i, 2 * j + 1, ch]
                cc = x[2 * i + 1, 2 * j, ch]
                d = x[2 * i + 1, 2 * j + 1, ch]
                ll[i, j, ch] = (a + b + cc + d) / 2
                lh[i, j, ch] = (a + b - cc - d) / 2
                hl[i, j, ch] = (a - b + cc - d) / 2
                hh[i, j, ch] = (a - b - cc + d) / 2
    return ll, lh, hl, hh


def block(a, b, c, d):
    return Tensor(np.array([[a, b], [c, d]], dtype=np.float32).reshape(2, 2, 1))


class TestForward:
    def test_constant_block_has_no_detail(self):
        s = dhwt_forward(block(1, 1, 1, 1))
        assert s.ll.item() == pytest.approx(2.0)
        assert s.lh.item() == 0.0
        assert s.hl.item() == 0.0
        assert s.hh.item() == 0.0

    def test_hand_block_1234(self):
        s = dhwt_forward(block(1, 2, 3, 4))
        assert s.ll.item() == pytest.approx(5.0)
        assert s.hl.item() == pytest.approx(-1.0)
        assert s.lh.item() == pytest.approx(-2.0)
        assert s.hh.item() == pytest.approx(0.0)

    def test_checkerboard_block(self):
        s = dhwt_forward(block(1, 0, 0, 1))
        assert s.ll.item() == pytest.approx(1.0)
        assert s.lh.item() == 0.0
        assert s.hl.item() == 0.0
        assert s.hh.item() == pytest.approx(1.0)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 8, 3)).astype(np.float32)
        s = dhwt_forward(Tensor(x))
        ll, lh, hl, hh = naive_dhwt(x)
        np.testing.assert_allclose(s.ll.data, ll, atol=1e-5)
        np.testing.assert_allclose(s.lh.data, lh, atol=1e-5)
        np.testing.assert_allclose(s.hl.data, hl, atol=1e-5)
        np.testing.assert_allclose(s.hh.data, hh, atol=1e-5)

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeMismatchError, match="odd"):
            dhwt_forward(Tensor(np.zeros((3, 4, 1), dtype=np.float32)))
        with pytest.raises(ShapeMismatchError, match="odd"):
            dhwt_forward(Tensor(np.zeros((4, 5, 1), dtype=np.float32)))


class TestInverse:
    def test_perfect_reconstruction_random(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((16, 16, 3)).astype(np.float32))
        back = dhwt_inverse(dhwt_forward(x))
        assert np.max(np.abs(back.data - x.data)) <= 1e-5

    def test_zero_subbands_give_zero(self):
        z = Tensor(np.zeros((2, 2, 1), dtype=np.float32))
        out = dhwt_inverse(SubbandSet(ll=z, lh=z, hl=z, hh=z))
        np.testing.assert_array_equal(out.data, np.zeros((4, 4, 1)))

    def test_ll_only_block(self):
        two = Tensor(np.full((1, 1, 1), 2.0, dtype=np.float32))
        zero = Tensor(np.zeros((1, 1, 1), dtype=np.float32))
        out = dhwt_inverse(SubbandSet(ll=two, lh=zero, hl=zero, hh=zero))
        np.testing.assert_allclose(out.data[:, :, 0], [[1.0, 1.0], [1.0, 1.0]])

    def test_mismatched_subband_dims_rejected(self):
        with pytest.raises(ShapeMismatchError):
            SubbandSet(
                ll=Tensor(np.zeros((2, 2, 1), dtype=np.float32)),
                lh=Tensor(np.zeros((2, 2, 1), dtype=np.float32)),
                hl=Tensor(np.zeros((2, 2, 1), dtype=np.float32)),
                hh=Tensor(np.zeros((2, 1, 1), dtype=np.float32)),
            )


class TestMultilevel:
    def test_depth_three_for_8x8(self):
        pyr = dhwt_multilevel(Tensor(np.zeros((8, 8, 2), dtype=np.float32)))
        assert pyr.depth == 3
        assert [lvl.dims[:2] for lvl in pyr.levels] == [(4, 4), (2, 2), (1, 1)]

    def test_depth_one_for_2x2(self):
        assert dhwt_multilevel(Tensor(np.zeros((2, 2, 1), dtype=np.float32))).depth == 1

    def test_depth_one_for_6x4(self):
        # level 2 would need a 3x2 decomposition: odd dim stops the recursion
        pyr = dhwt_multilevel(Tensor(np.zeros((6, 4, 1), dtype=np.float32)))
        assert pyr.depth == 1

    def test_max_depth_cap(self):
        pyr = dhwt_multilevel(Tensor(np.zeros((16, 16, 1), dtype=np.float32)), max_depth=2)
        assert pyr.depth == 2

    def test_odd_level1_rejected(self):
        with pytest.raises(ShapeMismatchError):
            dhwt_multilevel(Tensor(np.zeros((5, 4, 1), dtype=np.float32)))

    def test_constant_input_zero_detail_every_level(self):
        x = Tensor(np.full((16, 16, 2), 3.25, dtype=np.float32))
        pyr = dhwt_multilevel(x)
        for lvl in pyr.levels:
            for name in ("lh", "hl", "hh"):
                np.testing.assert_array_equal(getattr(lvl, name).data, 0.0)


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=1, max_value=16),
        st.integers(min_value=1, max_value=16),
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_reconstruction_and_parseval(self, h2, w2, c, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2 * h2, 2 * w2, c)).astype(np.float32)
        s = dhwt_forward(Tensor(x))
        back = dhwt_inverse(s)
        assert np.max(np.abs(back.data - x.data)) <= 1e-5
        src_energy = float(np.sum(x.astype(np.float64) ** 2))
        sub_energy = sum(
            float(np.sum(getattr(s, n).data.astype(np.float64) ** 2))
            for n in ("ll", "lh", "hl", "hh")
        )
        assert sub_energy == pytest.approx(src_energy, rel=1e-5)

    def test_reconstruction_64bit(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((32, 32, 2))
        back = dhwt_inverse(dhwt_forward(Tensor(x)))
        assert np.max(np.abs(back.data - x)) <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 8, 2)).astype(np.float32)
        y = rng.standard_normal((8, 8, 2)).astype(np.float32)
        alpha, beta = 0.7, -1.3
        s_mix = dhwt_forward(Tensor(alpha * x + beta * y))
        sx, sy = dhwt_forward(Tensor(x)), dhwt_forward(Tensor(y))
        for n in ("ll", "lh", "hl", "hh"):
            np.testing.assert_allclose(
                getattr(s_mix, n).data,
                alpha * getattr(sx, n).data + beta * getattr(sy, n).data,
                atol=1e-5,
            )

    def test_forward_gradcheck(self):
        rng = np.random.default_rng(4)
        r = Tensor(rng.standard_normal((2, 2, 2)).astype(np.float32))

        def f(x):
            s = dhwt_forward(x)
            mixed = ops.add(ops.mul(s.ll, r), ops.mul(s.hh, r))
            return ops.sum_(ops.add(mixed, ops.mul(s.lh, s.hl)))

        x = Tensor(rng.standard_normal((4, 4, 2)).astype(np.float32))
        assert gradcheck(f, x) <= 1e-6

    def test_inverse_gradcheck(self):
        rng = np.random.default_rng(5)
        others = {
            n: Tensor(rng.standard_normal((2, 2, 1)).astype(np.float32))
            for n in ("lh", "hl", "hh")
        }

        def f(ll):
            out = dhwt_inverse(SubbandSet(ll=ll, **others))
            return ops.sum_(ops.mul(out, out))

        ll = Tensor(rng.standard_normal((2, 2, 1)).astype(np.float32))
        assert gradcheck(f, ll) <= 1e-6

    def test_gradient_is_transpose(self):
        # for an orthonormal linear map, backward of forward == inverse
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((4, 4, 1)).astype(np.float32), requires_grad=True)
        weights = {
            n: Tensor(rng.standard_normal((2, 2, 1)).astype(np.float32))
            for n in ("ll", "lh", "hl", "hh")
        }
        with GradTape() as tape:
            s = dhwt_forward(x)
            loss = ops.sum_(
                sum(
                    (ops.mul(getattr(s, n), weights[n]) for n in ("lh", "hl", "hh")),
                    ops.mul(s.ll, weights["ll"]),
                )
            )
        grad = tape.backward(loss, [x])[x]
        expected = dhwt_inverse(SubbandSet(**weights)).data
        np.testing.assert_allclose(grad, expected, atol=1e-6)
