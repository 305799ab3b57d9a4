"""Directional unfolding and the four-way 2D scan merge."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evseg.errors import NumericError
from evseg.gradcheck import THRESHOLD, check_ss2d
from evseg.rng import Rng
from evseg.scan import S6Params, init_s6, scan_sequential
from evseg.ss2d import DIRECTIONS, ScanDirection, Ss2dParams, init_ss2d, refold, ss2d, unfold
from evseg.tensor import Tensor

small_maps = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))


def t(data):
    return Tensor(np.asarray(data, dtype=np.float32))


def zero_proj(p: S6Params):
    """Zero the output projection and skip so the branch contributes nothing."""
    n, d = p.w_c.shape
    p.w_c = t(np.zeros((n, d)))
    p.b_c = t(np.zeros(n))
    p.skip_d = t(np.zeros(d))
    return p


def skip_only(p: S6Params):
    """Zero the output projection, keep unit skip: scan becomes identity."""
    n, d = p.w_c.shape
    p.w_c = t(np.zeros((n, d)))
    p.b_c = t(np.zeros(n))
    p.skip_d = t(np.ones(d))
    return p


# ---------------------------------------------------------------------------
# unfold / refold


def test_unfold_worked_2x2_orders():
    x = t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2))
    seq = lambda d: unfold(x, d).data.reshape(-1).tolist()
    assert seq(ScanDirection.ROW_FORWARD) == [1, 2, 3, 4]
    assert seq(ScanDirection.COL_FORWARD) == [1, 3, 2, 4]
    assert seq(ScanDirection.ROW_BACKWARD) == [4, 3, 2, 1]
    assert seq(ScanDirection.COL_BACKWARD) == [4, 2, 3, 1]


def test_unfold_1x1_is_channel_vector():
    x = t(np.arange(3, dtype=np.float32).reshape(3, 1, 1))
    for d in DIRECTIONS:
        out = unfold(x, d)
        assert out.shape == (1, 3)
        np.testing.assert_array_equal(out.data.reshape(-1), [0, 1, 2])


@given(small_maps, st.sampled_from(list(DIRECTIONS)))
@settings(max_examples=40, deadline=None)
def test_refold_unfold_identity(shape, direction):
    c, h, w = shape
    x = t(np.random.default_rng(0).normal(size=(c, h, w)))
    back = refold(unfold(x, direction), direction, h, w)
    np.testing.assert_array_equal(back.data, x.data)


def test_orders_are_distinct_permutations():
    from evseg.ss2d import _orders

    orders = {d: o for d, (o, _) in _orders(3, 4).items()}
    seen = {tuple(v) for v in orders.values()}
    assert len(seen) == 4
    for d in (ScanDirection.ROW_FORWARD, ScanDirection.COL_FORWARD):
        fwd = orders[d]
        bwd = orders[ScanDirection.ROW_BACKWARD if d is ScanDirection.ROW_FORWARD
                     else ScanDirection.COL_BACKWARD]
        np.testing.assert_array_equal(fwd[::-1], bwd)


# ---------------------------------------------------------------------------
# ss2d


def test_ss2d_skip_only_gives_4x():
    rng = Rng(1)
    params = Ss2dParams(*(skip_only(init_s6(3, 2, rng)) for _ in range(4)))
    x = t(np.random.default_rng(1).normal(size=(3, 4, 5)))
    out = ss2d(x, params)
    np.testing.assert_array_equal(out.data, 4.0 * x.data)


@given(small_maps)
@settings(max_examples=20, deadline=None)
def test_ss2d_shape_preservation(shape):
    c, h, w = shape
    rng = Rng(2)
    params = init_ss2d(c, 2, rng)
    x = t(np.random.default_rng(2).normal(size=(c, h, w)))
    assert ss2d(x, params).shape == (c, h, w)


def test_ss2d_1x1_spatial_matches_four_scans():
    rng = Rng(3)
    params = init_ss2d(4, 3, rng)
    x_np = np.random.default_rng(3).normal(size=(4, 1, 1)).astype(np.float32)
    out = ss2d(t(x_np), params)
    seq = Tensor(x_np.reshape(4, 1).T)  # single-step sequence (1, C)
    parts = [scan_sequential(p, seq).data for p in
             (params.row_f, params.row_b, params.col_f, params.col_b)]
    expected = (parts[0] + parts[1]) + (parts[2] + parts[3])
    np.testing.assert_allclose(out.data.reshape(1, 4), expected, atol=1e-6)


def test_ss2d_symmetry_under_transpose_and_rot180():
    # with equal parameters in all four directions, the traversal set is
    # closed under transposition and 180-degree rotation (not under 90-degree
    # rotation), so a fully dihedral-symmetric input keeps those symmetries
    rng = Rng(4)
    shared = init_s6(2, 2, rng)
    params = Ss2dParams(shared, shared, shared, shared)
    base = np.random.default_rng(4).normal(size=(2, 4, 4))
    sym = sum(np.rot90(base, k, (1, 2)) for k in range(4))
    sym = (sym + sym.transpose(0, 2, 1)) / 8.0
    params_eq = Ss2dParams(shared, shared, shared, shared)
    out = ss2d(t(sym), params_eq).data
    np.testing.assert_allclose(out, out.transpose(0, 2, 1), atol=1e-5)
    np.testing.assert_allclose(out, np.rot90(out, 2, (1, 2)), atol=1e-5)


def test_ss2d_row_forward_causality():
    rng = Rng(5)
    params = Ss2dParams(init_s6(2, 2, rng),
                        *(zero_proj(init_s6(2, 2, rng)) for _ in range(3)))
    h, w = 3, 4
    x = np.random.default_rng(5).normal(size=(2, h, w)).astype(np.float32)
    base = ss2d(t(x), params).data.copy()
    x2 = x.copy()
    x2[:, h - 1, w - 1] += 1.0  # last pixel in row-major traversal
    pert = ss2d(t(x2), params).data
    np.testing.assert_array_equal(base[:, : h - 1, :], pert[:, : h - 1, :])
    np.testing.assert_array_equal(base[:, h - 1, : w - 1], pert[:, h - 1, : w - 1])
    assert not np.array_equal(base[:, h - 1, w - 1], pert[:, h - 1, w - 1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ss2d_numeric_error_names_direction():
    p = S6Params(
        a_log=t(np.full((1, 1), -40.0)),
        w_delta=t(np.ones((1, 1))), b_delta=t(np.zeros(1)),
        w_b=t(np.ones((1, 1))), b_b=t(np.zeros(1)),
        w_c=t(np.ones((1, 1))), b_c=t(np.zeros(1)),
        skip_d=t(np.ones(1)),
    )
    params = Ss2dParams(p, p, p, p)
    x = t(np.full((1, 2, 2), 1e30))
    with pytest.raises(NumericError, match="row-major forward"):
        ss2d(x, params)


def test_ss2d_gradcheck():
    report = check_ss2d(seed=0)
    assert report["ss2d"] < THRESHOLD, report
