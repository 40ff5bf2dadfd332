import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopfb.channel import crandn
from coopfb.codebooks import Codebook, CodebookKind, build_rvq, quantize_direction
from coopfb.errors import SingularityError
from coopfb.precoding import (
    leakage,
    mmse_precoder,
    select_max_slnr,
    select_min_leakage,
    slnr,
    slnr_continuous,
    zf_precoder,
)
from oracles import brute_argmin_leakage


def _unit_cols(A):
    return A / np.linalg.norm(A, axis=0)


def test_zf_orthonormal_input():
    Q, _ = np.linalg.qr(crandn(np.random.default_rng(0), 6, 3))
    np.testing.assert_allclose(zf_precoder(Q).vectors, Q, atol=1e-12)


def test_zf_two_by_two():
    G = _unit_cols(np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex))
    W = zf_precoder(G).vectors
    assert abs(np.vdot(G[:, 1], W[:, 0])) <= 1e-9
    assert abs(np.vdot(G[:, 0], W[:, 1])) <= 1e-9
    # w1 lies along the component of e1 orthogonal to g2, i.e. (1, -1)/sqrt(2) up to phase
    assert abs(np.vdot(W[:, 0], np.array([1, -1]) / np.sqrt(2))) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_t=st.integers(2, 10), data=st.data())
def test_zf_nulls_other_directions(seed, n_t, data):
    k = data.draw(st.integers(1, n_t))
    G = _unit_cols(crandn(np.random.default_rng(seed), n_t, k))
    W = zf_precoder(G).vectors
    cross = np.abs(G.conj().T @ W)
    np.fill_diagonal(cross, 0.0)
    assert cross.max() <= 1e-8
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0, atol=1e-10)


def test_zf_rank_deficient_raises():
    g = _unit_cols(crandn(np.random.default_rng(1), 4, 1))
    with pytest.raises(SingularityError) as err:
        zf_precoder(np.hstack([g, g]))
    assert err.value.condition_number > 1e10


def test_zf_leakage_exact_under_feedback():
    rng = np.random.default_rng(2)
    cbs = [build_rvq(8, 6, rng) for _ in range(3)]
    for _ in range(100):
        H = crandn(rng, 8, 3)
        G = np.column_stack([quantize_direction(H[:, k], cbs[k]).direction for k in range(3)])
        W = zf_precoder(G).vectors
        for k in range(3):
            for j in range(3):
                if j != k:
                    assert abs(np.vdot(G[:, j], W[:, k])) ** 2 <= 1e-16


def test_mmse_single_user():
    h = crandn(np.random.default_rng(3), 5)
    for alpha in (1e-3, 1.0, 1e3):
        w = mmse_precoder(h[:, None], 0, alpha)
        assert abs(np.vdot(w, h / np.linalg.norm(h))) == pytest.approx(1.0, abs=1e-12)


def test_mmse_large_alpha_mrc():
    H = crandn(np.random.default_rng(4), 6, 3)
    w = mmse_precoder(H, 1, 1e9)
    assert abs(np.vdot(w, H[:, 1] / np.linalg.norm(H[:, 1]))) == pytest.approx(1.0, abs=1e-8)


def test_mmse_small_alpha_approaches_zf():
    H = crandn(np.random.default_rng(5), 8, 3)
    w = mmse_precoder(H, 0, 1e-8)
    for j in (1, 2):
        assert abs(np.vdot(H[:, j], w)) <= 1e-4 * np.linalg.norm(H[:, j])
    w_zf = zf_precoder(_unit_cols(H)).vectors[:, 0]
    assert abs(np.vdot(w, w_zf)) == pytest.approx(1.0, abs=1e-6)


def test_slnr_no_interferers():
    h = crandn(np.random.default_rng(6), 4)
    w = slnr_continuous(h, [], 0.5)
    assert abs(np.vdot(w, h / np.linalg.norm(h))) == pytest.approx(1.0)


@pytest.mark.parametrize("k_users", [2, 3, 4])
def test_slnr_collinear_with_mmse(k_users):
    rng = np.random.default_rng(k_users)
    for _ in range(100):
        n_t = int(rng.integers(k_users, 12))
        H = crandn(rng, n_t, k_users)
        alpha = float(rng.uniform(0.01, 5.0))
        k = int(rng.integers(k_users))
        w_m = mmse_precoder(H, k, alpha)
        w_s = slnr_continuous(H[:, k], [H[:, j] for j in range(k_users) if j != k], alpha)
        assert abs(np.vdot(w_m, w_s)) >= 1 - 1e-8


def test_slnr_beats_random_search():
    rng = np.random.default_rng(7)
    H = crandn(rng, 6, 3)
    others = [H[:, 1], H[:, 2]]
    best = slnr(slnr_continuous(H[:, 0], others, 0.3), H[:, 0], others, 0.3)
    cand = crandn(rng, 10_000, 6)
    cand /= np.linalg.norm(cand, axis=1, keepdims=True)
    assert best >= slnr(cand, H[:, 0], others, 0.3).max()


def test_min_leakage_exact_null():
    e = np.eye(2, dtype=complex)
    cb = Codebook(e.copy(), CodebookKind.ISOTROPIC)
    np.testing.assert_array_equal(select_min_leakage(cb, [e[0]]), e[1])


def test_min_leakage_matches_brute_force():
    rng = np.random.default_rng(8)
    cb = build_rvq(8, 6, rng)
    for _ in range(30):
        h = crandn(rng, 8)
        w = select_min_leakage(cb, [h])
        i = brute_argmin_leakage(cb.vectors, [h])
        np.testing.assert_array_equal(w, cb.vectors[i])
        assert leakage(w, [h]) <= leakage(cb.vectors, [h]).min() + 1e-15


def test_min_leakage_ties_lowest_index():
    e = np.eye(3, dtype=complex)
    cb = Codebook(np.stack([e[0], e[2], e[1]]), CodebookKind.ISOTROPIC)
    np.testing.assert_array_equal(select_min_leakage(cb, [e[0]]), e[2])


def test_max_slnr_without_interferers_is_quantization():
    rng = np.random.default_rng(9)
    cb = build_rvq(6, 5, rng)
    for _ in range(20):
        h = crandn(rng, 6)
        np.testing.assert_array_equal(select_max_slnr(cb, h, [], 1.0),
                                      cb.vectors[quantize_direction(h, cb).index])


def test_max_slnr_exhaustive():
    rng = np.random.default_rng(10)
    cb = build_rvq(6, 6, rng)
    H = crandn(rng, 6, 3)
    w = select_max_slnr(cb, H[:, 0], [H[:, 1], H[:, 2]], 0.4)
    vals = slnr(cb.vectors, H[:, 0], [H[:, 1], H[:, 2]], 0.4)
    assert slnr(w, H[:, 0], [H[:, 1], H[:, 2]], 0.4) >= vals.max() - 1e-15


def test_max_slnr_large_alpha_limit():
    rng = np.random.default_rng(11)
    cb = build_rvq(6, 6, rng)
    agree = 0
    for _ in range(50):
        H = crandn(rng, 6, 2)
        a = select_max_slnr(cb, H[:, 0], [H[:, 1]], 1e6)
        b = select_max_slnr(cb, H[:, 0], [], 1.0)
        agree += np.array_equal(a, b)
    assert agree == 50


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_all_outputs_unit_norm(seed):
    rng = np.random.default_rng(seed)
    H = crandn(rng, 5, 3)
    cb = build_rvq(5, 4, rng)
    vecs = [mmse_precoder(H, 0, 0.7), slnr_continuous(H[:, 0], [H[:, 1]], 0.7),
            select_min_leakage(cb, [H[:, 1]]), select_max_slnr(cb, H[:, 0], [H[:, 1]], 0.7)]
    for v in vecs:
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-10)
