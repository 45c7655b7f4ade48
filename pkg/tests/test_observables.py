import numpy as np
import pytest

from pepsim.lattice import from_dense, init_uniform, product_state, random_lattice
from pepsim.observables import ContractOptions, c_zz, energy, full_report, m_x, m_z, norm

from oracles import dense_energy, dense_expectations, peps_dense

SHAPES = [(1, 2), (2, 1), (1, 3), (2, 2), (1, 4), (2, 3), (3, 2), (1, 6), (2, 4), (4, 2), (3, 3), (1, 9)]


def test_uniform_state():
    lat = init_uniform(3, 3)
    assert norm(lat) == pytest.approx(1.0)
    for k in range(9):
        assert m_x(lat, k) == pytest.approx(1.0)
        assert m_z(lat, k) == pytest.approx(0.0, abs=1e-15)
    assert c_zz(lat, 0, 1) == pytest.approx(0.0, abs=1e-15)
    assert energy(lat, 2.5, 0.7) == pytest.approx(-0.7 * 9)
    rep = full_report(lat, 1.0, 1.0)
    assert rep.avg_mx == pytest.approx(1.0)
    assert rep.paper_Mx == pytest.approx(2.0)
    assert rep.paper_Czz == pytest.approx(0.0, abs=1e-15)


def test_all_up_product_state():
    lat = product_state(3, 3, [1.0, 0.0])
    assert m_z(lat, (1, 1)) == 1.0 and m_x(lat, (1, 1)) == 0.0
    assert energy(lat, 1.0, 0.0) == pytest.approx(-12.0)
    rep = full_report(lat, 1.0, 0.0)
    assert rep.avg_mx == 0.0
    np.testing.assert_array_equal(rep.mz, 1.0)
    np.testing.assert_array_equal(rep.czz_nn, 0.0)


def test_norm_scales_quadratically():
    lat = random_lattice(2, 3, 2, np.random.default_rng(0))
    scaled = lat.replace({(1, 2): lat[(1, 2)] * 3.0})
    assert norm(scaled) == pytest.approx(9.0 * norm(lat), rel=1e-12)


def test_ghz_2x2():
    psi = np.zeros(16)
    psi[0] = psi[-1] = 2**-0.5
    lat = from_dense(psi, 2, 2)
    for i in range(4):
        for j in range(4):
            if i != j:
                assert c_zz(lat, i, j) == pytest.approx(1.0, abs=1e-12)


def test_c_zz_same_site_rejected():
    with pytest.raises(ValueError):
        c_zz(init_uniform(2, 2), 1, (0, 1))
    with pytest.raises(IndexError):
        m_x(init_uniform(2, 2), 4)


@pytest.mark.parametrize("shape", SHAPES)
def test_matches_dense_oracle(shape):
    h, w = shape
    lat = random_lattice(h, w, 2, np.random.default_rng(h * 7 + w))
    psi = peps_dense(lat)
    nrm, mx, mz, zz, pairs = dense_expectations(psi, h, w)
    rep = full_report(lat, 1.3, 0.6)
    assert rep.norm == pytest.approx(nrm, rel=1e-8)
    np.testing.assert_allclose(rep.mx, mx, atol=1e-8)
    np.testing.assert_allclose(rep.mz, mz, atol=1e-8)
    np.testing.assert_allclose(rep.zz_nn, zz, atol=1e-8)
    mzg = mz.reshape(h, w)
    np.testing.assert_allclose(rep.czz_nn, [z - mzg[a] * mzg[b] for z, (a, b) in zip(zz, pairs)], atol=1e-8)
    assert rep.energy_total == pytest.approx(dense_energy(psi, h, w, 1.3, 0.6), rel=1e-8, abs=1e-8)
    assert energy(lat, 1.3, 0.6) == pytest.approx(rep.energy_total, rel=1e-12, abs=1e-12)


def test_long_range_correlator_matches_oracle():
    lat = random_lattice(3, 3, 2, np.random.default_rng(9))
    psi = peps_dense(lat)
    p = psi**2 / np.sum(psi**2)
    s = np.array([[1 - 2 * ((i >> (8 - k)) & 1) for k in range(9)] for i in range(512)])
    expect = p @ (s[:, 0] * s[:, 8]) - (p @ s[:, 0]) * (p @ s[:, 8])
    assert c_zz(lat, (0, 0), (2, 2)) == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize("opts", [ContractOptions("row"), ContractOptions("quadrant", parallel=True), ContractOptions("row3", True)])
def test_plan_choice_irrelevant(opts):
    lat = random_lattice(3, 4, 2, np.random.default_rng(5))
    a = full_report(lat, 1.0, 1.0)
    b = full_report(lat, 1.0, 1.0, opts)
    assert b.energy_total == pytest.approx(a.energy_total, rel=1e-10)


def test_scale_invariance():
    lat = random_lattice(3, 3, 2, np.random.default_rng(6))
    a = full_report(lat, 1.0, 1.0)
    b = full_report(lat.replace({(2, 1): lat[(2, 1)] * 17.0}), 1.0, 1.0)
    for x, y in ((a.mx, b.mx), (a.mz, b.mz), (a.czz_nn, b.czz_nn)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_bounds(seed):
    rep = full_report(random_lattice(3, 3, 3, np.random.default_rng(seed)), 1.0, 1.0)
    assert np.all(np.abs(rep.mx) <= 1 + 1e-9)
    assert np.all(np.abs(rep.mz) <= 1 + 1e-9)
    assert np.all(np.abs(rep.czz_nn) <= 2 + 1e-9)


def test_contraction_count():
    rep = full_report(init_uniform(4, 4), 1.0, 1.0)
    assert rep.n_contractions == 1 + 16 + 16 + 2 * 4 * 3


def test_energy_per_site():
    rep = full_report(random_lattice(2, 3, 2, np.random.default_rng(8)), 1.0, 1.0)
    assert rep.energy_per_site == rep.energy_total / 6
