import math

import numpy as np
import pytest
import scipy.linalg

from pepsim.ite import (
    IteConfig,
    IteError,
    apply_one_body,
    apply_two_body,
    build_gates,
    ite_run,
    normalize,
    trace_csv,
)
from pepsim.lattice import SX, SZ, amplitude, init_uniform, random_lattice
from pepsim.observables import m_x, norm

from oracles import basis_configs, kron_ground_energy, peps_dense


def test_gates_match_expm():
    cfg = IteConfig(J=0.7, gamma=1.3, tau=1.0, steps=10)
    g = build_gates(cfg)
    np.testing.assert_allclose(g.one_body, scipy.linalg.expm(cfg.gamma * cfg.dtau / 2 * SX), rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(g.two_body, scipy.linalg.expm(cfg.J * cfg.dtau * np.kron(SZ, SZ)), rtol=1e-14, atol=1e-14)


def test_gate_examples():
    g = build_gates(IteConfig(J=0.0, gamma=0.0, tau=1.0, steps=1))
    np.testing.assert_array_equal(g.one_body, np.eye(2))
    np.testing.assert_array_equal(g.two_body, np.eye(4))
    # gamma * dtau / 2 = 1
    g = build_gates(IteConfig(J=1.0, gamma=2.0, tau=1.0, steps=1))
    c, sh = math.cosh(1.0), math.sinh(1.0)
    np.testing.assert_allclose(g.one_body, [[c, sh], [sh, c]], rtol=1e-15)
    np.testing.assert_allclose(g.one_body, [[1.5431, 1.1752], [1.1752, 1.5431]], atol=1e-4)
    assert np.all(np.linalg.eigvalsh(g.one_body) > 0)


def test_config_validation():
    for bad in (dict(steps=0), dict(epsilon=1.0), dict(chi_max=0), dict(energy_eval_period=0)):
        with pytest.raises(ValueError):
            IteConfig(**bad)


def test_one_body_identity_is_bitwise():
    lat = random_lattice(2, 3, 2, np.random.default_rng(0))
    out = apply_one_body(lat, (1, 2), np.eye(2))
    for s in lat.coords():
        assert out[s].data.tobytes() == lat[s].data.tobytes()


def test_one_body_eigenstate():
    lat = init_uniform(3, 3)
    out = apply_one_body(lat, (1, 1), SX)
    np.testing.assert_allclose(out[(1, 1)].data, lat[(1, 1)].data, atol=1e-12)


def test_one_body_amplitude_transform():
    rng = np.random.default_rng(1)
    lat = random_lattice(2, 2, 2, rng)
    gate = rng.standard_normal((2, 2))
    gate = gate + gate.T
    out = apply_one_body(lat, (0, 1), gate)
    for cfg in basis_configs(4):
        expected = 0.0
        for sp in (1, -1):
            c2 = list(cfg)
            c2[1] = sp
            expected += gate[(1 - cfg[1]) // 2, (1 - sp) // 2] * amplitude(lat, c2)
        assert amplitude(out, cfg) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_two_body_identity_preserves_amplitudes():
    lat = random_lattice(2, 3, 2, np.random.default_rng(2))
    out, w = apply_two_body(lat, (0, 1), (1, 1), np.eye(4), 0.0, 64)
    assert w <= 1e-24
    for cfg in basis_configs(6):
        a, b = amplitude(lat, cfg), amplitude(out, cfg)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_two_body_entangles_uniform_state():
    lat = init_uniform(2, 2)
    gate = build_gates(IteConfig(J=1.0, gamma=0.0, tau=0.1, steps=1)).two_body
    out, _ = apply_two_body(lat, (0, 0), (0, 1), gate, 0.0, 4)
    assert out.bond_dim((0, 0), (0, 1)) == 2
    assert out.bonds[((0, 0), (0, 1))][1] == 2
    # explicit rank of the 4x4 updated pair matrix
    pair = (gate @ np.full(4, 0.5)).reshape(2, 2)
    assert np.linalg.matrix_rank(pair) == 2


@pytest.mark.parametrize("bond", [((0, 0), (0, 1)), ((0, 1), (1, 1)), ((1, 0), (1, 1))])
def test_two_body_matches_state_vector(bond):
    rng = np.random.default_rng(3)
    lat = random_lattice(2, 2, 2, rng)
    jdt = 0.37
    gate = np.diag(np.exp(jdt * np.array([1.0, -1.0, -1.0, 1.0])))
    out, _ = apply_two_body(lat, *bond, gate, 0.0, 64)
    psi = peps_dense(lat).reshape((2,) * 4)
    i, j = (r * 2 + c for r, c in bond)
    # exp(J dt sz_i sz_j) is diagonal: multiply each amplitude by exp(jdt * s_i * s_j)
    for idx in np.ndindex(psi.shape):
        psi[idx] *= math.exp(jdt * (1 - 2 * idx[i]) * (1 - 2 * idx[j]))
    np.testing.assert_allclose(peps_dense(out), psi.reshape(-1), rtol=1e-10, atol=1e-12)


def test_two_body_zero_state_errors():
    lat = random_lattice(2, 2, 2, np.random.default_rng(0))
    lat = lat.replace({(0, 0): lat[(0, 0)] * 0.0})
    with pytest.raises(IteError):
        apply_two_body(lat, (0, 0), (0, 1), np.eye(4), 0.0, 2)


def test_normalize_idempotent():
    lat, _ = normalize(init_uniform(3, 3))
    lat2, n = normalize(lat)
    assert n == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(lat2[(0, 0)].data, lat[(0, 0)].data, rtol=1e-12)


def test_normalize_homogeneity():
    lat = init_uniform(2, 2)
    doubled = lat.replace({s: lat[s] * 2.0 for s in lat.coords()})
    out, n = normalize(doubled)
    assert n == pytest.approx(2.0**8, rel=1e-12)
    assert norm(out) == pytest.approx(1.0, abs=1e-12)


def test_normalize_random_3x3():
    out, _ = normalize(random_lattice(3, 3, 2, np.random.default_rng(4)))
    assert abs(norm(out) - 1.0) <= 1e-8


def test_classical_limit_3x3():
    res = ite_run(IteConfig(J=1.0, gamma=0.0, tau=3.0, steps=100, chi_max=2), height=3, width=3)
    assert abs(res.trace[-1].energy - (-12.0)) <= 1e-3 * 12.0


def test_decoupled_limit():
    res = ite_run(IteConfig(J=0.0, gamma=1.0, tau=3.0, steps=100, chi_max=2), height=3, width=3)
    assert abs(res.trace[-1].energy + 9.0) <= 1e-3 * 9.0
    for s in res.lattice.coords():
        assert abs(m_x(res.lattice, s) - 1.0) <= 1e-6


def test_ed_agreement_2x2():
    res = ite_run(IteConfig(J=1.0, gamma=1.0, tau=3.0, steps=200, epsilon=0.01, chi_max=2), height=2, width=2)
    e0 = kron_ground_energy(2, 2, 1.0, 1.0)
    assert abs(res.trace[-1].energy / 4 - e0 / 4) <= 0.02 * abs(e0 / 4)


def _exact_rank_case(gamma):
    res = ite_run(IteConfig(J=1.0, gamma=gamma, tau=6.0, steps=400, epsilon=0.0, chi_max=4), height=2, width=2)
    e0 = kron_ground_energy(2, 2, 1.0, gamma)
    return abs(res.trace[-1].energy - e0) / abs(e0)


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.5, 2.0])
def test_chi4_untruncated_within_half_percent(gamma):
    assert _exact_rank_case(gamma) <= 0.005


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="simple update still truncates at chi_max=4 on the 2x2 loop; error is 0.64%")
def test_chi4_untruncated_within_half_percent_gamma1():
    assert _exact_rank_case(1.0) <= 0.005


@pytest.fixture(scope="module")
def run_2x2():
    return ite_run(IteConfig(J=1.0, gamma=1.5, tau=3.0, steps=60, chi_max=2), height=2, width=2)


def test_trace_cadence(run_2x2):
    steps = [e.step for e in run_2x2.trace]
    assert steps == list(range(2, 61, 2))


def test_trace_final_step_recorded():
    res = ite_run(IteConfig(J=1.0, gamma=1.0, tau=0.5, steps=5, energy_eval_period=2), height=2, width=2)
    assert [e.step for e in res.trace] == [2, 4, 5]


def _monotone(trace, tol=1e-6):
    return all(b.energy <= a.energy + tol * abs(a.energy) for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("J, gamma", [(1.0, 0.0), (0.0, 1.0), (0.5, 0.0)])
def test_energy_monotone_without_truncation(J, gamma):
    res = ite_run(IteConfig(J=J, gamma=gamma, tau=3.0, steps=60, chi_max=2, epsilon=0.0), height=3, width=3)
    assert res.max_discarded <= 1e-20
    assert _monotone(res.trace)


@pytest.mark.xfail(strict=True, reason="truncated simple update overshoots, then relaxes upward to its fixed point")
def test_energy_monotone_with_truncation(run_2x2):
    assert run_2x2.max_discarded > 0
    assert _monotone(run_2x2.trace)


def test_norms_positive_and_bond_cap(run_2x2):
    assert all(math.isfinite(n) and n > 0 for n in run_2x2.norms)
    assert all(e.max_chi <= 2 for e in run_2x2.trace)
    assert abs(norm(run_2x2.lattice) - 1.0) <= 1e-8


def test_variational_bound(run_2x2):
    assert run_2x2.trace[-1].energy >= kron_ground_energy(2, 2, 1.0, 1.5) - 1e-9


def test_early_stop():
    cfg = IteConfig(J=0.0, gamma=1.0, tau=20.0, steps=400, early_stop_tol=1e-8)
    res = ite_run(cfg, height=2, width=2)
    assert res.steps_done < 400
    assert res.trace[-1].step == res.steps_done


def test_trace_csv_header(run_2x2):
    lines = trace_csv(run_2x2.trace).splitlines()
    assert lines[0] == "step,energy,norm,max_chi,elapsed_s"
    assert len(lines) == len(run_2x2.trace) + 1


def test_phase_times(run_2x2):
    t = run_2x2.times
    assert t.operator_application == t.one_body + t.two_body
    assert t.one_body + t.two_body + t.normalize + t.expectation <= t.total + 1e-3
