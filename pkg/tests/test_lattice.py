import itertools
import struct

import numpy as np
import pytest

from pepsim.lattice import (
    SX,
    SZ,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    OperatorInsertion,
    amplitude,
    build_double_layer,
    from_dense,
    init_uniform,
    lattice_edges,
    load_checkpoint,
    product_state,
    random_lattice,
    save_checkpoint,
)
from pepsim.plan import contract_network

from oracles import basis_configs, brute_amplitude, peps_dense


def test_init_uniform_2x2():
    lat = init_uniform(2, 2)
    assert lat.n_sites == 4
    assert len(lat.bonds) == 4
    assert lat.max_bond_dim() == 1
    assert contract_network(build_double_layer(lat)) == pytest.approx(1.0, abs=1e-12)


def test_init_uniform_3x3_shapes():
    lat = init_uniform(3, 3)
    assert lat.n_sites == 9 and len(lat.bonds) == 12
    assert len(lat[(0, 0)].labels) == 3
    assert len(lat[(0, 1)].labels) == 4
    assert len(lat[(1, 1)].labels) == 5


def test_init_uniform_rejects_small():
    with pytest.raises(ValueError):
        init_uniform(1, 3)


def test_uniform_amplitudes():
    lat = init_uniform(2, 2)
    for cfg in basis_configs(4):
        assert amplitude(lat, cfg) == pytest.approx(0.25, abs=1e-15)


def test_amplitude_orthogonality():
    lat = init_uniform(2, 2)
    t = lat[(0, 1)]
    data = t.data.copy()
    data[..., 0], data[..., 1] = 1.0, 0.0
    lat = lat.replace({(0, 1): type(t)(t.labels, data)})
    assert amplitude(lat, (1, -1, 1, 1)) == 0.0
    assert amplitude(lat, (1, 1, 1, 1)) != 0.0


def test_amplitude_bad_config():
    lat = init_uniform(2, 2)
    with pytest.raises(ValueError):
        amplitude(lat, (1, 1, 1))
    with pytest.raises(ValueError):
        amplitude(lat, (1, 0, 1, 1))


@pytest.mark.parametrize("seed", range(3))
def test_amplitude_matches_bond_enumeration(seed):
    lat = random_lattice(2, 2, 2, np.random.default_rng(seed))
    for cfg in basis_configs(4):
        assert amplitude(lat, cfg) == pytest.approx(brute_amplitude(lat, cfg), rel=1e-12, abs=1e-12)


def test_amplitude_matches_bond_enumeration_2x3():
    lat = random_lattice(2, 3, 2, np.random.default_rng(11))
    for cfg in basis_configs(6)[::7]:
        assert amplitude(lat, cfg) == pytest.approx(brute_amplitude(lat, cfg), rel=1e-11, abs=1e-12)


def test_double_layer_uniform_examples():
    lat = init_uniform(3, 3)
    assert contract_network(build_double_layer(lat, [OperatorInsertion((1, 1), SX)])) == pytest.approx(1.0)
    assert contract_network(build_double_layer(lat, [OperatorInsertion((1, 1), SZ)])) == pytest.approx(0.0, abs=1e-15)


def test_double_layer_fused_dims():
    lat = random_lattice(3, 3, 3, np.random.default_rng(0))
    net = build_double_layer(lat)
    assert net.tensors()[4].shape == (9, 9, 9, 9)


def test_insertion_validation():
    with pytest.raises(ValueError):
        OperatorInsertion((0, 0), np.array([[1.0, 2.0], [3.0, 4.0]]))
    lat = init_uniform(2, 2)
    with pytest.raises(ValueError):
        build_double_layer(lat, [OperatorInsertion((0, 0), SX), OperatorInsertion((0, 0), SZ)])


def _brute_expectation(lat, ops):
    """sum_{s,s'} A(s') <s'|O|s> A(s) over amplitudes from the package's amplitude()."""
    n = lat.n_sites
    configs = basis_configs(n)
    amps = {cfg: amplitude(lat, cfg) for cfg in configs}
    total = 0.0
    for cfg in configs:
        for cfg2 in configs:
            elem = 1.0
            for k in range(n):
                m = ops.get(k, np.eye(2))
                elem *= m[(1 - cfg2[k]) // 2, (1 - cfg[k]) // 2]
                if elem == 0.0:
                    break
            if elem:
                total += amps[cfg2] * elem * amps[cfg]
    return total


@pytest.mark.parametrize("shape", [(2, 2), (2, 3)])
def test_double_layer_consistency(shape):
    h, w = shape
    lat = random_lattice(h, w, 2, np.random.default_rng(h * 10 + w))
    cases = [{}, {0: SX}, {w - 1: SZ}, {0: SZ, h * w - 1: SZ}, {1: SX, w: SZ}]
    for ops in cases:
        ins = [OperatorInsertion(divmod(k, w), op) for k, op in ops.items()]
        got = contract_network(build_double_layer(lat, ins))
        assert got == pytest.approx(_brute_expectation(lat, ops), rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_norm_positive(seed):
    rng = np.random.default_rng(seed)
    lat = random_lattice(3, 3, 2, rng)
    assert contract_network(build_double_layer(lat)) > 0.0


@pytest.mark.parametrize("shape", [(2, 2), (2, 3), (3, 3)])
def test_from_dense_round_trip(shape):
    h, w = shape
    psi = np.random.default_rng(3).standard_normal(2 ** (h * w))
    lat = from_dense(psi, h, w)
    np.testing.assert_allclose(peps_dense(lat), psi, rtol=1e-10, atol=1e-12)


def test_product_state_all_up():
    lat = product_state(2, 3, [1.0, 0.0])
    assert amplitude(lat, (1,) * 6) == 1.0
    assert amplitude(lat, (1, 1, -1, 1, 1, 1)) == 0.0


def test_bond_registry():
    lat = random_lattice(2, 3, 3, np.random.default_rng(0))
    assert set(lat.bonds) == set(lattice_edges(2, 3))
    assert all(d == 3 for _, d in lat.bonds.values())
    assert lat.bond_dim((0, 0), (0, 1)) == 3


# -- checkpoints -----------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    lat = random_lattice(3, 3, 2, np.random.default_rng(1))
    path = tmp_path / "state.peps"
    save_checkpoint(lat, path)
    back = load_checkpoint(path)
    for s in lat.coords():
        assert back[s].labels == lat[s].labels
        assert back[s].data.tobytes() == lat[s].data.tobytes()
    for cfg in basis_configs(9)[::37]:
        assert amplitude(back, cfg) == amplitude(lat, cfg)


def test_checkpoint_header_layout(tmp_path):
    lat = init_uniform(2, 2)
    path = tmp_path / "s.peps"
    save_checkpoint(lat, path)
    buf = path.read_bytes()
    assert buf[:4] == b"PEPS"
    assert struct.unpack("<III", buf[4:16]) == (1, 2, 2)
    # corner (0,0): legs down, right, phys
    assert buf[16] == 3
    assert [struct.unpack("<BI", buf[17 + 5 * i : 22 + 5 * i]) for i in range(3)] == [(1, 1), (3, 1), (4, 2)]
    assert len(buf) == 16 + 4 * (1 + 3 * 5 + 2 * 8)


def test_checkpoint_truncated(tmp_path):
    lat = random_lattice(2, 2, 2, np.random.default_rng(2))
    path = tmp_path / "s.peps"
    save_checkpoint(lat, path)
    buf = path.read_bytes()
    for cut in (2, 10, 20, len(buf) - 1):
        path.write_bytes(buf[:cut])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)


def test_checkpoint_bad_magic_and_version(tmp_path):
    lat = init_uniform(2, 2)
    path = tmp_path / "s.peps"
    save_checkpoint(lat, path)
    buf = path.read_bytes()
    path.write_bytes(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(buf[:4] + struct.pack("<I", 2) + buf[8:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)
    path.write_bytes(buf + b"\0")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    assert not issubclass(CheckpointVersionError, CheckpointTruncatedError)


def test_configs_are_exhaustive():
    assert len(set(basis_configs(4))) == 16
    assert basis_configs(2) == list(itertools.product((1, -1), repeat=2))
