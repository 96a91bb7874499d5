import json
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgreen import (
    ConfigError,
    LatticeSamples,
    PlaneWaveBasis,
    TorusFunction,
    assemble_bloch,
    assemble_d2k,
    assemble_dk,
    catalog,
    floquet_transform,
    inverse_floquet,
)
from pgreen.floquet import assembler, uniform_zone_grid
from pgreen.operator import CATALOG, shift_and_flip

quasi = st.floats(min_value=-np.pi, max_value=np.pi, allow_nan=False)
kvec = st.tuples(quasi, quasi, quasi).map(np.array)


def _rel_asymmetry(A):
    return np.max(np.abs(A - A.conj().T)) / max(np.max(np.abs(A)), 1e-300)


def test_basis_order_starts_at_zero_frequency():
    basis = PlaneWaveBasis(3, 2)
    assert basis.size == 125
    assert basis.indices[0].tolist() == [0, 0, 0]
    assert basis.indices[1].tolist() == [0, 0, 1]
    assert basis.indices[-1].tolist() == [-1, -1, -1]
    assert len({tuple(i) for i in basis.indices.tolist()}) == basis.size


def test_free_zero_mode_entry():
    assert assemble_bloch(catalog("free_laplacian"), [0, 0, 0], 2).entries[0, 0] == 0


@pytest.mark.parametrize("name", sorted(CATALOG))
@given(k=kvec)
def test_fibers_are_hermitian(name, k):
    op = catalog(name)
    assert _rel_asymmetry(assemble_bloch(op, k, 2).entries) < 1e-12


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_batched_fibers_match_single(name, rng):
    op = shift_and_flip(catalog(name), 0.7, True)
    ks = rng.uniform(-np.pi, np.pi, (5, 3))
    asm = assembler(op, 2)
    batch = asm.matrices(ks)
    for k, A in zip(ks, batch):
        single = asm.matrix(k).entries
        assert np.max(np.abs(A - single)) <= 1e-12 * np.max(np.abs(single))
        assert _rel_asymmetry(A) < 1e-12


def test_free_first_derivative_is_diagonal():
    k = np.array([0.3, -1.1, 2.0])
    dk = assemble_dk(catalog("free_laplacian"), k, 2, 1)
    G = PlaneWaveBasis(3, 2).frequencies
    assert np.allclose(dk.entries, np.diag(2 * (k + G)[:, 1]), atol=1e-13)


@pytest.mark.parametrize("name", sorted(CATALOG))
@pytest.mark.parametrize("m", range(3))
def test_first_derivative_matches_central_difference(name, m):
    op = catalog(name)
    k = np.array([0.4, -0.9, 1.3])
    h = 1e-5
    e = np.zeros(3)
    e[m] = h
    fd = (assemble_bloch(op, k + e, 2).entries - assemble_bloch(op, k - e, 2).entries) / (2 * h)
    exact = assemble_dk(op, k, 2, m).entries
    assert np.max(np.abs(fd - exact)) <= 1e-9 * np.max(np.abs(exact))


def test_band_difference_quotient_is_second_order():
    # band values are not quadratic in k, so their difference quotient is only O(h^2)
    op = catalog("weighted_laplacian")
    k = np.array([0.4, -0.9, 1.3])
    lam = lambda kk: np.linalg.eigvalsh(assemble_bloch(op, kk, 1).entries)[0]  # noqa: E731
    dk = assemble_dk(op, k, 1, 0).entries
    w, v = np.linalg.eigh(assemble_bloch(op, k, 1).entries)
    exact = np.real(np.vdot(v[:, 0], dk @ v[:, 0]))
    errs = []
    for h in (1e-2, 5e-3):
        e = np.array([h, 0, 0])
        errs.append(abs((lam(k + e) - lam(k - e)) / (2 * h) - exact))
    assert errs[1] < errs[0] / 3


def test_free_second_derivatives():
    op = catalog("free_laplacian")
    assert np.allclose(assemble_d2k(op, 2, 1, 1).entries, 2 * np.eye(125))
    assert np.allclose(assemble_d2k(op, 2, 0, 2).entries, 0)


def test_weighted_metric_entries_match_direct_convolution():
    # L(0)_{n n'} = sum_{jl} (2 pi n_j) a_hat_jl(n - n') (2 pi n'_l) with a = (2 + cos 2 pi x1) I
    op = catalog("weighted_laplacian")
    basis = PlaneWaveBasis(3, 1)
    A = assemble_bloch(op, [0, 0, 0], 1).entries

    def a_hat(diff):
        if diff == (0, 0, 0):
            return 2.0
        if diff in ((1, 0, 0), (-1, 0, 0)):
            return 0.5
        return 0.0

    for p, q in itertools.product(range(basis.size), repeat=2):
        n, n2 = basis.indices[p], basis.indices[q]
        expected = a_hat(tuple((n - n2).tolist())) * (2 * np.pi) ** 2 * float(n @ n2)
        assert A[p, q] == pytest.approx(expected, abs=1e-11)


def test_magnetic_vector_potential_entries():
    # b = beta sin(2 pi x2) e1 couples n to n +- e2 through 2 (k + G)_1-type terms
    op = catalog("magnetic", beta=0.5)
    k = np.array([0.2, 0.0, 0.0])
    basis = PlaneWaveBasis(3, 1)
    A = assemble_bloch(op, k, 1).entries
    p = 0
    q = basis.indices.tolist().index([0, 1, 0])
    # <e_0 | (D1 + b1)^2 | e_{e2}> = b_hat(-e2) (k1) + k1 b_hat(-e2) = 2 k1 b_hat(-e2)
    b_hat = -0.5 / 2j
    assert A[p, q] == pytest.approx(2 * k[0] * b_hat, abs=1e-13)


@pytest.mark.parametrize("name", ["separable_schrodinger", "weighted_laplacian"])
def test_eigenvalues_decrease_with_cutoff(name):
    op = catalog(name)
    k = np.array([0.5, -0.3, 1.1])
    spectra = [np.linalg.eigvalsh(assemble_bloch(op, k, N).entries)[:4] for N in (1, 2, 3)]
    for coarse, fine in zip(spectra, spectra[1:]):
        assert np.all(fine <= coarse + 1e-10)
    assert abs(spectra[2][0] - spectra[1][0]) < abs(spectra[1][0] - spectra[0][0])


def test_eigenvalue_cutoff_convergence_is_fast():
    op = catalog("separable_schrodinger")
    k = np.array([0.5, -0.3, 1.1])
    lam = [np.linalg.eigvalsh(assemble_bloch(op, k, N).entries)[0] for N in (1, 2, 3)]
    assert abs(lam[2] - lam[1]) < 1e-3 * abs(lam[1] - lam[0])


@pytest.mark.parametrize("m", range(3))
def test_quasimomentum_periodicity_after_recentering(m):
    op = catalog("magnetic")
    k = np.array([0.3, -0.8, 2.4])
    e = np.zeros(3, dtype=int)
    e[m] = 1
    a = np.linalg.eigvalsh(assemble_bloch(op, k, 2).entries)
    b = np.linalg.eigvalsh(assemble_bloch(op, k + 2 * np.pi * e, 2, center=-e).entries)
    assert np.allclose(a, b, atol=1e-8)


def test_matrix_dump_is_row_major():
    bm = assemble_bloch(catalog("separable_schrodinger"), [0.1, 0.2, 0.3], 1)
    data = json.loads(bm.to_json())
    flat = np.array([complex(re, im) for re, im in data["entries"]])
    assert np.array_equal(flat.reshape(27, 27), bm.entries)
    assert data["indices"][0] == [0, 0, 0]


def _gaussian_samples(gamma_max=2, n=5):
    f = lambda x: np.exp(-np.sum((x - 0.3) ** 2, axis=-1) / 0.8)  # noqa: E731
    return LatticeSamples.from_function(f, 3, gamma_max, n)


def test_parseval_on_zone_grid():
    samples = _gaussian_samples()
    ks = uniform_zone_grid(5, 3)
    fiber_norms = [floquet_transform(samples, k, 2).norm() ** 2 for k in ks]
    assert np.mean(fiber_norms) == pytest.approx(samples.norm_squared(), rel=1e-8)


def test_transform_inverts_on_sample_points():
    samples = _gaussian_samples()
    ks = uniform_zone_grid(5, 3)
    fibers = [floquet_transform(samples, k, 2) for k in ks]
    x = np.array([0.2, 0.4, 0.6])  # a node of the 5-point grid
    j = tuple(int(round(v * 5)) for v in x)
    for gamma in ([0, 0, 0], [1, -1, 2], [-2, 0, 1]):
        cell = int(np.flatnonzero(np.all(samples.cells == gamma, axis=1))[0])
        assert inverse_floquet(fibers, x, gamma) == pytest.approx(samples.values[cell][j], abs=1e-12)


def test_cell_supported_function_has_constant_transform():
    n = 5
    values = np.zeros((27, n, n, n), dtype=complex)
    cells = np.array(list(itertools.product((-1, 0, 1), repeat=3)))
    center = int(np.flatnonzero(np.all(cells == 0, axis=1))[0])
    u = np.random.default_rng(3).standard_normal((n, n, n))
    values[center] = u
    samples = LatticeSamples(cells, values)
    ks = uniform_zone_grid(3, 3)
    fibers = [floquet_transform(samples, k, 2) for k in ks]
    x = np.array([0.4, 0.0, 0.8])
    idx = (2, 0, 4)
    for f in fibers:
        assert f(x) == pytest.approx(u[idx], abs=1e-12)
    assert inverse_floquet(fibers, x, [0, 0, 0]) == pytest.approx(u[idx], abs=1e-12)
    assert abs(inverse_floquet(fibers, x, [1, 0, 0])) < 1e-12


def test_phase_factor_translates():
    samples = _gaussian_samples()
    ks = uniform_zone_grid(5, 3)
    gamma0 = np.array([1, 0, -1])
    fibers = [floquet_transform(samples, k, 2) for k in ks]
    moved = [TorusFunction(f.basis, f.coeffs * np.exp(-1j * (k @ gamma0)), f.k) for f, k in zip(fibers, ks)]
    x = np.array([0.2, 0.4, 0.6])
    for gamma in ([0, 0, 0], [1, 1, 0]):
        assert inverse_floquet(moved, x, gamma) == pytest.approx(
            inverse_floquet(fibers, x, np.subtract(gamma, gamma0)), abs=1e-13
        )


def test_transform_needs_enough_samples():
    with pytest.raises(ConfigError):
        floquet_transform(_gaussian_samples(n=3), [0, 0, 0], 2)
