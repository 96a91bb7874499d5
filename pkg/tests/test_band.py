import numpy as np
import pytest

from pgreen import (
    A1Violated,
    A3Violated,
    ConfigError,
    DegenerateBand,
    EdgeCertificate,
    NotIsolatedMinimum,
    band_gradient,
    band_grid,
    band_hessian,
    build_operator,
    catalog,
    certify,
    edge_shift,
    locate_edge,
    quadratic_residual_exponent,
    shift_and_flip,
)
from pgreen.band import band_value, reduce_to_zone
from pgreen.oracle import Chain, ChainSpectrum

from conftest import MATHIEU

PI = np.pi


def _mathieu_1d():
    return build_operator({"d": 1, "c": [{"G": [1], "re": 1.0}, {"G": [-1], "re": 1.0}]})


def test_free_zone_boundary_is_degenerate(free_op):
    k = [PI, 0.0, 0.0]
    assert band_value(free_op, k, 1, 2) == pytest.approx(PI**2, abs=1e-12)
    assert band_value(free_op, k, 2, 2) == pytest.approx(PI**2, abs=1e-12)
    with pytest.raises(DegenerateBand):
        band_gradient(free_op, k, 1, 2)
    with pytest.raises(DegenerateBand):
        band_hessian(free_op, k, 1, 2)


def test_one_dimensional_cutoff_convergence():
    op = _mathieu_1d()
    assert band_value(op, [0.0], 1, 16) == pytest.approx(band_value(op, [0.0], 1, 32), abs=1e-10)


def test_free_grid_minimum_at_origin(free_op):
    surface = band_grid(free_op, 8, 2, 2)
    i = int(np.argmin(surface.energies[:, 0]))
    assert surface.energies[i, 0] == 0
    assert np.all(surface.ks[i] == 0)


def test_separable_band_is_sum_of_chain_bands(schrodinger_op, rng):
    chain = ChainSpectrum(Chain.schrodinger(MATHIEU))
    for k in rng.uniform(-PI, PI, (6, 3)):
        mu, _ = chain.solve(k, 1)
        assert band_value(schrodinger_op, k, 1, 3) == pytest.approx(mu[:, 0].sum() + 3 * chain.bottom, abs=1e-8)


def test_labels_ascending_and_descending_after_flip(schrodinger_op):
    up = band_grid(schrodinger_op, 4, 4, 1)
    assert np.all(np.diff(up.energies, axis=1) >= 0)
    down = band_grid(shift_and_flip(schrodinger_op, 0.0, True), 4, 4, 1)
    assert np.all(np.diff(down.energies, axis=1) <= 0)
    assert np.allclose(down.energies, -up.energies, atol=1e-10)


@pytest.mark.parametrize("name", ["free_laplacian", "separable_schrodinger", "weighted_laplacian"])
def test_time_reversal_symmetry(name, rng):
    op = catalog(name)
    for k in rng.uniform(-PI, PI, (4, 3)):
        assert band_value(op, k, 1, 2) == pytest.approx(band_value(op, -k, 1, 2), abs=1e-10)


def test_band_surface_lipschitz_bound_is_stable(schrodinger_op):
    def lipschitz(M):
        band = band_grid(schrodinger_op, M, 1, 1).band(1)
        h = 2 * PI / M
        return max(np.max(np.abs(np.diff(band, axis=a))) for a in range(3)) / h

    coarse, fine = lipschitz(6), lipschitz(12)
    assert fine <= 1.5 * coarse


@pytest.mark.parametrize("name", ["separable_schrodinger", "weighted_laplacian", "magnetic"])
def test_gradient_matches_finite_differences(name, rng):
    op = catalog(name)
    h = 1e-4
    for k in rng.uniform(-2.5, 2.5, (3, 3)):
        grad = band_gradient(op, k, 1, 2)
        fd = np.array(
            [(band_value(op, k + h * e, 1, 2) - band_value(op, k - h * e, 1, 2)) / (2 * h) for e in np.eye(3)]
        )
        assert np.linalg.norm(grad - fd) <= 1e-6 * np.linalg.norm(grad)


def _catalog_certificates():
    out = {}
    for name in ("free_laplacian", "separable_schrodinger", "weighted_laplacian", "magnetic"):
        op = catalog(name)
        shifted = shift_and_flip(op, edge_shift(op, 1, 6, 2), False)
        out[name] = (shifted, certify(shifted, 1, 6, 2))
    return out


@pytest.fixture(scope="module")
def catalog_certificates():
    return _catalog_certificates()


@pytest.mark.parametrize("name", ["free_laplacian", "separable_schrodinger", "weighted_laplacian", "magnetic"])
def test_hessian_methods_agree(name, catalog_certificates):
    op, cert = catalog_certificates[name]
    fd = band_hessian(op, cert.k0, 1, 2, method="fd")
    assert np.max(np.abs(fd - cert.H)) <= 1e-5 * np.max(np.abs(cert.H))


def test_unknown_hessian_method(free_op):
    with pytest.raises(ConfigError):
        band_hessian(free_op, [0.1, 0, 0], 1, 1, method="spline")


def test_separable_hessian_is_chain_curvature(schrodinger_n2):
    _, _, cert = schrodinger_n2
    curvature = ChainSpectrum(Chain.schrodinger(MATHIEU)).curvature()
    assert np.max(np.abs(cert.H - curvature * np.eye(3))) <= 1e-4 * curvature


def test_shifted_schrodinger_certificate(schrodinger_n2, schrodinger_oracle):
    shift, _, cert = schrodinger_n2
    assert np.all(np.abs(cert.k0) < 1e-10)
    assert abs(cert.lambda0) < 1e-8
    assert cert.grad_norm < 1e-10
    assert abs(shift - schrodinger_oracle.shift) < 1e-8
    assert np.max(np.abs(cert.H - np.diag(np.diag(cert.H)))) < 1e-10
    assert 0 < cert.r0 <= PI / 2
    assert cert.delta > 0


def test_free_certificate_is_exact(free_cert):
    assert np.all(np.abs(free_cert.k0) < 1e-10)
    assert np.allclose(free_cert.H, 2 * np.eye(3), atol=1e-8)
    coeffs = free_cert.phi0.coeffs
    assert coeffs[0] == pytest.approx(1.0) and np.all(coeffs[1:] == 0)


def test_unshifted_operator_violates_a1():
    op = build_operator({"d": 3, "c": [{"G": [0, 0, 0], "re": 3.7}]})
    with pytest.raises(A1Violated, match="3.7"):
        certify(op, 1, 4, 1)


def test_two_inequivalent_minima_rejected():
    # band 2 of the 2D separable operator bottoms out at (pi, 0) and (0, pi)
    op = catalog("separable_schrodinger", d=2)
    surface = band_grid(op, 8, 3, 2)
    with pytest.raises(NotIsolatedMinimum):
        locate_edge(op, surface, 2)
    shifted = shift_and_flip(op, float(surface.energies[:, 1].min()), False)
    with pytest.raises(A3Violated):
        certify(shifted, 2, 8, 2)


def test_quadratic_model_residual_exponent(schrodinger_n2):
    _, op, cert = schrodinger_n2
    assert quadratic_residual_exponent(op, cert) >= 2.7


def test_certificate_round_trip(schrodinger_n2):
    _, _, cert = schrodinger_n2
    again = EdgeCertificate.from_dict(cert.to_dict())
    assert np.array_equal(again.H, cert.H)
    assert np.array_equal(again.phi0.coeffs, cert.phi0.coeffs)
    assert again.to_dict() == cert.to_dict()


def test_reduce_to_zone():
    assert np.allclose(reduce_to_zone([PI + 0.1, -PI - 0.1, 4 * PI]), [-PI + 0.1, PI - 0.1, 0.0])


@pytest.mark.parametrize("kwargs", [{"M": 2}, {"n_b": 1}])
def test_certify_argument_checks(free_op, kwargs):
    args = {"j": 1, "M": 4, "N": 1, **kwargs}
    with pytest.raises(ConfigError):
        certify(free_op, **args)


def test_edge_shift_side_check(free_op):
    with pytest.raises(ConfigError):
        edge_shift(free_op, side="middle")
