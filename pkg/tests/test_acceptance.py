"""Acceptance criteria, one test each, at the stated tolerances."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from pgreen import (
    LatticeSamples,
    QuadratureSpec,
    asymptotic_leading,
    assemble_bloch,
    band_gradient,
    band_hessian,
    catalog,
    certify,
    compare_to_oracle,
    floquet_transform,
    free_kernel_quadrature,
    full_green,
    newtonian_constant,
    quadratic_residual_exponent,
    ratio_sweep,
    reduced_green,
    unit_ball_volume,
)
from pgreen import green
from pgreen.band import band_value
from pgreen.floquet import uniform_zone_grid
from pgreen.green import fitted_exponent
from pgreen.operator import CATALOG

X = np.array([0.1, 0.2, 0.3])
E1 = np.array([1.0, 0.0, 0.0])


def test_criterion_1_free_operator_exactness(free_op, criterion):
    start = time.perf_counter()
    cert = certify(free_op, 1, M=8, N=2)
    k0_ok = np.linalg.norm(cert.k0) < 1e-10
    h_err = float(np.max(np.abs(cert.H - 2 * np.eye(3))))
    pts = np.random.default_rng(1).uniform(0, 1, (16, 3))
    phi_err = float(np.max(np.abs(cert.phi0.periodic(pts) / cert.phi0.periodic(np.zeros((1, 3)))[0] - 1)))
    lead_err, full_err = 0.0, 0.0
    for R in (5.0, 10.0, 20.0):
        y = X - R * E1
        exact = 1 / (4 * math.pi * R)
        lead_err = max(lead_err, abs(asymptotic_leading(cert, X, y) - exact) / exact)
        full_err = max(full_err, abs(full_green(free_op, cert, X, y).value - exact) / exact)
    coarse = full_green(free_op, certify(free_op, 1, M=8, N=1), X, X - 5 * E1).value
    refine = abs(coarse - full_green(free_op, cert, X, X - 5 * E1).value)
    elapsed = time.perf_counter() - start
    passed = k0_ok and h_err <= 1e-8 and phi_err <= 1e-12 and lead_err <= 1e-12 and full_err <= 0.03 and elapsed < 300
    criterion(
        1,
        passed,
        f"|H-2I|={h_err:.1e} phi_err={phi_err:.1e} lead_rel={lead_err:.1e} full_rel={full_err:.2e} "
        f"N1->N2 delta={refine:.1e} t={elapsed:.0f}s",
    )
    assert passed


def test_criterion_2_newtonian_constant(criterion):
    c3 = abs(newtonian_constant(3) - 1 / (4 * math.pi))
    ball = max(abs(newtonian_constant(d) - 1 / (d * (d - 2) * unit_ball_volume(d))) for d in range(3, 7))
    passed = c3 <= 1e-14 and ball <= 1e-14
    criterion(2, passed, f"|C3-1/4pi|={c3:.1e} max ball identity gap={ball:.1e}")
    assert passed


def test_criterion_3_model_integral(criterion):
    start = time.perf_counter()
    radii = [4.0, 8.0, 16.0, 32.0]
    c3 = newtonian_constant(3)
    free_dev = [abs(free_kernel_quadrature(R * E1).real * R / c3 - 1) for R in radii]
    plain = [free_kernel_quadrature(R * E1) for R in radii]
    bent = [free_kernel_quadrature(R * E1, kappa=0.05) for R in radii]
    correction = [abs(b / p - 1) for b, p in zip(bent, plain)]
    p = fitted_exponent(radii, correction)
    elapsed = time.perf_counter() - start
    passed = max(free_dev) <= 0.02 and p <= -0.7 and elapsed < 600
    criterion(3, passed, f"max g=0 deviation={max(free_dev):.2e} kappa=0.05 exponent={p:.2f} t={elapsed:.0f}s")
    assert passed


def test_criterion_4_edge_certification(schrodinger_n2, schrodinger_n3, schrodinger_oracle, criterion):
    shift, op, cert = schrodinger_n3
    report = compare_to_oracle(cert, schrodinger_oracle, shift)
    h_ref = np.diag(schrodinger_oracle.hessian)
    h_rel = float(np.max(np.abs(np.diag(cert.H) - h_ref) / h_ref))
    off = float(np.max(np.abs(cert.H - np.diag(np.diag(cert.H)))))
    exponent = quadratic_residual_exponent(op, cert)
    refine = float(np.max(np.abs(schrodinger_n2[2].H - cert.H)))
    passed = report.passed and h_rel <= 1e-4 and off <= 1e-4 * h_ref[0] and exponent >= 2.7
    criterion(
        4,
        passed,
        f"oracle fields failing={report.failing} H rel={h_rel:.1e} residual exponent={exponent:.2f} "
        f"N2->N3 |dH|={refine:.1e}",
    )
    assert passed


def test_criterion_5_ratio_sweep(schrodinger_n2, schrodinger_n3, criterion):
    start = time.perf_counter()
    _, op, cert = schrodinger_n2
    sweep = ratio_sweep(op, cert, E1, [6.0, 12.0, 24.0], x=X)
    devs = [row["abs_ratio_minus_1"] for row in sweep.rows]
    _, op3, cert3 = schrodinger_n3
    fine = full_green(op3, cert3, X, X - 6 * E1).value
    refine = abs(fine - sweep.rows[0]["Re(G)"] - 1j * sweep.rows[0]["Im(G)"]) / abs(fine)
    elapsed = time.perf_counter() - start
    passed = sweep.monotone and sweep.exponent <= -0.7 and elapsed < 1800
    criterion(
        5,
        passed,
        f"|G/lead-1|={['%.2e' % v for v in devs]} exponent={sweep.exponent:.2f} "
        f"N2->N3 rel delta at R=6={refine:.1e} t={elapsed:.0f}s",
    )
    assert passed


def test_criterion_6_remainder_decay(free_op, free_cert, criterion):
    diffs = []
    for R in (10.0, 20.0):
        y = X - R * E1
        diffs.append(abs(full_green(free_op, free_cert, X, y).value - reduced_green(free_op, free_cert, X, y).value))
    factor = diffs[0] / diffs[1]
    passed = factor >= 3
    criterion(6, passed, f"|G-G0| at 10,20 = {diffs[0]:.2e}, {diffs[1]:.2e} factor={factor:.2f}")
    assert passed


def _hermiticity(rng):
    worst = 0.0
    for name in sorted(CATALOG):
        op = catalog(name)
        for k in rng.uniform(-np.pi, np.pi, (4, 3)):
            A = assemble_bloch(op, k, 2).entries
            worst = max(worst, np.max(np.abs(A - A.conj().T)) / np.max(np.abs(A)))
    return worst


def _hellmann_feynman(rng):
    worst, h = 0.0, 1e-4
    for name in ("separable_schrodinger", "weighted_laplacian", "magnetic"):
        op = catalog(name)
        for k in rng.uniform(-2.5, 2.5, (2, 3)):
            grad = band_gradient(op, k, 1, 2)
            fd = np.array([(band_value(op, k + h * e, 1, 2) - band_value(op, k - h * e, 1, 2)) / (2 * h) for e in np.eye(3)])
            worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(grad))
    return worst


def _parseval():
    f = lambda x: np.exp(-np.sum((x - 0.3) ** 2, axis=-1) / 0.8)  # noqa: E731
    samples = LatticeSamples.from_function(f, 3, 2, 5)
    mean = np.mean([floquet_transform(samples, k, 2).norm() ** 2 for k in uniform_zone_grid(5, 3)])
    return abs(mean / samples.norm_squared() - 1)


def test_criterion_7_invariant_suites(schrodinger_n2, monkeypatch, criterion):
    rng = np.random.default_rng(7)
    herm = _hermiticity(rng)
    hf = _hellmann_feynman(rng)
    _, op, cert = schrodinger_n2
    hess = float(np.max(np.abs(band_hessian(op, cert.k0, 1, 2, method="fd") - cert.H)) / np.max(np.abs(cert.H)))
    parseval = _parseval()
    gauge = 0.0
    for angle in (0.3, 1.7, 4.0):
        moved = replace(cert, phi0=cert.phi0.with_phase(np.exp(1j * angle)))
        for R in (6.0, 11.0):
            a = asymptotic_leading(cert, X, X - R * E1)
            gauge = max(gauge, abs(asymptotic_leading(moved, X, X - R * E1) - a) / abs(a))
    values = []
    for threads in ("1", "3"):
        monkeypatch.setenv("PGREEN_THREADS", threads)
        green._MODEL_CACHE.clear()
        y = X - 6 * E1
        values.append((reduced_green(op, cert, X, y).value, full_green(op, cert, X, y).value))
    bitwise = values[0] == values[1]
    passed = herm < 1e-12 and hf < 1e-6 and hess < 1e-5 and parseval < 1e-8 and gauge <= 1e-14 and bitwise
    criterion(
        7,
        passed,
        f"hermitian={herm:.1e} HF-FD={hf:.1e} hessian={hess:.1e} parseval={parseval:.1e} "
        f"gauge={gauge:.1e} threads bit-equal={bitwise}",
    )
    assert passed
