"""Green's functions at a spectral edge and their leading asymptotics.

Two kernels are evaluated by quadrature over the Brillouin zone:

* the reduced kernel ``G0(x, y) = (2 pi)^-d int e^{i k.(x-y)} eta(k) rho(k) / lambda(k) dk``
  where ``rho = phi(k, x) conj(phi(k, y)) / |phi(k)|^2`` comes from the band
  branch through the edge and ``eta`` is a radial cutoff around ``k0``;
* the full kernel ``G(x, y)`` of ``L^-1``.

Both use a ball quadrature in spherical coordinates centered at ``k0``: the
factor ``s^(d-1)`` of the volume element cancels the ``s^-2`` growth of
``1/lambda``.  Band data inside the ball come from tensor Chebyshev
interpolants of the phase-fixed branch.

The full kernel is split as ``G = G_ref + G_w + G_rest``:

* ``G_ref`` is a closed-form kernel built on
  ``(D + b_mean).a_mean (D + b_mean) + m^2`` and expanded to low order in the
  remaining mean potential.  It is subtracted fiberwise so the plane-wave
  truncation of the dominant high-frequency part cancels;
* ``G_w`` integrates ``exp(-lambda/tau) rho / lambda`` over the ball, which
  carries the whole singularity at ``k0``;
* ``G_rest`` is the zone average of what remains of the fiber resolvent
  kernel.  That remainder is analytic and periodic, so a shifted trapezoid
  rule converges geometrically; its aliasing error is governed by the
  Gaussian decay that the window imposes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as spfft
from scipy import special

from .band import DEGENERACY_TOL, EdgeCertificate, reduce_to_zone, solve_fiber
from .errors import (
    BranchLost,
    ConfigError,
    DimensionTooSmall,
    LeadingTermNearZero,
    QuadratureNotConverged,
    SingularPoint,
    TailTruncationDominates,
)
from .floquet import TorusFunction, assembler
from .operator import PeriodicOperator, field_product, field_sum
from .parallel import chunks, pmap
from .quadrature import dyadic_breaks, frame, panel_rule, sphere_rule

# ---------------------------------------------------------------------------
# closed forms


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def newtonian_constant(d: int) -> float:
    """``Gamma(d/2 - 1) / (4 pi^(d/2))``, the Newtonian kernel prefactor."""
    if d < 3:
        raise DimensionTooSmall(f"the Newtonian constant needs d >= 3, got {d}")
    return math.gamma(d / 2 - 1) / (4 * math.pi ** (d / 2))


def newtonian_potential(x: Sequence[float]) -> float:
    """``1 / (d (d-2) omega_d |x|^(d-2))`` with ``omega_d`` the unit-ball volume."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    if d < 3:
        raise DimensionTooSmall(f"the Newtonian potential needs d >= 3, got {d}")
    r = float(np.linalg.norm(x))
    if r == 0:
        raise SingularPoint("the Newtonian potential is singular at the origin")
    return 1.0 / (d * (d - 2) * unit_ball_volume(d) * r ** (d - 2))


def _require_d3(d: int) -> None:
    if d < 3:
        raise DimensionTooSmall(f"edge asymptotics need d >= 3, got d={d}")


def asymptotic_leading(cert: EdgeCertificate, x: Sequence[float], y: Sequence[float]) -> complex:
    """Closed-form leading term of ``G(x, y)`` for large ``|x - y|``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = cert.d
    _require_d3(d)
    r = x - y
    if not np.any(r):
        raise SingularPoint("leading term is singular at x = y")
    chol = np.linalg.cholesky(cert.H)
    sqrt_det = float(np.prod(np.diag(chol)))
    z = np.linalg.solve(chol, r)
    dist = float(np.sqrt(z @ z))
    phi = cert.phi0.periodic(np.stack([x, y]))
    density = phi[0] * np.conj(phi[1]) / cert.phi0_norm**2
    prefactor = math.pi ** (-d / 2) * math.gamma((d - 2) / 2) / (2 * sqrt_det * dist ** (d - 2))
    return complex(prefactor * np.exp(1j * (r @ cert.k0)) * density)


class AsymptoticModel:
    """Leading-term evaluator bound to one certificate."""

    def __init__(self, cert: EdgeCertificate) -> None:
        _require_d3(cert.d)
        self.certificate = cert

    def __call__(self, x: Sequence[float], y: Sequence[float]) -> complex:
        return asymptotic_leading(self.certificate, x, y)


# ---------------------------------------------------------------------------
# cutoff and branch


def eta_profile(s: np.ndarray, radius: float) -> np.ndarray:
    """Radial bump: 1 up to ``radius/2``, ``exp(1 - 1/(1 - t^2))`` with
    ``t = 2 s/radius - 1`` on the outer half, 0 beyond ``radius``."""
    s = np.asarray(s, dtype=float)
    t = 2 * s / radius - 1
    out = np.zeros_like(t)
    out[t <= 0] = 1.0
    mid = (t > 0) & (t < 1)
    out[mid] = np.exp(1 - 1 / (1 - t[mid] ** 2))
    return out


def eta_cutoff(cert: EdgeCertificate, k: Sequence[float]) -> float:
    dist = float(np.linalg.norm(np.asarray(k, dtype=float) - cert.k0))
    return float(eta_profile(np.array([dist]), cert.r0)[0])


def _branch_at(op: PeriodicOperator, cert: EdgeCertificate, k: np.ndarray) -> tuple[float, np.ndarray]:
    asm = assembler(op, cert.N)
    vals, vecs = solve_fiber(asm.matrix(k), cert.j + 1, check=False)
    j = cert.j
    gaps = [abs(vals[j - 1] - vals[i]) for i in (j - 2, j) if 0 <= i < len(vals)]
    if gaps and min(gaps) < DEGENERACY_TOL:
        raise BranchLost(f"band {j} meets a neighbor at k={np.asarray(k).tolist()}")
    v = vecs[:, j - 1]
    overlap = np.vdot(cert.phi0.coeffs, v)
    if abs(overlap) < 0.25 * cert.phi0_norm:
        raise BranchLost(f"branch overlap with phi0 dropped to {abs(overlap):.3g} at k={np.asarray(k).tolist()}")
    return float(vals[j - 1]), v * (np.conj(overlap) / abs(overlap))


def bloch_branch(op: PeriodicOperator, cert: EdgeCertificate, k: Sequence[float]) -> tuple[float, TorusFunction]:
    """Eigenpair of band ``cert.j`` at ``k`` with ``<phi0, phi(k)>`` real positive."""
    k = np.asarray(k, dtype=float)
    if np.linalg.norm(k - cert.k0) > cert.r0 * (1 + 1e-12):
        raise ConfigError(f"k is outside the cutoff ball of radius {cert.r0}")
    lam, v = _branch_at(op, cert, k)
    return lam, TorusFunction(cert.phi0.basis, v, k)


# ---------------------------------------------------------------------------
# quadrature controls and results


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls of the zone quadratures.

    ``order`` is the base Gauss-Legendre order per radial panel and in the
    polar variable, ``angular`` the base number of azimuthal nodes and
    ``depth`` the number of dyadic radial panels toward ``k0``.  Orders grow
    with the oscillation ``|x - y|`` automatically; each refinement level
    multiplies them by 1.5 and deepens the grading by one.  ``cheb`` is the
    number of Chebyshev nodes per axis for the branch interpolant and
    ``far_grid`` the trapezoid size per axis for the smooth remainder
    (chosen from the aliasing bound when ``None``).  ``window`` is
    ``-log`` of the singular window at the cutoff radius.
    """

    order: int = 20
    depth: int = 3
    angular: int = 20
    cheb: int = 16
    target: float = 1e-8
    eps: float = 0.0
    max_refine: int = 3
    far_grid: int | None = None
    window: float = 24.0
    extrapolate: bool = False

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.eps == 0 and self.depth < 1:
            raise ConfigError("refinement depth must be >= 1 when eps = 0")
        if self.order < 2 or self.angular < 2 or self.cheb < 4:
            raise ConfigError("quadrature orders are too small")
        if self.target <= 0:
            raise ConfigError("target error must be positive")
        if self.far_grid is not None and (self.far_grid < 4 or self.far_grid % 2):
            raise ConfigError("far_grid must be an even integer >= 4")

    def with_(self, **changes) -> "QuadratureSpec":
        return QuadratureSpec(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GreenEvaluation:
    x: np.ndarray
    y: np.ndarray
    value: complex
    est_error: float
    which: str
    quad: QuadratureSpec
    leading: complex | None = None
    details: dict = field(default_factory=dict)

    @property
    def ratio(self) -> complex | None:
        return None if self.leading is None else self.value / self.leading

    def to_dict(self) -> dict:
        out = {
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "value": [self.value.real, self.value.imag],
            "est_error": self.est_error,
            "which": self.which,
            "quad": self.quad.to_dict(),
            "details": self.details,
        }
        if self.leading is not None:
            out["leading"] = [self.leading.real, self.leading.imag]
        return out


# ---------------------------------------------------------------------------
# branch interpolation


def _cheb_nodes(n: int) -> np.ndarray:
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)


def _cheb_coefficients(values: np.ndarray) -> np.ndarray:
    """Tensor Chebyshev coefficients from values at first-kind nodes."""
    d = values.ndim
    n = values.shape[0]
    c = spfft.dctn(values, type=2, axes=tuple(range(d))) / n**d
    for axis in range(d):
        idx = [slice(None)] * d
        idx[axis] = 0
        c[tuple(idx)] *= 0.5
    return c


def _cheb_basis(u: np.ndarray, n: int) -> np.ndarray:
    """``T_0..T_{n-1}`` at points ``u`` in [-1, 1]; shape ``(len(u), n)``."""
    u = np.clip(u, -1.0, 1.0)
    return np.cos(np.arange(n)[None, :] * np.arccos(u)[:, None])


def _tail_ratio(c: np.ndarray) -> float:
    """Size of the last two coefficient slices along any axis, relative to the largest."""
    scale = float(np.max(np.abs(c)))
    if scale == 0:
        return 0.0
    tail = 0.0
    for axis in range(c.ndim):
        idx = [slice(None)] * c.ndim
        idx[axis] = slice(-2, None)
        tail = max(tail, float(np.max(np.abs(c[tuple(idx)]))))
    return tail / scale


class BranchInterpolant:
    """Chebyshev interpolants of ``lambda`` and ``phi(., x)`` on ``k0 + [-r0, r0]^d``."""

    def __init__(self, op: PeriodicOperator, cert: EdgeCertificate, n: int) -> None:
        self.op = op
        self.cert = cert
        self.n = n
        self.center = np.asarray(cert.k0, dtype=float)
        self.half = float(cert.r0)
        d = cert.d
        nodes1 = _cheb_nodes(n)
        grid = np.stack(np.meshgrid(*([nodes1] * d), indexing="ij"), axis=-1).reshape(-1, d)
        ks = self.center + self.half * grid
        asm = assembler(op, cert.N)
        if asm.diagonal:
            # constant coefficients: the branch is a single plane wave
            diags = asm.diagonals(ks)
            pos = int(np.argmax(np.abs(cert.phi0.coeffs)))
            lam = diags[:, pos]
            vecs = np.zeros((len(ks), asm.basis.size), dtype=complex)
            vecs[:, pos] = 1.0
        else:
            pairs = pmap(lambda k: _branch_at(op, cert, k), list(ks))
            lam = np.array([p[0] for p in pairs])
            vecs = np.array([p[1] for p in pairs])
        self.vectors = vecs
        self.lam_coeffs = _cheb_coefficients(lam.reshape((n,) * d))
        self.lam_tail = _tail_ratio(self.lam_coeffs) * float(np.max(np.abs(self.lam_coeffs)))
        self.lam_at_center = float(np.real(self._evaluate(self.lam_coeffs, self.center[None])[0]))
        self._phi_cache: dict[tuple, tuple[np.ndarray, float]] = {}

    def phi_coefficients(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        key = tuple(np.round(np.asarray(x, dtype=float) % 1.0, 15))
        hit = self._phi_cache.get(key)
        if hit is None:
            waves = self.cert.phi0.basis.plane_waves(np.asarray(x, dtype=float))
            values = (self.vectors @ waves).reshape((self.n,) * self.cert.d)
            coeffs = _cheb_coefficients(values)
            hit = (coeffs, _tail_ratio(coeffs))
            if len(self._phi_cache) > 64:
                self._phi_cache.clear()
            self._phi_cache[key] = hit
        return hit

    def _evaluate(self, coeffs: np.ndarray, ks: np.ndarray) -> np.ndarray:
        d = coeffs.ndim
        n = self.n
        u = (ks - self.center) / self.half
        bases = [_cheb_basis(u[:, i], n) for i in range(d)]
        # contract the last axis with a matrix product, then the rest pointwise
        acc = bases[-1] @ coeffs.reshape(-1, n).T
        for i in range(d - 2, -1, -1):
            acc = acc.reshape(len(ks), -1, n)
            acc = np.einsum("pab,pb->pa", acc, bases[i])
        return acc.reshape(len(ks))

    def lam(self, ks: np.ndarray) -> np.ndarray:
        """Band values, pinned so that the edge value is exact at ``k0``."""
        raw = np.real(self._evaluate(self.lam_coeffs, ks))
        return raw - self.lam_at_center + self.cert.lambda0

    def phi(self, ks: np.ndarray, x: np.ndarray) -> np.ndarray:
        coeffs, _ = self.phi_coefficients(x)
        return self._evaluate(coeffs, ks)


_MODEL_CACHE: list[tuple[PeriodicOperator, EdgeCertificate, int, BranchInterpolant]] = []


def branch_interpolant(op: PeriodicOperator, cert: EdgeCertificate, n: int) -> BranchInterpolant:
    for o, c, size, model in _MODEL_CACHE:
        if o is op and c is cert and size == n:
            return model
    model = BranchInterpolant(op, cert, n)
    _MODEL_CACHE.append((op, cert, n, model))
    if len(_MODEL_CACHE) > 6:
        _MODEL_CACHE.pop(0)
    return model


# ---------------------------------------------------------------------------
# ball quadrature around k0

_CHUNK = 8192


@dataclass
class _BallSum:
    value: complex
    magnitude: float
    sensitivity: float
    nodes: int


def _ball_rule(d: int, r: np.ndarray, outer: float, inner: float, level: int, quad: QuadratureSpec, extra=()):
    """Radial and spherical nodes for a ball of radius ``outer`` around 0."""
    dist = float(np.linalg.norm(r))
    f = 1.5**level
    breaks = dyadic_breaks(outer, inner, quad.depth + level, extra)
    lengths = np.diff(breaks)
    orders = [int(math.ceil(f * (quad.order + 0.6 * ln * dist))) for ln in lengths]
    s, ws = panel_rule(breaks, orders)
    n_t = int(math.ceil(f * (quad.order + 0.7 * outer * dist)))
    n_phi = int(math.ceil(f * quad.angular))
    omega, wo = sphere_rule(d, n_t, n_phi)
    Q = frame(r)
    dirs = omega @ Q.T
    return s, ws, dirs, wo


def _ball_integral(
    interp: BranchInterpolant,
    x: np.ndarray,
    y: np.ndarray,
    weight: Callable[[np.ndarray, np.ndarray], np.ndarray],
    outer: float,
    inner: float,
    level: int,
    quad: QuadratureSpec,
    eps: float,
) -> _BallSum:
    """``(2 pi)^-d int_{|k-k0|<outer} e^{i k.r} weight(s, lam) rho / (lam + eps) dk``."""
    d = len(x)
    r = x - y
    s, ws, dirs, wo = _ball_rule(d, r, outer, inner, level, quad)
    k0 = interp.center
    n_dir = len(wo)
    pts_s = np.repeat(s, n_dir)
    pts_w = np.repeat(ws * s ** (d - 1), n_dir) * np.tile(wo, len(s))
    pts_dir = np.tile(dirs, (len(s), 1))
    total = len(pts_s)

    def block(sl: slice):
        ks = k0 + pts_s[sl, None] * pts_dir[sl]
        lam = interp.lam(ks)
        rho = interp.phi(ks, x) * np.conj(interp.phi(ks, y))
        base = weight(pts_s[sl], lam) * pts_w[sl] / (lam + eps)
        vals = np.exp(1j * (ks @ r)) * rho * base
        # the pinned band error grows linearly away from k0
        growth = np.minimum(1.0, 2 * pts_s[sl] / outer)
        return vals, np.abs(base * rho) * growth / np.maximum(lam + eps, 1e-300)

    parts = pmap(block, chunks(total, _CHUNK))
    vals = np.concatenate([p[0] for p in parts])
    sens = np.concatenate([p[1] for p in parts])
    scale = (2 * np.pi) ** (-d)
    return _BallSum(
        value=complex(np.sum(vals)) * scale,
        magnitude=float(np.sum(np.abs(vals))) * scale,
        sensitivity=float(np.sum(sens)) * scale,
        nodes=total,
    )


def _refined_ball(interp, x, y, weight, outer, inner, quad: QuadratureSpec, eps: float, label: str):
    """Run the ball rule at increasing levels until successive values agree."""
    previous = _ball_integral(interp, x, y, weight, outer, inner, 0, quad, eps)
    history = [previous.value]
    for level in range(1, quad.max_refine + 1):
        current = _ball_integral(interp, x, y, weight, outer, inner, level, quad, eps)
        history.append(current.value)
        delta = abs(current.value - previous.value)
        floor = 64 * np.finfo(float).eps * current.magnitude
        est = max(delta, floor)
        if est <= quad.target:
            return current, est, level, history
        previous = current
    raise QuadratureNotConverged(
        f"{label}: refinement budget exhausted with change {est:.3g} above target {quad.target:.3g}"
    )


def _interpolation_error(interp: BranchInterpolant, x, y, ball: _BallSum) -> float:
    _, tx = interp.phi_coefficients(x)
    _, ty = interp.phi_coefficients(y)
    return ball.magnitude * (tx + ty) + interp.lam_tail * ball.sensitivity


def _check_points(cert: EdgeCertificate, x, y) -> tuple[np.ndarray, np.ndarray]:
    _require_d3(cert.d)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (cert.d,) or y.shape != (cert.d,):
        raise ConfigError(f"points must have {cert.d} components")
    return x, y


def reduced_green(
    op: PeriodicOperator,
    cert: EdgeCertificate,
    x: Sequence[float],
    y: Sequence[float],
    quad: QuadratureSpec | None = None,
) -> GreenEvaluation:
    """Reduced kernel ``G0(x, y)`` of the edge branch under the cutoff ``eta``."""
    quad = quad or QuadratureSpec()
    x, y = _check_points(cert, x, y)
    interp = branch_interpolant(op, cert, quad.cheb)
    r0 = cert.r0
    weight = lambda s, lam: eta_profile(s, r0)  # noqa: E731
    ball, est, level, history = _refined_ball(interp, x, y, weight, r0, r0 / 2, quad, quad.eps, "reduced_green")
    interp_err = _interpolation_error(interp, x, y, ball)
    leading = asymptotic_leading(cert, x, y) if np.any(x != y) else None
    return GreenEvaluation(
        x=x,
        y=y,
        value=ball.value,
        est_error=float(est + interp_err),
        which="reduced",
        quad=quad,
        leading=leading,
        details={
            "quadrature_error": est,
            "interpolation_error": interp_err,
            "levels": level,
            "nodes": ball.nodes,
            "history": [[v.real, v.imag] for v in history],
        },
    )


# ---------------------------------------------------------------------------
# full kernel


def reference_kernel(metric: np.ndarray, mass: float, r: np.ndarray, power: int = 1) -> float:
    """Kernel of ``(-div(metric grad) + mass^2)^-power`` on R^d at separation ``r``."""
    d = len(r)
    det = float(np.linalg.det(metric))
    rho = float(np.sqrt(r @ np.linalg.solve(metric, r)))
    if rho == 0:
        raise SingularPoint("reference kernel is singular at coincident points")
    if power < 1:
        raise ConfigError("power must be a positive integer")
    if d == 3 and power == 1:
        return math.exp(-mass * rho) / (4 * math.pi * rho * math.sqrt(det))
    nu = d / 2 - power
    scale = (2 * math.pi) ** (-d / 2) * 2.0 ** (1 - power) / math.gamma(power) / math.sqrt(det)
    return scale * (rho / mass) ** (-nu) * float(special.kv(nu, mass * rho))


_REFERENCE_ORDER = 3
TAIL_FRACTION = 0.01


@dataclass
class _FullSetup:
    metric: np.ndarray
    gauge: np.ndarray
    mass: float
    terms: tuple[float, ...]
    tau: float
    M: int
    half: bool
    alias_bound: Callable[[float], float]


def _full_setup(op: PeriodicOperator, cert: EdgeCertificate, quad: QuadratureSpec, reach: float) -> _FullSetup:
    metric = np.real(op.a.mean()) * op.sign
    metric = 0.5 * (metric + metric.T)
    # mean vector potential; the reference symbol is built on xi + gauge
    gauge = np.real(np.linalg.solve(op.a.mean(), field_product(op.a, op.b).mean()))
    mass = 1.0
    # the fiber diagonal is sign*(q + mass^2) + excess; expand its inverse in excess
    mean_potential = float(np.real(assembler(op, cert.N).matrix(-gauge).entries[0, 0]))
    excess = mean_potential - op.sign * mass**2
    terms = tuple(op.sign ** (p + 1) * (-excess) ** p for p in range(_REFERENCE_ORDER))
    h = np.linalg.eigvalsh(cert.H)
    # band values within the ball stay above 70% of the quadratic model
    tau = 0.7 * 0.5 * h.min() * cert.r0**2 / quad.window
    rate = math.sqrt(2 * tau / h.max()) / 2
    amplitude = float(np.sum(np.abs(cert.phi0.coeffs)) ** 2 / cert.phi0_norm**2)
    d = cert.d
    prefactor = amplitude * newtonian_constant(d) * 2 ** (d / 2) / math.sqrt(float(np.prod(h)))

    def alias_bound(dist: float) -> float:
        dist = max(dist, 1.0)
        return 2 * d * prefactor * math.erfc(rate * dist) / dist ** (d - 2) + 2 * d * math.exp(-mass * dist)

    if quad.far_grid is not None:
        M = quad.far_grid
    else:
        dist = 4.0
        while alias_bound(dist) > quad.target / 4 and dist < 400:
            dist += 1.0
        M = int(math.ceil(reach + dist))
        M += M % 2
    k0 = reduce_to_zone(cert.k0)
    half = op.time_reversal_symmetric and bool(np.all(np.abs(k0) < 1e-12))
    return _FullSetup(metric, gauge, mass, terms, tau, M, half, alias_bound)


def _resolvent_remainder(
    op: PeriodicOperator,
    cert: EdgeCertificate,
    interp: BranchInterpolant,
    setup: _FullSetup,
    x: np.ndarray,
    ys: list[np.ndarray],
    eps: float,
) -> np.ndarray:
    """Trapezoid zone average of ``e^{ik.r}(S - S_ref - window model)`` for each ``y``."""
    d = cert.d
    M = setup.M
    asm = assembler(op, cert.N)
    basis = asm.basis
    G = basis.frequencies
    k0 = np.asarray(cert.k0, dtype=float)
    axis = 2 * np.pi * (np.arange(M) + 0.5) / M - np.pi
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    us = np.stack([g.reshape(-1) for g in grids], axis=1)
    if setup.half:
        us = us[us[:, 0] > 0]
    ks = k0 + us
    ux = basis.plane_waves(x)
    uy = np.stack([basis.plane_waves(y) for y in ys], axis=1)
    rs = np.stack([x - y for y in ys])
    phase_ref = ux[:, None] * np.conj(uy)
    sign = op.sign
    metric = setup.metric
    msq = setup.mass**2
    r0 = cert.r0
    m = basis.size
    step = max(1, min(4096, int(4e6 // (m * m)))) if not asm.diagonal else max(1, int(2e6 // m))

    def block(sl: slice) -> np.ndarray:
        kk = ks[sl]
        if asm.diagonal:
            diag = asm.diagonals(kk) + eps
            S = (1.0 / diag) @ phase_ref
        else:
            A = asm.matrices(kk)
            if eps:
                A[:, np.arange(m), np.arange(m)] += eps
            Z = np.linalg.solve(A, np.broadcast_to(np.conj(uy), (len(kk), m, len(ys))))
            S = np.einsum("m,cmp->cp", ux, Z)
        xi = kk[:, None, :] + G[None] + setup.gauge
        q = np.einsum("cmi,ij,cmj->cm", xi, metric, xi)
        inv = 1.0 / (q + msq)
        S_ref = sum(t * inv ** (p + 1) for p, t in enumerate(setup.terms)) @ phase_ref
        D = S - S_ref
        z = np.linalg.norm(kk - k0, axis=1)
        inside = z < r0
        if np.any(inside):
            kin = kk[inside]
            lam = interp.lam(kin)
            w = np.exp(-(lam + eps) / setup.tau)
            phx = interp.phi(kin, x)
            for p, y in enumerate(ys):
                rho = phx * np.conj(interp.phi(kin, y))
                D[inside, p] -= w * rho / (lam + eps)
        return np.exp(1j * (kk @ rs.T)) * D

    parts = pmap(block, chunks(len(ks), step))
    F = np.concatenate(parts, axis=0)
    total = np.sum(F, axis=0) / M**d
    if setup.half:
        total = 2 * total.real + 0j
    return total


def truncation_estimate(op: PeriodicOperator, N: int, r: np.ndarray) -> float:
    """Heuristic size of the plane-wave truncation error of ``G(x, y)``.

    The fiber resolvent differs from the reference by terms of order
    ``P / |xi|^4`` at frequency ``xi``, with ``P`` the size of the
    non-constant coefficients weighted by the powers of ``xi`` they carry.
    Cutting at ``K = (2N+1) pi`` then leaves ``P / (2 pi^2 |r|^(d-1) K^3)``.
    """
    K = (2 * N + 1) * np.pi
    v = field_product(op.a, op.b)
    s = field_sum(field_product(op.b, v), op.c)

    def variation(field) -> float:
        total = 0.0
        for n, value in field.items():
            if any(n):
                total += float(np.linalg.norm(np.atleast_1d(value), 2 if np.ndim(value) < 2 else None))
        return total

    weight = variation(s) + K * variation(v) + K**2 * variation(op.a)
    dist = float(np.linalg.norm(r))
    return weight / (2 * np.pi**2 * dist ** (len(r) - 1) * K**3)


def full_green_many(
    op: PeriodicOperator,
    cert: EdgeCertificate,
    x: Sequence[float],
    ys: Sequence[Sequence[float]],
    quad: QuadratureSpec | None = None,
) -> list[GreenEvaluation]:
    """Full kernel ``G(x, y)`` for several ``y`` sharing one zone sweep."""
    quad = quad or QuadratureSpec()
    if quad.eps > 0 and quad.extrapolate:
        return _extrapolated(op, cert, x, ys, quad)
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in ys]
    for y in ys:
        _check_points(cert, x, y)
        if not np.any(x != y):
            raise SingularPoint("the full kernel is singular at x = y")
    interp = branch_interpolant(op, cert, quad.cheb)
    reach = max(float(np.max(np.abs(x - y))) for y in ys)
    setup = _full_setup(op, cert, quad, reach)
    eps = quad.eps
    tau = setup.tau
    weight = lambda s, lam: np.exp(-(lam + eps) / tau)  # noqa: E731
    rest = _resolvent_remainder(op, cert, interp, setup, x, ys, eps)
    out = []
    for y, g_rest in zip(ys, rest):
        r = x - y
        ball, est, level, _ = _refined_ball(interp, x, y, weight, cert.r0, cert.r0 / 2, quad, eps, "full_green")
        g_ref = sum(t * reference_kernel(setup.metric, setup.mass, r, p + 1) for p, t in enumerate(setup.terms))
        g_ref = g_ref * np.exp(-1j * float(setup.gauge @ r))
        value = g_ref + ball.value + g_rest
        alias = setup.alias_bound(setup.M - float(np.max(np.abs(r))))
        interp_err = _interpolation_error(interp, x, y, ball)
        tail = truncation_estimate(op, cert.N, r)
        if tail > TAIL_FRACTION * abs(value):
            raise TailTruncationDominates(
                f"plane-wave truncation estimate {tail:.3g} exceeds {TAIL_FRACTION:.0%} of |G|={abs(value):.3g}; raise N"
            )
        leading = asymptotic_leading(cert, x, y)
        out.append(
            GreenEvaluation(
                x=x,
                y=y,
                value=complex(value),
                est_error=float(est + alias + interp_err + tail),
                which="full",
                quad=quad,
                leading=leading,
                details={
                    "reference": [g_ref.real, g_ref.imag],
                    "window_part": [ball.value.real, ball.value.imag],
                    "remainder": [g_rest.real, g_rest.imag],
                    "far_grid": setup.M,
                    "time_reversal_halving": setup.half,
                    "quadrature_error": est,
                    "alias_error": alias,
                    "interpolation_error": interp_err,
                    "truncation_error": tail,
                    "levels": level,
                },
            )
        )
    return out


def full_green(
    op: PeriodicOperator,
    cert: EdgeCertificate,
    x: Sequence[float],
    y: Sequence[float],
    quad: QuadratureSpec | None = None,
) -> GreenEvaluation:
    """Full kernel of ``L^-1`` (of ``(L + eps)^-1`` when ``quad.eps > 0``)."""
    return full_green_many(op, cert, x, [y], quad)[0]


def _extrapolated(op, cert, x, ys, quad: QuadratureSpec) -> list[GreenEvaluation]:
    """Richardson extrapolation in ``sqrt(eps)`` over ``eps, eps/2, eps/4``."""
    runs = [full_green_many(op, cert, x, ys, quad.with_(eps=quad.eps / 2**i, extrapolate=False)) for i in range(3)]
    q = math.sqrt(2)
    out = []
    for idx in range(len(ys)):
        g = [runs[i][idx].value for i in range(3)]
        e = [runs[i][idx].est_error for i in range(3)]
        r1 = (q * g[1] - g[0]) / (q - 1)
        r2 = (q * g[2] - g[1]) / (q - 1)
        best = 2 * r2 - r1
        err = abs(best - r2) + (abs(q / (q - 1)) * 2 + 1) * max(e)
        base = runs[2][idx]
        out.append(
            GreenEvaluation(
                x=base.x,
                y=base.y,
                value=complex(best),
                est_error=float(err),
                which="full",
                quad=quad,
                leading=base.leading,
                details={"eps_values": [quad.eps / 2**i for i in range(3)], "raw": [[v.real, v.imag] for v in g]},
            )
        )
    return out


# ---------------------------------------------------------------------------
# free kernel (model integral for the edge asymptotics)


def free_kernel_quadrature(
    x0: Sequence[float],
    mu_radius: float = 6.0,
    quad: QuadratureSpec | None = None,
    kappa: float = 0.0,
) -> complex:
    """``(2 pi)^-d int e^{i x0.xi} mu(xi) / (xi.xi + kappa |xi|^2 xi_1) d xi``.

    ``mu`` is the radial bump of :func:`eta_profile` with radius
    ``mu_radius``.  The denominator must stay positive, so
    ``kappa * mu_radius < 1``.
    """
    quad = quad or QuadratureSpec()
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    _require_d3(d)
    dist = float(np.linalg.norm(x0))
    if dist < 2:
        raise ConfigError("the model integral is only used for |x0| >= 2")
    if abs(kappa) * mu_radius >= 1:
        raise ConfigError("kappa * mu_radius must be below 1 so the denominator stays positive")

    def integral(level: int) -> tuple[complex, float]:
        s, ws, dirs, wo = _ball_rule(d, x0, mu_radius, mu_radius / 2, level, quad)
        radial = eta_profile(s, mu_radius) * ws * s ** (d - 3)
        phase = np.exp(1j * np.outer(s, dirs @ x0))
        denom = 1 + kappa * np.outer(s, dirs[:, 0])
        vals = radial[:, None] * phase / denom * wo[None, :]
        scale = (2 * np.pi) ** (-d)
        return complex(np.sum(vals)) * scale, float(np.sum(np.abs(vals))) * scale

    previous, _ = integral(0)
    for level in range(1, quad.max_refine + 1):
        current, magnitude = integral(level)
        est = max(abs(current - previous), 64 * np.finfo(float).eps * magnitude)
        if est <= quad.target:
            return current
        previous = current
    raise QuadratureNotConverged(f"free kernel quadrature at |x0|={dist} did not reach {quad.target:.3g}")


# ---------------------------------------------------------------------------
# ratio sweeps


DEFAULT_SWEEP_POINT = (0.1, 0.2, 0.3, 0.4)
# below this fraction of |phi0|^2 the remainder swamps the ratio at any desk-scale radius
LEADING_FLOOR = 1e-4

SWEEP_COLUMNS = (
    "R",
    "Re(G)",
    "Im(G)",
    "Re(G0)",
    "Im(G0)",
    "Re(lead)",
    "Im(lead)",
    "abs_ratio_minus_1",
    "est_error",
)


@dataclass(frozen=True, eq=False)
class SweepResult:
    direction: np.ndarray
    x: np.ndarray
    rows: list[dict]
    exponent: float
    monotone: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in self.rows:
            writer.writerow([repr(float(row[c])) for c in SWEEP_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.tolist(),
            "x": self.x.tolist(),
            "fitted_exponent": self.exponent,
            "monotone_decreasing": self.monotone,
            "rows": self.rows,
        }


def fitted_exponent(radii: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log values`` against ``log radii``."""
    lr = np.log(np.asarray(radii, dtype=float))
    lv = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(lr, lv, 1)[0])


def ratio_sweep(
    op: PeriodicOperator,
    cert: EdgeCertificate,
    direction: Sequence[float],
    radii: Sequence[float],
    quad: QuadratureSpec | None = None,
    x: Sequence[float] | None = None,
) -> SweepResult:
    """Compare ``G``, ``G0`` and the leading term along ``y = x - R direction``."""
    quad = quad or QuadratureSpec()
    d = cert.d
    _require_d3(d)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (d,) or np.linalg.norm(direction) == 0:
        raise ConfigError(f"direction must be a nonzero {d}-vector")
    direction = direction / np.linalg.norm(direction)
    radii = [float(R) for R in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])) or min(radii) < 5:
        raise ConfigError("radii must increase and start at 5 or more")
    x = np.asarray(DEFAULT_SWEEP_POINT[:d] if x is None else x, dtype=float)
    ys = [x - R * direction for R in radii]
    phi = cert.phi0.periodic(np.stack([x] + ys))
    for R, value in zip(radii, phi[1:]):
        if abs(phi[0] * value) < LEADING_FLOOR * cert.phi0_norm**2:
            raise LeadingTermNearZero(f"phi(k0, .) nearly vanishes at x or y for R={R}")
    fulls = full_green_many(op, cert, x, ys, quad)
    rows = []
    for R, y, g in zip(radii, ys, fulls):
        g0 = reduced_green(op, cert, x, y, quad)
        lead = g.leading
        dev = abs(g.value / lead - 1)
        rows.append(
            {
                "R": R,
                "Re(G)": g.value.real,
                "Im(G)": g.value.imag,
                "Re(G0)": g0.value.real,
                "Im(G0)": g0.value.imag,
                "Re(lead)": lead.real,
                "Im(lead)": lead.imag,
                "abs_ratio_minus_1": dev,
                "est_error": g.est_error / abs(lead),
                "est_error_G0": g0.est_error,
            }
        )
    devs = [row["abs_ratio_minus_1"] for row in rows]
    monotone = all(b < a for a, b in zip(devs, devs[1:]))
    exponent = fitted_exponent(radii, devs) if len(radii) > 1 and min(devs) > 0 else float("nan")
    return SweepResult(direction, x, rows, exponent, monotone)


__all__ = [
    "AsymptoticModel",
    "BranchInterpolant",
    "GreenEvaluation",
    "QuadratureSpec",
    "branch_interpolant",
    "SweepResult",
    "asymptotic_leading",
    "bloch_branch",
    "eta_cutoff",
    "eta_profile",
    "fitted_exponent",
    "free_kernel_quadrature",
    "full_green",
    "full_green_many",
    "newtonian_constant",
    "newtonian_potential",
    "ratio_sweep",
    "reduced_green",
    "reference_kernel",
    "truncation_estimate",
    "unit_ball_volume",
]
