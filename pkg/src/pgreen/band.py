"""Band functions, edge location and certification of the edge assumptions.

Band indices are 1-based, ``j = 1`` being the lowest band.  For a flipped
operator (``op.sign == -1``) band ``j`` is the image of band ``j`` of the
unflipped operator, so the values at each node are then non-increasing in
``j``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import (
    A1Violated,
    A2Violated,
    A3Violated,
    A4Violated,
    ConfigError,
    DegenerateBand,
    EigenSolverFailure,
    NotIsolatedMinimum,
)
from .floquet import (
    BlochMatrix,
    PlaneWaveBasis,
    TorusFunction,
    assembler,
    uniform_zone_grid,
)
from .operator import PeriodicOperator
from .parallel import pmap

DEGENERACY_TOL = 1e-8
VALUE_TOL = 1e-9
GRAD_TOL = 1e-10
A1_TOL = 1e-8
RESIDUAL_TOL = 1e-10


def solve_fiber(bm: BlochMatrix, n_b: int, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """The ``n_b`` lowest eigenpairs (highest, for flipped operators).

    Eigenvectors are the columns of the returned ``m x n_b`` array.
    """
    m = bm.size
    if not 1 <= n_b <= m:
        raise ConfigError(f"n_b={n_b} outside 1..{m}")
    if bm.is_diagonal:
        diag = bm.data.real
        order = np.argsort(diag * bm.sign, kind="stable")[:n_b]
        vecs = np.zeros((m, n_b), dtype=complex)
        vecs[order, np.arange(n_b)] = 1.0
        return diag[order], vecs
    try:
        if bm.sign > 0:
            vals, vecs = linalg.eigh(bm.data, subset_by_index=[0, n_b - 1], driver="evr")
        else:
            vals, vecs = linalg.eigh(bm.data, subset_by_index=[m - n_b, m - 1], driver="evr")
            vals, vecs = vals[::-1], vecs[:, ::-1]
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverFailure(f"dense eigensolver failed at k={bm.k}: {exc}") from exc
    if check:
        resid = np.linalg.norm(bm.data @ vecs - vecs * vals, axis=0)
        scale = max(bm.norm(), 1.0)
        if np.any(resid > RESIDUAL_TOL * scale):
            raise EigenSolverFailure(f"eigen residual {resid.max():.3g} above tolerance at k={bm.k}")
    return vals, vecs


def _full_spectrum(bm: BlochMatrix) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs ordered by band label."""
    if bm.is_diagonal:
        return solve_fiber(bm, bm.size, check=False)
    try:
        vals, vecs = linalg.eigh(bm.data)
    except linalg.LinAlgError as exc:
        raise EigenSolverFailure(str(exc)) from exc
    if bm.sign < 0:
        vals, vecs = vals[::-1], vecs[:, ::-1]
    return vals, vecs


@dataclass(frozen=True, eq=False)
class BandSurface:
    """Band values on the uniform grid returned by :func:`uniform_zone_grid`."""

    M: int
    N: int
    ks: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray | None = None
    sign: int = 1

    @property
    def d(self) -> int:
        return self.ks.shape[1]

    @property
    def n_b(self) -> int:
        return self.energies.shape[1]

    def band(self, j: int) -> np.ndarray:
        """Band ``j`` (1-based) reshaped to ``(M,)*d``."""
        return self.energies[:, j - 1].reshape((self.M,) * self.d)

    def overlaps(self) -> list[tuple[int, int]]:
        """Pairs of consecutive bands whose sampled ranges overlap."""
        e = self.energies * self.sign
        out = []
        for j in range(self.n_b - 1):
            if e[:, j].max() > e[:, j + 1].min():
                out.append((j + 1, j + 2))
        return out

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "N": self.N,
            "k": self.ks.tolist(),
            "energies": self.energies.tolist(),
            "overlaps": self.overlaps(),
        }


def band_grid(op: PeriodicOperator, M: int, n_b: int, N: int, keep_vectors: bool = False) -> BandSurface:
    """Sample the first ``n_b`` bands on the ``M^d`` zone grid."""
    if M < 3:
        raise ConfigError("band grid needs M >= 3")
    asm = assembler(op, N)
    ks = uniform_zone_grid(M, op.d)
    if asm.diagonal and not keep_vectors:
        diags = asm.diagonals(ks)
        order = np.sort(diags * op.sign, axis=1)[:, :n_b] * op.sign
        return BandSurface(M, N, ks, order, None, op.sign)

    def one(k: np.ndarray):
        vals, vecs = solve_fiber(asm.matrix(k), n_b)
        return vals, (vecs if keep_vectors else None)

    results = pmap(one, list(ks))
    energies = np.array([r[0] for r in results])
    vectors = np.array([r[1] for r in results]) if keep_vectors else None
    return BandSurface(M, N, ks, energies, vectors, op.sign)


def _band_pair(op: PeriodicOperator, k: np.ndarray, j: int, N: int, full: bool = False):
    """Eigenpairs of the fiber at ``k`` including band ``j`` and its neighbors."""
    bm = assembler(op, N).matrix(k)
    if full:
        vals, vecs = _full_spectrum(bm)
    else:
        vals, vecs = solve_fiber(bm, min(j + 1, bm.size))
    gaps = [abs(vals[j - 1] - vals[i]) for i in (j - 2, j) if 0 <= i < len(vals)]
    return bm, vals, vecs, (min(gaps) if gaps else math.inf)


def band_gradient(op: PeriodicOperator, k: Sequence[float], j: int, N: int) -> np.ndarray:
    """Hellmann-Feynman gradient of band ``j`` at ``k``."""
    k = np.asarray(k, dtype=float)
    _, vals, vecs, gap = _band_pair(op, k, j, N)
    if gap < DEGENERACY_TOL:
        raise DegenerateBand(f"band {j} is degenerate at k={k.tolist()} (gap {gap:.3g})")
    v = vecs[:, j - 1]
    asm = assembler(op, N)
    return np.array([np.real(np.vdot(v, _apply(asm.derivative(k, m), v))) for m in range(op.d)])


def _apply(bm: BlochMatrix, v: np.ndarray) -> np.ndarray:
    return bm.data * v if bm.is_diagonal else bm.data @ v


def band_value(op: PeriodicOperator, k: Sequence[float], j: int, N: int) -> float:
    bm = assembler(op, N).matrix(np.asarray(k, dtype=float))
    return float(solve_fiber(bm, j, check=False)[0][j - 1])


def band_hessian(
    op: PeriodicOperator,
    k0: Sequence[float],
    j: int,
    N: int,
    method: str = "perturbation",
    h: float = 1e-3,
) -> np.ndarray:
    """Hessian of band ``j`` at ``k0`` by second-order perturbation theory or
    by Richardson-extrapolated central differences."""
    k0 = np.asarray(k0, dtype=float)
    d = op.d
    if method == "perturbation":
        bm, vals, vecs, gap = _band_pair(op, k0, j, N, full=True)
        if gap < DEGENERACY_TOL:
            raise DegenerateBand(f"band {j} is degenerate at k={k0.tolist()}")
        asm = assembler(op, N)
        v = vecs[:, j - 1]
        lam = vals[j - 1]
        # coupling[m, i] = <v_i, dL_m v>
        coupling = np.array([np.conj(vecs.T) @ _apply(asm.derivative(k0, m), v) for m in range(d)])
        denom = lam - vals
        denom[j - 1] = np.inf
        H = np.empty((d, d))
        for m in range(d):
            for n in range(d):
                second = np.real(np.vdot(v, _apply(asm.second_derivative(m, n), v)))
                cross = np.sum(np.conj(coupling[m]) * coupling[n] / denom)
                H[m, n] = second + 2 * np.real(cross)
    elif method == "fd":
        _, _, _, gap = _band_pair(op, k0, j, N)
        if gap < DEGENERACY_TOL:
            raise DegenerateBand(f"band {j} is degenerate at k={k0.tolist()}")

        def second_differences(step: float) -> np.ndarray:
            f = lambda dk: band_value(op, k0 + dk, j, N)  # noqa: E731
            f0 = f(np.zeros(d))
            out = np.empty((d, d))
            eye = np.eye(d) * step
            for m in range(d):
                out[m, m] = (f(eye[m]) - 2 * f0 + f(-eye[m])) / step**2
                for n in range(m):
                    out[m, n] = out[n, m] = (
                        f(eye[m] + eye[n]) - f(eye[m] - eye[n]) - f(-eye[m] + eye[n]) + f(-eye[m] - eye[n])
                    ) / (4 * step**2)
            return out

        H = (4 * second_differences(h / 2) - second_differences(h)) / 3
    else:
        raise ConfigError(f"unknown Hessian method {method!r}")
    return 0.5 * (H + H.T)


def reduce_to_zone(k: Sequence[float]) -> np.ndarray:
    """Representative of ``k`` modulo 2*pi*Z^d in ``[-pi, pi)^d``."""
    k = np.asarray(k, dtype=float)
    return (k + np.pi) % (2 * np.pi) - np.pi


def _equivalent(k1: np.ndarray, k2: np.ndarray, tol: float = 1e-9) -> bool:
    diff = reduce_to_zone(np.asarray(k1) - np.asarray(k2))
    return bool(np.all(np.abs(diff) < tol))


def locate_edge(
    op: PeriodicOperator,
    surface: BandSurface,
    j: int,
    value_tol: float = VALUE_TOL,
    max_iter: int = 60,
) -> tuple[np.ndarray, float]:
    """Newton refinement of the grid minimum of band ``j``.

    Grid nodes within ``value_tol`` of the minimum that are not equivalent
    modulo the dual lattice signal a non-isolated minimum.
    """
    if not 1 <= j <= surface.n_b:
        raise ConfigError(f"band {j} not present in the surface (n_b={surface.n_b})")
    values = surface.energies[:, j - 1]
    i0 = int(np.argmin(values))
    candidates = np.flatnonzero(values <= values[i0] + value_tol)
    k_start = surface.ks[i0]
    for i in candidates:
        if not _equivalent(surface.ks[i], k_start):
            raise NotIsolatedMinimum(
                f"band {j} has inequivalent grid minima at {k_start.tolist()} and {surface.ks[i].tolist()}"
            )
    k = k_start.copy()
    N = surface.N
    radius = 2 * np.pi / surface.M
    for _ in range(max_iter):
        g = band_gradient(op, k, j, N)
        if np.linalg.norm(g) < GRAD_TOL:
            break
        H = band_hessian(op, k, j, N)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        if np.linalg.eigvalsh(H).min() <= 0:
            step = -g / max(np.abs(g).max(), 1.0)
        norm = np.linalg.norm(step)
        if norm > radius:
            step *= radius / norm
        k = k + step
    else:
        g = band_gradient(op, k, j, N)
        if np.linalg.norm(g) >= GRAD_TOL:
            raise A3Violated(f"Newton refinement did not converge (|grad|={np.linalg.norm(g):.3g})")
    k = reduce_to_zone(k)
    # canonical representative for points on the zone boundary
    k[np.abs(k + np.pi) < 1e-12] = -np.pi
    return k, band_value(op, k, j, N)


def _phase_fix(c: np.ndarray) -> np.ndarray:
    """Rotate so that the largest-magnitude coefficient is real and positive."""
    i = int(np.argmax(np.abs(c)))
    return c * (np.conj(c[i]) / abs(c[i]))


def _ray_directions(d: int) -> np.ndarray:
    dirs = np.array([v for v in itertools.product((-1, 0, 1), repeat=d) if any(v)], dtype=float)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class EdgeCertificate:
    j: int
    k0: np.ndarray
    lambda0: float
    grad_norm: float
    H: np.ndarray
    delta: float
    r0: float
    phi0: TorusFunction
    phi0_norm: float
    N: int
    M: int
    simple: bool = True
    positive_definite: bool = True
    sign: int = 1
    notes: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.k0)

    def to_dict(self) -> dict:
        phi = [
            {"G": idx.tolist(), "re": float(c.real), "im": float(c.imag)}
            for idx, c in zip(self.phi0.basis.indices, self.phi0.coeffs)
            if abs(c) > 0
        ]
        return {
            "j": self.j,
            "k0": reduce_to_zone(self.k0).tolist(),
            "lambda0": self.lambda0,
            "grad_norm": self.grad_norm,
            "H": self.H.tolist(),
            "delta": self.delta,
            "r0": self.r0,
            "phi0": phi,
            "phi0_norm": self.phi0_norm,
            "N": self.N,
            "M": self.M,
            "sign": self.sign,
            "simple": self.simple,
            "positive_definite": self.positive_definite,
            "notes": self.notes,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "EdgeCertificate":
        k0 = np.asarray(data["k0"], dtype=float)
        d = len(k0)
        N = int(data["N"])
        basis = PlaneWaveBasis(d, N)
        lookup = {tuple(idx): i for i, idx in enumerate(basis.indices.tolist())}
        coeffs = np.zeros(basis.size, dtype=complex)
        for term in data["phi0"]:
            coeffs[lookup[tuple(term["G"])]] = complex(term["re"], term["im"])
        return cls(
            j=int(data["j"]),
            k0=k0,
            lambda0=float(data["lambda0"]),
            grad_norm=float(data.get("grad_norm", 0.0)),
            H=np.asarray(data["H"], dtype=float),
            delta=float(data["delta"]),
            r0=float(data["r0"]),
            phi0=TorusFunction(basis, coeffs, k0),
            phi0_norm=float(data["phi0_norm"]),
            N=N,
            M=int(data["M"]),
            sign=int(data.get("sign", 1)),
            simple=bool(data.get("simple", True)),
            positive_definite=bool(data.get("positive_definite", True)),
            notes=dict(data.get("notes", {})),
        )


def cutoff_radius(
    op: PeriodicOperator,
    k0: np.ndarray,
    j: int,
    N: int,
    H: np.ndarray,
    delta: float,
    steps: int = 16,
) -> float:
    """Largest radius (capped at pi/2) along the sampled rays where band ``j``
    stays below ``delta/2`` and within 30% of its quadratic model."""
    cap = np.pi / 2
    radii = cap * np.arange(1, steps + 1) / steps
    best = cap
    for w in _ray_directions(op.d):
        curvature = 0.5 * w @ H @ w
        for s in radii:
            if s > best + 1e-12:
                break
            lam = band_value(op, k0 + s * w, j, N)
            model = curvature * s * s
            if lam >= delta / 2 or abs(lam - model) > 0.3 * model:
                best = s - cap / steps
                break
    if best <= 0:
        raise A2Violated("band leaves its quadratic regime before the first ray sample")
    return float(best)


def certify(op: PeriodicOperator, j: int = 1, M: int = 8, N: int = 6, n_b: int | None = None) -> EdgeCertificate:
    """Check the edge assumptions for band ``j`` of an operator shifted so
    that the candidate edge sits at zero, and collect the edge data."""
    if n_b is None:
        n_b = j + 1
    if n_b <= j:
        raise ConfigError("n_b must exceed the band index so that neighbors are sampled")
    surface = band_grid(op, M, n_b, N)
    try:
        k0, lam0 = locate_edge(op, surface, j)
    except NotIsolatedMinimum as exc:
        raise NotIsolatedMinimum(f"A3Violated: {exc}") from exc
    if abs(lam0) > A1_TOL:
        raise A1Violated(f"A1Violated: band {j} minimum is {lam0:.6g}, not 0")
    grad = band_gradient(op, k0, j, N)
    H = band_hessian(op, k0, j, N)
    try:
        np.linalg.cholesky(H)
        positive = True
    except np.linalg.LinAlgError:
        positive = False
    if not positive:
        raise A4Violated(f"A4Violated: Hessian eigenvalues {np.linalg.eigvalsh(H).tolist()}")
    others = np.delete(surface.energies, j - 1, axis=1)
    # bands beyond n_b lie further from zero than band n_b on the upper side
    delta = float(np.min(np.abs(others))) if others.size else math.inf
    if not delta > 0:
        raise A2Violated(f"A2Violated: another band reaches zero (delta={delta:.3g})")
    bm, vals, vecs, gap = _band_pair(op, k0, j, N)
    if gap < DEGENERACY_TOL:
        raise DegenerateBand(f"band {j} is degenerate at the edge")
    values = surface.energies[:, j - 1]
    far = np.array([not _equivalent(k, k0, tol=np.pi / M) for k in surface.ks])
    if np.any(far) and values[far].min() <= lam0 + VALUE_TOL:
        raise A3Violated("A3Violated: the refined minimum is not unique on the grid")
    r0 = cutoff_radius(op, k0, j, N, H, delta)
    coeffs = _phase_fix(vecs[:, j - 1])
    phi0 = TorusFunction(bm.basis, coeffs, k0)
    return EdgeCertificate(
        j=j,
        k0=k0,
        lambda0=lam0,
        grad_norm=float(np.linalg.norm(grad)),
        H=H,
        delta=delta,
        r0=r0,
        phi0=phi0,
        phi0_norm=phi0.norm(),
        N=N,
        M=M,
        simple=True,
        positive_definite=positive,
        sign=op.sign,
        notes={"r0_rule": "min(pi/2, ray radius with lambda < delta/2 and within 30% of quadratic model)"},
    )


def quadratic_residual_exponent(
    op: PeriodicOperator, cert: EdgeCertificate, levels: int = 5, directions: np.ndarray | None = None
) -> float:
    """Smallest fitted log-log slope of ``|lambda - lambda0 - quadratic model|``
    along rays from ``k0`` at radii ``r0 / 2^i``, ``i = 1..levels``."""
    if levels < 2:
        raise ConfigError("need at least two radii for a slope")
    dirs = _ray_directions(op.d) if directions is None else np.asarray(directions, dtype=float)
    radii = cert.r0 / 2.0 ** np.arange(1, levels + 1)
    worst = math.inf
    for w in dirs:
        w = w / np.linalg.norm(w)
        model = 0.5 * (w @ cert.H @ w) * radii**2
        lam = np.array([band_value(op, cert.k0 + s * w, cert.j, cert.N) for s in radii])
        resid = np.abs(lam - cert.lambda0 - model)
        # a residual at rounding level carries no slope information
        keep = resid > 1e-13 * np.maximum(model, 1.0)
        if keep.sum() < 2:
            continue
        slope = np.polyfit(np.log(radii[keep]), np.log(resid[keep]), 1)[0]
        worst = min(worst, float(slope))
    return worst


def edge_shift(op: PeriodicOperator, j: int = 1, M: int = 8, N: int = 6, side: str = "min") -> float:
    """Extremal value of band ``j``: the shift that moves that edge to zero."""
    if side not in {"min", "max"}:
        raise ConfigError("side must be 'min' or 'max'")
    probe = op
    if side == "max":
        from .operator import shift_and_flip

        probe = shift_and_flip(op, 0.0, True)
    surface = band_grid(probe, M, j + 1, N)
    _, value = locate_edge(probe, surface, j)
    return value * probe.sign * op.sign
