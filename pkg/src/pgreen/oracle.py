"""Independent reference data for separable operators.

For ``L = sum_i L_i(x_i)`` with one-dimensional periodic factors
``L_i = -d/dx a_i(x) d/dx + c_i(x)`` everything reduces to one-dimensional
dense problems.  The 1D Bloch matrices here are built directly from the
Fourier coefficients and share no code with the plane-wave assembler, so
the two routes can be compared.

The Green's function of the shifted operator is the time integral of a
product of 1D heat kernels, ``G = int_0^inf prod_i h_i(t) dt``.  Short times
use a trapezoid rule in quasimomentum over all bands; long times keep only
the bottom band, whose kernel is integrated by Gauss-Legendre on a window
that shrinks like ``t^-1/2``.  The substitution ``t = T / v^2`` makes the
long-time tail a smooth integral over ``v`` in ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .band import EdgeCertificate, reduce_to_zone
from .errors import ConfigError
from .operator import PeriodicOperator
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class Chain:
    """A 1D periodic operator ``-d/dx a d/dx + c`` given by Fourier coefficients.

    ``a`` and ``c`` map integer frequencies ``n`` (for ``e^{2 pi i n x}``) to
    complex coefficients.
    """

    a: dict
    c: dict

    @classmethod
    def schrodinger(cls, coefficients: dict) -> "Chain":
        return cls({0: 1.0}, dict(coefficients))

    @classmethod
    def from_operator(cls, op: PeriodicOperator) -> "Chain":
        """Read the coefficients of an unflipped, unshifted 1D operator."""
        if op.d != 1 or op.flipped or op.has_vector_potential or op.shift:
            raise ConfigError("oracle factors must be plain one-dimensional operators without b")
        a = {n[0]: complex(v[0, 0]) for n, v in op.a.items()}
        c = {n[0]: complex(v) for n, v in op.c.items()}
        return cls(a, c)

    def pieces(self, cutoff: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(C0, C1, C2)`` with Bloch matrix ``C0 + k C1 + k^2 C2``."""
        n = np.arange(-cutoff, cutoff + 1)
        g = 2 * np.pi * n
        size = len(n)
        diff = n[:, None] - n[None, :]
        pot = np.zeros((size, size), dtype=complex)
        metric = np.zeros((size, size), dtype=complex)
        for freq, value in self.c.items():
            pot[diff == freq] += value
        for freq, value in self.a.items():
            metric[diff == freq] += value
        c0 = pot + np.outer(g, g) * metric
        c1 = (g[:, None] + g[None, :]) * metric
        return c0, c1, metric

    def matrix(self, k: float, cutoff: int) -> np.ndarray:
        c0, c1, c2 = self.pieces(cutoff)
        out = c0 + k * c1 + k * k * c2
        return 0.5 * (out + out.conj().T)


class ChainSpectrum:
    """Eigen-data of one factor with a fixed plane-wave cutoff."""

    def __init__(self, chain: Chain, cutoff: int = 64) -> None:
        self.chain = chain
        self.cutoff = cutoff
        self.freqs = 2 * np.pi * np.arange(-cutoff, cutoff + 1)
        self._pieces = chain.pieces(cutoff)
        # bottom of a 1D band sits at k = 0 or k = pi
        candidates = []
        for k in (0.0, np.pi):
            vals, vecs = np.linalg.eigh(self._matrix(k))
            candidates.append((float(vals[0]), k, vecs[:, 0]))
        self.bottom, self.k0, ground = min(candidates, key=lambda item: item[0])
        self.ground = ground * np.exp(-1j * np.angle(ground[np.argmax(np.abs(ground))]))

    def _matrix(self, k: float) -> np.ndarray:
        c0, c1, c2 = self._pieces
        return c0 + k * c1 + k * k * c2

    def solve(self, ks: np.ndarray, bands: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        c0, c1, c2 = self._pieces
        ks = np.asarray(ks, dtype=float)[:, None, None]
        mats = c0[None] + ks * c1[None] + ks**2 * c2[None]
        vals, vecs = np.linalg.eigh(mats)
        if bands is not None:
            vals, vecs = vals[:, :bands], vecs[:, :, :bands]
        return vals - self.bottom, vecs

    def curvature(self) -> float:
        """Second derivative of the bottom band at its minimum (perturbation formula)."""
        _, c1, c2 = self._pieces
        vals, vecs = np.linalg.eigh(self._matrix(self.k0))
        v0 = vecs[:, 0]
        first = c1 + 2 * self.k0 * c2
        couplings = vecs.conj().T @ first @ v0
        return float(np.real(2 * v0.conj() @ c2 @ v0) - 2 * np.sum(np.abs(couplings[1:]) ** 2 / (vals[1:] - vals[0])))

    def gap(self, grid: int = 64) -> float:
        """Distance from the shifted bottom band to the rest, minimized over a k-grid."""
        ks = 2 * np.pi * (np.arange(grid) - grid // 2) / grid
        vals, _ = self.solve(ks, 2)
        return float(vals[:, 1].min())

    def bloch_values(self, ks: np.ndarray, vecs: np.ndarray, x: float) -> np.ndarray:
        """``psi_n(k, x)`` including the ``e^{ikx}`` factor, shape ``(len(ks), bands)``."""
        waves = np.exp(1j * (ks[:, None] + self.freqs[None]) * x)
        return np.einsum("kg,kgn->kn", waves, vecs)

    def ground_value(self, x: float) -> complex:
        """Periodic part of the bottom Bloch function at ``x``."""
        return complex(np.sum(self.ground * np.exp(1j * self.freqs * x)))


class HeatKernel1D:
    """``h(t; x, y)`` of one shifted factor, at a fixed set of times."""

    def __init__(self, spectrum: ChainSpectrum, short_grid: int = 384, window_nodes: int = 96) -> None:
        self.spectrum = spectrum
        self.short_grid = short_grid
        self.window_nodes = window_nodes
        self._short = None
        self.stiffness = spectrum.curvature() / 2

    def _short_data(self):
        if self._short is None:
            M = self.short_grid
            ks = 2 * np.pi * (np.arange(M) + 0.5) / M - np.pi
            vals, vecs = self.spectrum.solve(ks)
            self._short = (ks, vals, vecs)
        return self._short

    def short_time(self, ts: np.ndarray, x: float, y: float) -> np.ndarray:
        ks, vals, vecs = self._short_data()
        rho = self.spectrum.bloch_values(ks, vecs, x) * np.conj(self.spectrum.bloch_values(ks, vecs, y))
        weights = np.exp(-ts[:, None, None] * vals[None])
        return np.real(np.einsum("tkn,kn->t", weights, rho)) / len(ks)

    def long_time(self, ts: np.ndarray, x: float, y: float) -> np.ndarray:
        """Bottom band only; Gauss-Legendre on ``|k| < width(t)``."""
        out = np.empty(len(ts))
        for i, t in enumerate(ts):
            width = min(np.pi, 14.0 / math.sqrt(self.stiffness * t))
            s, w = gauss_legendre(self.window_nodes + int(math.ceil(abs(x - y) * width)))
            ks = self.spectrum.k0 + width * s
            vals, vecs = self.spectrum.solve(ks, 1)
            rho = self.spectrum.bloch_values(ks, vecs, x)[:, 0] * np.conj(self.spectrum.bloch_values(ks, vecs, y)[:, 0])
            out[i] = np.real(np.sum(width * w * np.exp(-t * vals[:, 0]) * rho)) / (2 * np.pi)
        return out


@dataclass
class SeparableOracle:
    """Reference edge data and Green's function of a sum of 1D factors.

    Edge data use dense 1D solves at ``cutoff`` (at least 64 by default).
    The heat-kernel Green's function runs at the smaller ``heat_cutoff``;
    each time node needs an eigen-solve per quasimomentum node, and 24
    already reproduces cutoff 32 to about 1e-10.
    """

    chains: Sequence[Chain]
    cutoff: int = 64
    heat_cutoff: int = 24

    def __post_init__(self) -> None:
        if len(self.chains) < 1:
            raise ConfigError("at least one factor is needed")
        self.spectra = [ChainSpectrum(c, self.cutoff) for c in self.chains]

    @property
    def d(self) -> int:
        return len(self.chains)

    @property
    def k0(self) -> np.ndarray:
        return np.array([s.k0 for s in self.spectra])

    @property
    def shift(self) -> float:
        """Bottom of the spectrum of the sum."""
        return float(sum(s.bottom for s in self.spectra))

    @property
    def hessian(self) -> np.ndarray:
        return np.diag([s.curvature() for s in self.spectra])

    @property
    def delta(self) -> float:
        """Distance from zero to the next band of the shifted sum."""
        return float(min(s.gap() for s in self.spectra))

    def phi0(self, x: Sequence[float]) -> complex:
        """Periodic part of the product ground state (unit ``L^2`` norm)."""
        return complex(np.prod([s.ground_value(float(xi)) for s, xi in zip(self.spectra, x)]))

    def green(
        self,
        x: Sequence[float],
        y: Sequence[float],
        switch: float = 5.0,
        nodes: int = 48,
    ) -> float:
        """``G(x, y)`` of the operator shifted to its spectral bottom (d >= 3)."""
        if self.d < 3:
            raise ConfigError("the heat-kernel integral converges only for d >= 3")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kernels = [HeatKernel1D(ChainSpectrum(c, self.heat_cutoff)) for c in self.chains]
        r2 = float(np.sum((x - y) ** 2))
        if r2 == 0:
            raise ConfigError("x and y must differ")
        # the product is below e^-60 before this time
        t_min = min(switch / 2, r2 / (4 * 60 * max(k.stiffness for k in kernels)))
        s, w = gauss_legendre(nodes)
        edges = np.exp(np.linspace(math.log(t_min), math.log(switch), 4))
        ts_short, ws_short = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            u = 0.5 * (math.log(b) - math.log(a)) * s + 0.5 * (math.log(a) + math.log(b))
            ts_short.append(np.exp(u))
            ws_short.append(0.5 * (math.log(b) - math.log(a)) * w * np.exp(u))
        ts_short = np.concatenate(ts_short)
        ws_short = np.concatenate(ws_short)
        short = np.prod([k.short_time(ts_short, xi, yi) for k, xi, yi in zip(kernels, x, y)], axis=0)
        v_edges = [0.0, 0.025, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0]
        vs, wv = [], []
        for a, b in zip(v_edges[:-1], v_edges[1:]):
            vs.append(0.5 * (b - a) * s + 0.5 * (a + b))
            wv.append(0.5 * (b - a) * w)
        vs = np.concatenate(vs)
        wv = np.concatenate(wv)
        ts_long = switch / vs**2
        jac = 2 * switch / vs**3
        long = np.prod([k.long_time(ts_long, xi, yi) for k, xi, yi in zip(kernels, x, y)], axis=0)
        return float(np.sum(short * ws_short) + np.sum(long * jac * wv))

    def leading(self, x: Sequence[float], y: Sequence[float]) -> complex:
        """Leading large-distance term assembled from the 1D data."""
        d = self.d
        h = np.array([s.curvature() for s in self.spectra])
        r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        dist = float(np.sqrt(np.sum(r**2 / h)))
        rho = self.phi0(x) * np.conj(self.phi0(y)) * np.exp(1j * (r @ self.k0))
        return rho * math.gamma((d - 2) / 2) / (2 * math.pi ** (d / 2) * math.sqrt(float(np.prod(h))) * dist ** (d - 2))

    def to_dict(self) -> dict:
        return {
            "k0": self.k0.tolist(),
            "shift": self.shift,
            "H": self.hessian.tolist(),
            "delta": self.delta,
            "cutoff": self.cutoff,
        }


def separable_reference(specs: Sequence[PeriodicOperator | Chain], N1: int = 64) -> SeparableOracle:
    """Oracle for the sum of one-dimensional operators ``specs``."""
    if N1 < 64:
        raise ConfigError(f"the 1D oracle cutoff must be at least 64, got {N1}")
    chains = [s if isinstance(s, Chain) else Chain.from_operator(s) for s in specs]
    return SeparableOracle(chains, N1)


def schrodinger_reference(coefficients: dict, d: int = 3, N1: int = 64) -> SeparableOracle:
    """Oracle for ``-Laplacian + sum_i V(x_i)``, ``V`` given by Fourier coefficients."""
    return separable_reference([Chain.schrodinger(coefficients)] * d, N1)


DEFAULT_TOLERANCES = {"k0": 1e-8, "shift": 1e-8, "H": 1e-4, "delta": 1e-6, "phi0": 1e-6}


@dataclass
class OracleReport:
    """Per-field differences between pipeline and oracle data."""

    fields: dict

    @property
    def passed(self) -> bool:
        return all(f["passed"] for f in self.fields.values())

    @property
    def failing(self) -> list[str]:
        return [name for name, f in self.fields.items() if not f["passed"]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failing": self.failing, "fields": self.fields}


def compare_to_oracle(
    cert: EdgeCertificate,
    oracle: SeparableOracle,
    shift: float | None = None,
    tolerances: dict | None = None,
) -> OracleReport:
    """Compare a certificate (and optionally the edge shift) with the oracle.

    ``k0`` and ``shift`` use absolute differences; ``H`` and ``delta`` are
    relative, ``phi0`` is the relative sup-difference of ``|phi0|^2`` on a
    few sample points (the phase is a gauge choice).
    """
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    fields = {}

    def put(name: str, value, reference, diff: float) -> None:
        fields[name] = {"value": value, "reference": reference, "diff": diff, "tol": tol[name], "passed": diff <= tol[name]}

    k_diff = float(np.max(np.abs(reduce_to_zone(np.asarray(cert.k0) - oracle.k0))))
    put("k0", reduce_to_zone(cert.k0).tolist(), oracle.k0.tolist(), k_diff)
    if shift is not None:
        put("shift", shift, oracle.shift, abs(shift - oracle.shift))
    h_ref = oracle.hessian
    put("H", np.asarray(cert.H).tolist(), h_ref.tolist(), float(np.max(np.abs(cert.H - h_ref)) / np.max(np.abs(h_ref))))
    put("delta", cert.delta, oracle.delta, abs(cert.delta - oracle.delta) / oracle.delta)
    pts = np.random.default_rng(0).random((8, oracle.d))
    mine = np.abs(cert.phi0.periodic(pts)) ** 2 / cert.phi0_norm**2
    ref = np.abs(np.array([oracle.phi0(p) for p in pts])) ** 2
    put("phi0", None, None, float(np.max(np.abs(mine - ref)) / np.max(ref)))
    return OracleReport(fields)


__all__ = [
    "Chain",
    "ChainSpectrum",
    "DEFAULT_TOLERANCES",
    "HeatKernel1D",
    "OracleReport",
    "SeparableOracle",
    "compare_to_oracle",
    "schrodinger_reference",
    "separable_reference",
]
