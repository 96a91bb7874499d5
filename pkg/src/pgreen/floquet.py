"""Plane-wave Galerkin fibers and the discrete Floquet transform.

The fiber ``L(k) = L(x, D + k)`` acts on periodic functions.  In the basis
``exp(i G.x)`` with ``G = 2*pi*n`` and ``max |n_i| <= N`` its matrix is a
quadratic polynomial in ``k``::

    L(k) = L0 + sum_m k_m L1_m + sum_{m,n} k_m k_n A_mn

where ``A_mn`` is convolution by the metric coefficient ``a_mn``.  Writing the
vector potential terms through ``v = a b`` and ``s = b.a.b`` makes every
matrix element exact: no intermediate frequency is ever truncated.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, CutoffTooSmall
from .operator import FourierField, PeriodicOperator, field_product, field_sum


def _axis_order(N: int) -> list[int]:
    return list(range(N + 1)) + list(range(-N, 0))


class PlaneWaveBasis:
    """Frequencies ``G = 2*pi*(n + center)`` with ``max |n_i| <= N``.

    Each axis is enumerated in FFT order ``0, 1, ..., N, -N, ..., -1`` and the
    axes are combined lexicographically, so position 0 is always ``n = 0``
    (relative to ``center``).
    """

    def __init__(self, d: int, N: int, center: Sequence[int] | None = None) -> None:
        if N < 0:
            raise ConfigError("cutoff N must be non-negative")
        self.d = int(d)
        self.N = int(N)
        self.center = np.zeros(d, dtype=int) if center is None else np.asarray(center, dtype=int)
        order = _axis_order(N)
        rel = np.array(list(itertools.product(order, repeat=d)), dtype=int).reshape(-1, d)
        self.indices = rel + self.center
        self.indices.setflags(write=False)

    @property
    def size(self) -> int:
        return (2 * self.N + 1) ** self.d

    @property
    def frequencies(self) -> np.ndarray:
        return 2 * np.pi * self.indices

    def plane_waves(self, x: np.ndarray) -> np.ndarray:
        """``exp(i G.x)`` for points ``x`` of shape ``(..., d)``; basis on the last axis."""
        return np.exp(1j * (np.asarray(x, dtype=float) @ self.frequencies.T))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PlaneWaveBasis)
            and self.d == other.d
            and self.N == other.N
            and bool(np.all(self.center == other.center))
        )

    def __hash__(self) -> int:
        return hash((self.d, self.N, tuple(self.center)))

    def __repr__(self) -> str:
        return f"PlaneWaveBasis(d={self.d}, N={self.N}, center={self.center.tolist()})"


@dataclass(frozen=True, eq=False)
class BlochMatrix:
    """Galerkin matrix of a fiber (or of one of its k-derivatives).

    Diagonal matrices keep only their diagonal in ``data``; ``entries`` always
    returns the dense ``m x m`` array.
    """

    k: np.ndarray
    basis: PlaneWaveBasis
    data: np.ndarray
    sign: int = 1
    asymmetry: float = 0.0

    @property
    def is_diagonal(self) -> bool:
        return self.data.ndim == 1

    @property
    def entries(self) -> np.ndarray:
        return np.diag(self.data) if self.is_diagonal else self.data

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def norm(self) -> float:
        """Max absolute row sum, an upper bound for the spectral norm."""
        if self.is_diagonal:
            return float(np.max(np.abs(self.data), initial=0.0))
        return float(np.abs(self.data).sum(axis=1).max())

    def to_json(self) -> str:
        """Row-major dump of complex entries as ``[re, im]`` pairs."""
        dense = self.entries
        return json.dumps(
            {
                "k": np.asarray(self.k, dtype=float).tolist(),
                "N": self.basis.N,
                "indices": self.basis.indices.tolist(),
                "entries": [[float(z.real), float(z.imag)] for z in dense.reshape(-1)],
            }
        )


def _conv_matrix(field: np.ndarray, F: int, basis: PlaneWaveBasis) -> np.ndarray:
    """Dense convolution matrix ``M[p, q] = f(n_p - n_q)`` of a scalar series."""
    idx = basis.indices
    diff = idx[:, None, :] - idx[None, :, :]
    inside = np.all(np.abs(diff) <= F, axis=-1)
    width = 2 * F + 1
    flat = np.zeros(diff.shape[:2], dtype=np.int64)
    for axis in range(basis.d):
        flat = flat * width + (diff[..., axis] + F)
    values = field.reshape(-1)[np.where(inside, flat, 0)]
    return np.where(inside, values, 0.0)


class _Piece:
    """Either ``scalar * I`` or a dense matrix; keeps constant-coefficient fibers diagonal."""

    __slots__ = ("diag", "dense")

    def __init__(self, diag: np.ndarray | None = None, dense: np.ndarray | None = None) -> None:
        self.diag = diag
        self.dense = dense


class BlochAssembler:
    """Precomputed k-independent pieces of the fibers of one operator."""

    def __init__(self, op: PeriodicOperator, N: int, center: Sequence[int] | None = None) -> None:
        if N < op.support:
            raise CutoffTooSmall(
                f"cutoff N={N} gives {2 * N + 1} modes per axis, below the coefficient "
                f"support width {2 * op.support + 1}"
            )
        self.op = op
        self.d = op.d
        self.basis = PlaneWaveBasis(op.d, N, center)
        self.sign = op.sign
        G = self.basis.frequencies
        d = self.d
        m = self.basis.size

        v = field_product(op.a, op.b)
        s = field_sum(field_product(op.b, v), op.c)

        def conv(f: np.ndarray, F: int, constant: bool) -> _Piece:
            if constant:
                return _Piece(diag=np.full(m, f.reshape(-1)[f.size // 2], dtype=complex))
            return _Piece(dense=_conv_matrix(f, F, self.basis))

        a_const = op.a.is_constant
        self.A = {}
        for p in range(d):
            for q in range(p, d):
                self.A[p, q] = conv(op.a.coeffs[..., p, q], op.a.support, a_const)
                self.A[q, p] = self.A[p, q]
        V = [conv(v.coeffs[..., j], v.support, v.is_constant) for j in range(d)]
        S = conv(s.coeffs, s.support, s.is_constant)

        def scaled(piece: _Piece, left: np.ndarray | None, right: np.ndarray | None) -> _Piece:
            if piece.diag is not None:
                w = piece.diag.copy()
                if left is not None:
                    w = w * left
                if right is not None:
                    w = w * right
                return _Piece(diag=w)
            M = piece.dense
            if left is not None:
                M = left[:, None] * M
            if right is not None:
                M = M * right[None, :]
            return _Piece(dense=M)

        terms = [S]
        for j in range(d):
            for l in range(d):
                terms.append(scaled(self.A[j, l], G[:, j], G[:, l]))
            terms.append(scaled(V[j], G[:, j], None))
            terms.append(scaled(V[j], None, G[:, j]))
        self.L0 = _combine(terms, m)
        self.L1 = []
        for mm in range(d):
            parts = [_Piece(diag=V[mm].diag * 2) if V[mm].diag is not None else _Piece(dense=2 * V[mm].dense)]
            for l in range(d):
                parts.append(scaled(self.A[mm, l], None, G[:, l]))
                parts.append(scaled(self.A[l, mm], G[:, l], None))
            self.L1.append(_combine(parts, m))
        self.diagonal = self.L0.dense is None and all(p.dense is None for p in self.L1) and a_const

    # -- evaluation -----------------------------------------------------

    def matrix(self, k: Sequence[float]) -> BlochMatrix:
        k = np.asarray(k, dtype=float)
        if k.shape != (self.d,):
            raise ConfigError(f"quasimomentum must have {self.d} components")
        pieces = [(1.0, self.L0)]
        pieces += [(k[m], self.L1[m]) for m in range(self.d)]
        pieces += [(k[p] * k[q], self.A[p, q]) for p in range(self.d) for q in range(self.d)]
        return self._finalize(k, _weighted(pieces, self.basis.size))

    def derivative(self, k: Sequence[float], m: int) -> BlochMatrix:
        k = np.asarray(k, dtype=float)
        pieces = [(1.0, self.L1[m])]
        pieces += [(2 * k[n], self.A[m, n]) for n in range(self.d)]
        return self._finalize(k, _weighted(pieces, self.basis.size))

    def second_derivative(self, m: int, n: int) -> BlochMatrix:
        data = _weighted([(2.0, self.A[m, n])], self.basis.size)
        return self._finalize(np.zeros(self.d), data)

    def matrices(self, ks: np.ndarray) -> np.ndarray:
        """Stack of dense fiber matrices for quasimomenta ``ks`` of shape ``(n, d)``.

        Every piece is Hermitian by construction, so no symmetrization pass
        is made here (unlike :meth:`matrix`).
        """
        ks = np.asarray(ks, dtype=float)
        n = len(ks)
        m = self.basis.size
        out = np.empty((n, m, m), dtype=complex)
        out[:] = self.L0.dense if self.L0.dense is not None else 0.0
        diag = np.zeros((n, m), dtype=complex)
        if self.L0.diag is not None:
            diag += self.L0.diag[None]
        coeffs = [(ks[:, q], self.L1[q]) for q in range(self.d)]
        coeffs += [(ks[:, p] * ks[:, q], self.A[p, q]) for p in range(self.d) for q in range(self.d)]
        for w, piece in coeffs:
            if piece.dense is not None:
                out += w[:, None, None] * piece.dense[None]
            if piece.diag is not None:
                diag += w[:, None] * piece.diag[None]
        idx = np.arange(m)
        out[:, idx, idx] += diag
        return out

    def diagonals(self, ks: np.ndarray) -> np.ndarray:
        """Diagonals of the fibers when the operator has constant coefficients."""
        if not self.diagonal:
            raise ConfigError("fibers are not diagonal for this operator")
        ks = np.asarray(ks, dtype=float)
        out = np.outer(np.ones(len(ks)), self.L0.diag)
        for q in range(self.d):
            out = out + ks[:, q : q + 1] * self.L1[q].diag[None]
        for p in range(self.d):
            for q in range(self.d):
                out = out + (ks[:, p] * ks[:, q])[:, None] * self.A[p, q].diag[None]
        return out.real

    def _finalize(self, k: np.ndarray, data: np.ndarray) -> BlochMatrix:
        if data.ndim == 1:
            asym = float(np.max(np.abs(data.imag), initial=0.0))
            return BlochMatrix(k, self.basis, data.real.astype(complex), self.sign, asym)
        herm = np.conj(data.T)
        asym = float(np.max(np.abs(data - herm), initial=0.0))
        return BlochMatrix(k, self.basis, 0.5 * (data + herm), self.sign, asym)


def _combine(pieces: list[_Piece], m: int) -> _Piece:
    diag = np.zeros(m, dtype=complex)
    dense = None
    for p in pieces:
        if p.diag is not None:
            diag = diag + p.diag
        if p.dense is not None:
            dense = p.dense.copy() if dense is None else dense + p.dense
    if dense is None:
        return _Piece(diag=diag)
    dense[np.arange(m), np.arange(m)] += diag
    return _Piece(dense=dense)


def _weighted(pieces: list[tuple[float, _Piece]], m: int) -> np.ndarray:
    diag = np.zeros(m, dtype=complex)
    dense = None
    for w, p in pieces:
        if w == 0:
            continue
        if p.diag is not None:
            diag = diag + w * p.diag
        if p.dense is not None:
            dense = w * p.dense if dense is None else dense + w * p.dense
    if dense is None:
        return diag
    dense = dense.copy()
    dense[np.arange(m), np.arange(m)] += diag
    return dense


def assembler(op: PeriodicOperator, N: int, center: Sequence[int] | None = None) -> BlochAssembler:
    """Cached :class:`BlochAssembler` for ``(op, N, center)``."""
    key = ("assembler", int(N), None if center is None else tuple(int(c) for c in center))
    cached = op._cache.get(key)
    if cached is None:
        cached = BlochAssembler(op, N, center)
        op._cache[key] = cached
    return cached


def assemble_bloch(
    op: PeriodicOperator, k: Sequence[float], N: int, center: Sequence[int] | None = None
) -> BlochMatrix:
    """Galerkin matrix of ``L(x, D + k)`` in the plane-wave basis of cutoff ``N``.

    ``center`` shifts the frequency window by an integer vector; the fiber at
    ``k + 2*pi*e`` with ``center = -e`` is a permutation of the fiber at ``k``.
    """
    return assembler(op, N, center).matrix(k)


def assemble_dk(op: PeriodicOperator, k: Sequence[float], N: int, m: int) -> BlochMatrix:
    """Matrix of the derivative of the fiber with respect to ``k_m``."""
    _check_axis(op, m)
    return assembler(op, N).derivative(k, m)


def assemble_d2k(op: PeriodicOperator, N: int, m: int, n: int) -> BlochMatrix:
    """Matrix of multiplication by ``2 a_mn(x)``: the (constant) second k-derivative."""
    _check_axis(op, m)
    _check_axis(op, n)
    return assembler(op, N).second_derivative(m, n)


def _check_axis(op: PeriodicOperator, m: int) -> None:
    if not 0 <= m < op.d:
        raise ConfigError(f"axis {m} out of range for d={op.d}")


# ---------------------------------------------------------------------------
# functions on the torus and the Floquet transform


@dataclass(frozen=True, eq=False)
class TorusFunction:
    """``f(x) = exp(i k.x) sum_G c_G exp(i G.x)`` over a plane-wave basis."""

    basis: PlaneWaveBasis
    coeffs: np.ndarray
    k: np.ndarray

    def periodic(self, x: np.ndarray) -> np.ndarray:
        """The periodic factor ``sum_G c_G exp(i G.x)``."""
        return self.basis.plane_waves(x) @ self.coeffs

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(1j * (x @ np.asarray(self.k, dtype=float))) * self.periodic(x)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def with_phase(self, phase: complex) -> "TorusFunction":
        return TorusFunction(self.basis, self.coeffs * phase, self.k)


@dataclass(frozen=True, eq=False)
class LatticeSamples:
    """Samples of a compactly supported function on R^d.

    ``values[c]`` holds ``f(cells[c] + j/n)`` for the multi-index ``j`` on the
    ``n^d`` grid of the unit cell.
    """

    cells: np.ndarray
    values: np.ndarray

    @property
    def d(self) -> int:
        return self.cells.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], d: int, gamma_max: int, n: int) -> "LatticeSamples":
        """Sample ``f`` (vectorized over points of shape ``(..., d)``) on cells ``|gamma| <= gamma_max``."""
        cells = np.array(list(itertools.product(range(-gamma_max, gamma_max + 1), repeat=d)), dtype=int)
        local = np.stack(np.meshgrid(*([np.arange(n) / n] * d), indexing="ij"), axis=-1)
        pts = cells.reshape((-1,) + (1,) * d + (d,)) + local[None]
        return cls(cells, np.asarray(f(pts), dtype=complex))

    def norm_squared(self) -> float:
        """Riemann-sum ``L^2(R^d)`` norm squared on the sampling grid."""
        return float(np.sum(np.abs(self.values) ** 2)) / self.n**self.d


def floquet_transform(f: LatticeSamples, k: Sequence[float], N: int) -> TorusFunction:
    """``f_hat(k, x) = sum_gamma f(x + gamma) exp(-i k.gamma)`` as a torus function.

    The sampling grid must carry at least ``2N+1`` points per axis; with
    exactly ``2N+1`` the projection on the basis is lossless.
    """
    k = np.asarray(k, dtype=float)
    d, n = f.d, f.n
    if n < 2 * N + 1:
        raise ConfigError(f"{n} samples per axis cannot resolve cutoff N={N}")
    phases = np.exp(-1j * (f.cells @ k))
    fhat = np.tensordot(phases, f.values, axes=(0, 0))
    local = np.stack(np.meshgrid(*([np.arange(n) / n] * d), indexing="ij"), axis=-1)
    periodic = fhat * np.exp(-1j * (local @ k))
    spectrum = np.fft.fftn(periodic) / n**d
    basis = PlaneWaveBasis(d, N)
    coeffs = spectrum[tuple((basis.indices % n).T)]
    return TorusFunction(basis, coeffs, k)


def inverse_floquet(samples: Sequence[TorusFunction], x: Sequence[float], gamma: Sequence[int]) -> complex:
    """``f(x + gamma)`` as the k-grid average of ``f_hat(k, x) exp(i k.gamma)``.

    ``samples`` must be the transforms on a uniform grid over the zone; the
    trapezoid rule is exact once the grid has ``2*Gamma_max+1`` points per axis.
    """
    x = np.asarray(x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    total = np.array([s(x) * np.exp(1j * (np.asarray(s.k) @ gamma)) for s in samples])
    return complex(np.mean(total))


def uniform_zone_grid(M: int, d: int) -> np.ndarray:
    """Uniform ``M^d`` grid over the zone containing ``k = 0``; shape ``(M^d, d)``."""
    axis = 2 * np.pi * (np.arange(M) - M // 2) / M
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)
