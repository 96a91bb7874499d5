"""Periodic second-order operators with trigonometric-polynomial coefficients.

An operator on the lattice Z^d has the divergence form

    L = sum_{j,l} (D_j + b_j) a_jl (D_l + b_l) + c,      D = -i grad,

with a real symmetric metric ``a``, a real vector potential ``b`` and a real
scalar ``c``.  Each coefficient is a :class:`FourierField`: a finite Fourier
series over the dual lattice 2*pi*Z^d, stored densely on the cube of integer
frequencies ``[-F, F]^d``.  Frequencies are always addressed by their
integer index ``n``; the physical frequency is ``G = 2*pi*n``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np
from scipy import signal

from .errors import ConfigError, EmptyCoefficients, NonSymmetricMetric, NotElliptic

SYMMETRY_TOL = 1e-12
REAL_TOL = 1e-12

_RANKS = ("scalar", "vector", "matrix")


def _value_shape(rank: str, d: int) -> tuple[int, ...]:
    return {"scalar": (), "vector": (d,), "matrix": (d, d)}[rank]


def _reverse_frequencies(arr: np.ndarray, d: int) -> np.ndarray:
    """Map the coefficient at n to -n (centered storage makes this a flip)."""
    return arr[(slice(None, None, -1),) * d]


@dataclass(frozen=True, eq=False)
class FourierField:
    """Finite Fourier series ``f(x) = sum_n coeffs[n] exp(2 pi i n.x)``.

    ``coeffs`` has shape ``(2F+1,)*d + value_shape`` with the zero frequency
    at index ``F`` along every spatial axis.
    """

    rank: str
    d: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.rank not in _RANKS:
            raise ConfigError(f"unknown field rank {self.rank!r}")
        if not 1 <= self.d <= 4:
            raise ConfigError(f"dimension must be in 1..4, got {self.d}")
        arr = np.asarray(self.coeffs, dtype=complex)
        vshape = _value_shape(self.rank, self.d)
        spatial = arr.shape[: self.d]
        if arr.shape[self.d :] != vshape or len(set(spatial)) != 1 or spatial[0] % 2 == 0:
            raise ConfigError(f"malformed coefficient array of shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, rank: str, d: int) -> "FourierField":
        return cls(rank, d, np.zeros((1,) * d + _value_shape(rank, d), dtype=complex))

    @classmethod
    def constant(cls, rank: str, d: int, value: Any) -> "FourierField":
        arr = np.zeros((1,) * d + _value_shape(rank, d), dtype=complex)
        arr[(0,) * d] = value
        return cls(rank, d, arr)

    @classmethod
    def from_terms(cls, rank: str, d: int, terms: Mapping[tuple[int, ...], Any]) -> "FourierField":
        """Build from ``{integer frequency: amplitude}``; amplitudes accumulate."""
        F = max((max(abs(v) for v in n) for n in terms), default=0)
        arr = np.zeros((2 * F + 1,) * d + _value_shape(rank, d), dtype=complex)
        for n, value in terms.items():
            if len(n) != d:
                raise ConfigError(f"frequency {n} does not have {d} components")
            arr[tuple(F + v for v in n)] += value
        return cls(rank, d, arr)

    @property
    def support(self) -> int:
        """Largest frequency index ``F`` stored (the series may be narrower)."""
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def value_shape(self) -> tuple[int, ...]:
        return _value_shape(self.rank, self.d)

    @property
    def effective_support(self) -> int:
        """Largest index carrying a nonzero amplitude."""
        F = self.support
        axes = tuple(range(self.d, self.coeffs.ndim))
        mags = np.abs(self.coeffs).max(axis=axes) if axes else np.abs(self.coeffs)
        idx = np.argwhere(mags > 0)
        return int(np.abs(idx - F).max()) if idx.size else 0

    @property
    def is_constant(self) -> bool:
        return self.effective_support == 0

    def mean(self) -> np.ndarray | complex:
        """Zero-frequency amplitude (the cell average)."""
        return self.coeffs[(self.support,) * self.d]

    def coefficient(self, n: tuple[int, ...]) -> np.ndarray | complex:
        F = self.support
        if any(abs(v) > F for v in n):
            return np.zeros(self.value_shape, dtype=complex) if self.value_shape else 0j
        return self.coeffs[tuple(F + v for v in n)]

    def items(self) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        """Nonzero ``(n, amplitude)`` pairs in lexicographic order of ``n``."""
        F = self.support
        for idx in itertools.product(range(2 * F + 1), repeat=self.d):
            value = self.coeffs[idx]
            if np.any(value != 0):
                yield tuple(i - F for i in idx), value

    def padded(self, F: int) -> np.ndarray:
        """Coefficient array zero-padded (or cropped) to support ``F``."""
        own = self.support
        out = np.zeros((2 * F + 1,) * self.d + self.value_shape, dtype=complex)
        lo = max(own - F, 0)
        dst = max(F - own, 0)
        width = 2 * min(own, F) + 1
        src = tuple(slice(lo, lo + width) for _ in range(self.d))
        tgt = tuple(slice(dst, dst + width) for _ in range(self.d))
        out[tgt] = self.coeffs[src]
        return out

    def scaled(self, factor: complex) -> "FourierField":
        return FourierField(self.rank, self.d, self.coeffs * factor)

    def sample_grid(self, n: int) -> np.ndarray:
        """Values on the grid ``x = j/n`` (shape ``(n,)*d + value_shape``)."""
        F = self.support
        if n < 2 * F + 1:
            raise ConfigError(f"grid of {n} points per axis cannot resolve support {F}")
        full = np.zeros((n,) * self.d + self.value_shape, dtype=complex)
        for idx in itertools.product(range(2 * F + 1), repeat=self.d):
            full[tuple((i - F) % n for i in idx)] += self.coeffs[idx]
        axes = tuple(range(self.d))
        return np.fft.ifftn(full, axes=axes) * n**self.d


def _convolve(f: np.ndarray, g: np.ndarray, d: int) -> np.ndarray:
    """Fourier coefficients of a pointwise product of two scalar series."""
    return signal.convolve(f, g, mode="full", method="direct") if d else f * g


def field_product(a: FourierField, b: FourierField) -> FourierField:
    """Pointwise product ``a b`` for matrix-vector or vector-vector (dot) pairs."""
    d = a.d
    if a.rank == "matrix" and b.rank == "vector":
        out = None
        for j in range(d):
            acc = sum(_convolve(a.coeffs[..., j, l], b.coeffs[..., l], d) for l in range(d))
            out = acc[..., None] if out is None else np.concatenate([out, acc[..., None]], axis=-1)
        return FourierField("vector", d, out)
    if a.rank == "vector" and b.rank == "vector":
        acc = sum(_convolve(a.coeffs[..., j], b.coeffs[..., j], d) for j in range(d))
        return FourierField("scalar", d, acc)
    raise ConfigError(f"unsupported product {a.rank} x {b.rank}")


def field_sum(*fields: FourierField) -> FourierField:
    F = max(f.support for f in fields)
    return FourierField(fields[0].rank, fields[0].d, sum(f.padded(F) for f in fields))


def evaluate_field(field: FourierField, x: Any) -> Any:
    """Fourier synthesis of ``field`` at the point ``x``.

    Returns a float (or real array) when the imaginary residue is below
    ``1e-12``, the complex value otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (field.d,):
        raise ConfigError(f"point must have {field.d} components")
    # reduce to the unit cell first so that lattice translates agree bitwise
    x = x - np.floor(x)
    F = field.support
    grid = np.arange(-F, F + 1)
    phases = [np.exp(2j * np.pi * grid * xi) for xi in x]
    value = field.coeffs
    for ph in phases:
        value = np.tensordot(ph, value, axes=(0, 0))
    if np.max(np.abs(np.imag(value)), initial=0.0) < REAL_TOL:
        value = np.real(value)
    return value.item() if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class PeriodicOperator:
    """Immutable operator on Z^d.

    ``sign`` is -1 once the operator has been flipped: the stored ``a`` and
    ``c`` are then those of ``-(L_orig - shift)`` and ``theta`` refers to the
    unflipped metric ``sign * a``.
    """

    d: int
    a: FourierField
    b: FourierField
    c: FourierField
    theta: float
    sign: int = 1
    shift: float = 0.0
    name: str = ""
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    @property
    def flipped(self) -> bool:
        return self.sign < 0

    @property
    def support(self) -> int:
        return max(self.a.effective_support, self.b.effective_support, self.c.effective_support)

    @property
    def has_vector_potential(self) -> bool:
        return bool(np.any(self.b.coeffs != 0))

    @property
    def time_reversal_symmetric(self) -> bool:
        """True when b vanishes; the fields are real so L(-k) = conj L(k)."""
        return not self.has_vector_potential

    def to_description(self) -> dict:
        """JSON-ready term-list description (round-trips via build_operator)."""
        desc: dict[str, Any] = {"d": self.d, "name": self.name}
        unsigned_a = self.a.scaled(self.sign)
        unsigned_c = self.c.scaled(self.sign)
        c_coeffs = unsigned_c.coeffs.copy()
        c_coeffs[(unsigned_c.support,) * self.d] += self.shift
        unsigned_c = FourierField("scalar", self.d, c_coeffs)
        desc["a"] = [
            {"G": list(n), "entry": [j, l], "re": float(v[j, l].real), "im": float(v[j, l].imag)}
            for n, v in unsigned_a.items()
            for j in range(self.d)
            for l in range(self.d)
            if v[j, l] != 0
        ]
        desc["b"] = [
            {"G": list(n), "entry": [j], "re": float(v[j].real), "im": float(v[j].imag)}
            for n, v in self.b.items()
            for j in range(self.d)
            if v[j] != 0
        ]
        desc["c"] = [
            {"G": list(n), "re": float(v.real), "im": float(v.imag)} for n, v in unsigned_c.items()
        ]
        # an empty term list means "given but empty", so omit absent fields
        for key in ("a", "b", "c"):
            if not desc[key]:
                del desc[key]
        desc["shift"] = self.shift
        desc["flip"] = self.flipped
        return desc


@dataclass(frozen=True)
class ValidationReport:
    theta_estimate: float
    is_real: bool
    is_symmetric: bool
    sample_grid_size: int

    def to_dict(self) -> dict:
        return {
            "theta_estimate": self.theta_estimate,
            "is_real": self.is_real,
            "is_symmetric": self.is_symmetric,
            "sample_grid_size": self.sample_grid_size,
        }


def _conjugate_symmetrize(f: FourierField, label: str) -> FourierField:
    rev = np.conj(_reverse_frequencies(f.coeffs, f.d))
    violation = float(np.max(np.abs(f.coeffs - rev), initial=0.0))
    if violation > REAL_TOL:
        warnings.warn(
            f"coefficient field {label} is not real-valued (violation {violation:.3g}); "
            "keeping its real part",
            stacklevel=3,
        )
    return FourierField(f.rank, f.d, 0.5 * (f.coeffs + rev))


def _metric_symmetrize(a: FourierField, auto: bool) -> FourierField:
    swapped = np.swapaxes(a.coeffs, -1, -2)
    asym = float(np.max(np.abs(a.coeffs - swapped), initial=0.0))
    if asym > SYMMETRY_TOL:
        if not auto:
            raise NonSymmetricMetric(f"metric asymmetry {asym:.3g} exceeds {SYMMETRY_TOL}")
        warnings.warn(f"metric symmetrized (asymmetry {asym:.3g})", stacklevel=3)
    return FourierField("matrix", a.d, 0.5 * (a.coeffs + swapped))


def _parse_terms(terms: Any, rank: str, d: int, label: str) -> FourierField:
    if not isinstance(terms, list):
        raise ConfigError(f"field {label!r} must be a list of terms")
    if not terms:
        raise EmptyCoefficients(f"field {label!r} is given but has no terms")
    table: dict[tuple[int, ...], np.ndarray] = {}
    vshape = _value_shape(rank, d)
    for term in terms:
        try:
            n = tuple(int(v) for v in term["G"])
            if any(float(v) != int(v) for v in term["G"]):
                raise ValueError
            amp = complex(float(term.get("re", 0.0)), float(term.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed term in {label!r}: {term!r}") from exc
        if len(n) != d:
            raise ConfigError(f"term {term!r} in {label!r} needs {d} frequency components")
        slot = table.setdefault(n, np.zeros(vshape, dtype=complex))
        if rank == "scalar":
            table[n] = slot + amp
            continue
        entry = term.get("entry")
        if isinstance(entry, int):
            entry = [entry]
        if not isinstance(entry, (list, tuple)) or len(entry) != len(vshape) or any(not 0 <= int(e) < d for e in entry):
            raise ConfigError(f"term {term!r} in {label!r} needs a valid 0-based 'entry'")
        slot[tuple(int(e) for e in entry)] += amp
    return FourierField.from_terms(rank, d, table)


def _finish(
    d: int,
    a: FourierField,
    b: FourierField,
    c: FourierField,
    *,
    auto_symmetrize: bool = True,
    name: str = "",
) -> PeriodicOperator:
    a = _metric_symmetrize(_conjugate_symmetrize(a, "a"), auto_symmetrize)
    b = _conjugate_symmetrize(b, "b")
    c = _conjugate_symmetrize(c, "c")
    op = PeriodicOperator(d=d, a=a, b=b, c=c, theta=0.0, name=name)
    report = validate(op)
    return replace(op, theta=report.theta_estimate, _cache={})


def build_operator(spec: Mapping[str, Any], *, auto_symmetrize: bool = True) -> PeriodicOperator:
    """Build an operator from a structured description.

    Three forms are accepted:

    * term lists ``{"d", "a", "b", "c"}`` where every term has an integer
      frequency index ``"G"`` (the frequency is ``2*pi*G``), amplitude
      ``"re"``/``"im"`` and, for ``a`` and ``b``, a 0-based ``"entry"``;
    * ``{"catalog": name, ...params}`` for a built-in operator;
    * ``{"separable": [one-dimensional descriptions]}`` for a sum of
      one-dimensional operators acting on separate coordinates.

    Optional ``"shift"`` (number) and ``"flip"`` (bool) apply
    :func:`shift_and_flip` to the result.
    """
    if not isinstance(spec, Mapping):
        raise ConfigError("operator description must be a JSON object")
    if "catalog" in spec:
        params = {k: v for k, v in spec.items() if k not in {"catalog", "shift", "flip"}}
        op = catalog(spec["catalog"], **params)
    elif "separable" in spec:
        parts = spec["separable"]
        if not isinstance(parts, list) or not parts:
            raise EmptyCoefficients("'separable' needs a non-empty list of 1D operators")
        ops = [build_operator({**p, "d": 1}, auto_symmetrize=auto_symmetrize) for p in parts]
        op = separable_operator(ops, name=str(spec.get("name", "separable")))
    else:
        try:
            d = int(spec["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("operator description needs an integer 'd'") from exc
        if not 1 <= d <= 4:
            raise ConfigError(f"dimension must be in 1..4, got {d}")
        a = _parse_terms(spec["a"], "matrix", d, "a") if "a" in spec else FourierField.constant("matrix", d, np.eye(d))
        b = _parse_terms(spec["b"], "vector", d, "b") if "b" in spec else FourierField.zeros("vector", d)
        c = _parse_terms(spec["c"], "scalar", d, "c") if "c" in spec else FourierField.zeros("scalar", d)
        op = _finish(d, a, b, c, auto_symmetrize=auto_symmetrize, name=str(spec.get("name", "")))
    shift = spec.get("shift", 0.0)
    flip = bool(spec.get("flip", False))
    if not isinstance(shift, (int, float)):
        raise ConfigError("'shift' must be a number")
    if shift or flip:
        op = shift_and_flip(op, float(shift), flip)
    return op


def load_operator(path: str | Path) -> PeriodicOperator:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read operator file {path}: {exc}") from exc
    return build_operator(spec)


def validate(op: PeriodicOperator, grid_n: int | None = None) -> ValidationReport:
    """Sample the coefficients to estimate ellipticity and reality.

    The metric is checked on the grid of ``grid_n`` points per axis and once
    more on a grid twice as fine; ``theta_estimate`` is the smaller of the two
    minima of the lowest eigenvalue of ``a(x)``.  For a flipped operator the
    unflipped metric ``-a`` is examined.
    """
    F = max(op.a.support, op.b.support, op.c.support)
    if grid_n is None:
        grid_n = 2 * F + 1
    if grid_n < 2 * F + 1:
        raise ConfigError(f"grid_n={grid_n} is below 2*F_max+1={2 * F + 1}")
    theta = math.inf
    imag = 0.0
    asym = 0.0
    for n in (grid_n, 2 * grid_n):
        a = op.a.sample_grid(n) * op.sign
        imag = max(
            imag,
            float(np.max(np.abs(a.imag))),
            float(np.max(np.abs(op.b.sample_grid(n).imag))),
            float(np.max(np.abs(op.c.sample_grid(n).imag))),
        )
        asym = max(asym, float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))))
        herm = 0.5 * (a.real + np.swapaxes(a.real, -1, -2))
        theta = min(theta, float(np.linalg.eigvalsh(herm.reshape(-1, op.d, op.d)).min()))
    if theta <= 0:
        raise NotElliptic(f"metric is not positive definite (min eigenvalue {theta:.6g})")
    return ValidationReport(
        theta_estimate=theta,
        is_real=imag < REAL_TOL,
        is_symmetric=asym < SYMMETRY_TOL,
        sample_grid_size=grid_n,
    )


def shift_and_flip(op: PeriodicOperator, shift: float, flip: bool) -> PeriodicOperator:
    """Return ``L' = s * (L - shift)`` with ``s = -1`` when ``flip`` is set.

    Fiber eigenvalues become ``s * (lambda_j(k) - shift)``.  A band maximum at
    ``shift`` therefore turns into a minimum at zero when ``flip`` is true.
    ``b`` is untouched; ``a`` and ``c`` change sign under a flip.
    """
    s = -1 if flip else 1
    c = op.c.coeffs.copy()
    c[(op.c.support,) * op.d] -= shift
    return PeriodicOperator(
        d=op.d,
        a=op.a.scaled(s),
        b=op.b,
        c=FourierField("scalar", op.d, c * s),
        theta=op.theta,
        sign=op.sign * s,
        shift=op.shift + op.sign * shift,
        name=op.name,
    )


# ---------------------------------------------------------------------------
# catalog


def _unit(d: int, i: int, v: int = 1) -> tuple[int, ...]:
    return tuple(v if k == i else 0 for k in range(d))


def free_laplacian(d: int = 3) -> PeriodicOperator:
    return _finish(
        d,
        FourierField.constant("matrix", d, np.eye(d)),
        FourierField.zeros("vector", d),
        FourierField.zeros("scalar", d),
        name="free_laplacian",
    )


def separable_schrodinger(d: int = 3, q: float = 2.0) -> PeriodicOperator:
    """``-Laplacian + sum_i q cos(2 pi x_i)``."""
    terms = {}
    for i in range(d):
        terms[_unit(d, i)] = q / 2
        terms[_unit(d, i, -1)] = q / 2
    return _finish(
        d,
        FourierField.constant("matrix", d, np.eye(d)),
        FourierField.zeros("vector", d),
        FourierField.from_terms("scalar", d, terms),
        name="separable_schrodinger",
    )


def weighted_laplacian(d: int = 3, amplitude: float = 1.0) -> PeriodicOperator:
    """``-div (2 + amplitude cos(2 pi x_1)) grad``."""
    eye = np.eye(d)
    terms = {
        (0,) * d: 2 * eye,
        _unit(d, 0): amplitude / 2 * eye,
        _unit(d, 0, -1): amplitude / 2 * eye,
    }
    return _finish(
        d,
        FourierField.from_terms("matrix", d, terms),
        FourierField.zeros("vector", d),
        FourierField.zeros("scalar", d),
        name="weighted_laplacian",
    )


def magnetic(d: int = 3, beta: float = 0.5) -> PeriodicOperator:
    """Free metric with vector potential ``b = (beta sin(2 pi x_2), 0, ...)``."""
    if d < 2:
        raise ConfigError("the magnetic example needs d >= 2")
    e0 = np.zeros(d, dtype=complex)
    e0[0] = 1.0
    terms = {_unit(d, 1): beta / 2j * e0, _unit(d, 1, -1): -beta / 2j * e0}
    return _finish(
        d,
        FourierField.constant("matrix", d, np.eye(d)),
        FourierField.from_terms("vector", d, terms),
        FourierField.zeros("scalar", d),
        name="magnetic",
    )


CATALOG = {
    "free_laplacian": free_laplacian,
    "separable_schrodinger": separable_schrodinger,
    "weighted_laplacian": weighted_laplacian,
    "magnetic": magnetic,
}


def catalog(name: str, **params: Any) -> PeriodicOperator:
    try:
        factory = CATALOG[name]
    except KeyError as exc:
        raise ConfigError(f"unknown catalog operator {name!r}; choose from {sorted(CATALOG)}") from exc
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from exc


def _embed(field: FourierField, d: int, axis: int) -> FourierField:
    """Lift a one-dimensional scalar series to depend on coordinate ``axis``."""
    F = field.support
    arr = np.zeros((2 * F + 1,) * d, dtype=complex)
    center = [F] * d
    center[axis] = slice(None)
    arr[tuple(center)] = field.coeffs.reshape(-1)
    return FourierField("scalar", d, arr)


def separable_operator(ops: list[PeriodicOperator], name: str = "separable") -> PeriodicOperator:
    """Sum of one-dimensional operators, the i-th acting on ``x_i``."""
    if any(o.d != 1 or o.flipped for o in ops):
        raise ConfigError("separable composition needs unflipped one-dimensional operators")
    d = len(ops)
    F = max(max(o.a.support, o.b.support, o.c.support) for o in ops)
    a = np.zeros((2 * F + 1,) * d + (d, d), dtype=complex)
    b = np.zeros((2 * F + 1,) * d + (d,), dtype=complex)
    c = np.zeros((2 * F + 1,) * d, dtype=complex)
    for i, o in enumerate(ops):
        ai = _embed(FourierField("scalar", 1, o.a.coeffs[..., 0, 0]), d, i).padded(F)
        bi = _embed(FourierField("scalar", 1, o.b.coeffs[..., 0]), d, i).padded(F)
        ci = _embed(o.c, d, i).padded(F)
        a[..., i, i] = ai
        b[..., i] = bi
        c += ci
    return _finish(
        d,
        FourierField("matrix", d, a),
        FourierField("vector", d, b),
        FourierField("scalar", d, c),
        name=name,
    )
