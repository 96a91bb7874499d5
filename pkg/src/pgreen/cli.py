"""Command-line driver.

Every artifact embeds the run configuration and the library version.  Exit
codes: 0 success, 1 configuration error, 2 an edge assumption fails, 3
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .band import band_grid, certify, edge_shift
from .errors import ConfigError, NumericalFailure, PGreenError
from .green import (
    QuadratureSpec,
    fitted_exponent,
    free_kernel_quadrature,
    full_green,
    newtonian_constant,
    ratio_sweep,
    reduced_green,
)
from .operator import build_operator, shift_and_flip, validate
from .oracle import Chain, compare_to_oracle, separable_reference

COMMANDS = ("validate", "bands", "certify", "green", "sweep", "prop1", "oracle")


@dataclass
class RunConfig:
    command: str
    op: str | None
    N: int
    M: int
    nb: int | None
    band: int
    auto_shift: str | None
    radii: list[float] | None
    direction: list[float] | None
    x: list[float] | None
    y: list[float] | None
    kappa: float
    mu_radius: float
    which: str
    out: str
    quad: dict
    seed: int
    threads: str | None = field(default_factory=lambda: os.environ.get("PGREEN_THREADS"))

    def to_dict(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgreen", description="Green's function asymptotics at periodic spectral edges")
    parser.add_argument("--version", action="version", version=f"pgreen {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--op", help="operator description (JSON)")
    parser.add_argument("--N", type=int, default=6, help="plane-wave cutoff per axis")
    parser.add_argument("--M", type=int, default=8, help="zone grid points per axis")
    parser.add_argument("--nb", type=int, default=None, help="bands to compute")
    parser.add_argument("--band", type=int, default=1, help="band index (1-based)")
    parser.add_argument(
        "--auto-shift",
        choices=("min", "max"),
        default=None,
        help="shift the chosen band extremum to zero first (max also flips)",
    )
    parser.add_argument("--radii", type=_floats, default=None)
    parser.add_argument("--dir", type=_floats, default=None, dest="direction")
    parser.add_argument("--x", type=_floats, default=None)
    parser.add_argument("--y", type=_floats, default=None)
    parser.add_argument("--eps", type=float, default=0.0)
    parser.add_argument("--kappa", type=float, default=0.0, help="cubic perturbation for prop1")
    parser.add_argument("--mu-radius", type=float, default=6.0, help="cutoff radius for prop1")
    parser.add_argument("--which", choices=("reduced", "full", "both"), default="both")
    parser.add_argument("--out", default=".")
    parser.add_argument("--quad-depth", type=int, default=QuadratureSpec.depth)
    parser.add_argument("--quad-order", type=int, default=QuadratureSpec.order)
    parser.add_argument("--cheb", type=int, default=QuadratureSpec.cheb)
    parser.add_argument("--far-grid", type=int, default=None)
    parser.add_argument("--tol", type=float, default=QuadratureSpec.target)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def _config(args: argparse.Namespace, quad: QuadratureSpec) -> RunConfig:
    return RunConfig(
        command=args.command,
        op=args.op,
        N=args.N,
        M=args.M,
        nb=args.nb,
        band=args.band,
        auto_shift=args.auto_shift,
        radii=args.radii,
        direction=args.direction,
        x=args.x,
        y=args.y,
        kappa=args.kappa,
        mu_radius=args.mu_radius,
        which=args.which,
        out=args.out,
        quad=quad.to_dict(),
        seed=args.seed,
    )


def _read_description(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--op is required for this command")
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read operator file {path}: {exc}") from exc


def _operator(args: argparse.Namespace):
    op = build_operator(_read_description(args.op))
    shift = None
    if args.auto_shift:
        shift = edge_shift(op, args.band, args.M, args.N, side=args.auto_shift)
        op = shift_and_flip(op, shift, args.auto_shift == "max")
    return op, shift


def _envelope(config: RunConfig, payload: dict) -> dict:
    return {"pgreen_version": __version__, "config": config.to_dict(), "result": payload}


def _write_json(out: Path, name: str, config: RunConfig, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(_envelope(config, payload), indent=2, default=_jsonable) + "\n")
    return path


def _write_csv(out: Path, name: str, config: RunConfig, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    header = f"# pgreen {__version__}\n# config: {json.dumps(config.to_dict(), default=_jsonable)}\n"
    path.write_text(header + text)
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cmd_validate(args, config, out):
    op, _ = _operator(args)
    report = validate(op)
    _write_json(out, "validation.json", config, report.to_dict())


def _cmd_bands(args, config, out):
    op, shift = _operator(args)
    surface = band_grid(op, args.M, args.nb or args.band + 1, args.N)
    _write_json(out, "bands.json", config, {**surface.to_dict(), "shift": shift})


def _certificate(args, op):
    return certify(op, args.band, args.M, args.N, args.nb)


def _cmd_certify(args, config, out):
    op, shift = _operator(args)
    cert = _certificate(args, op)
    _write_json(out, "certificate.json", config, {**cert.to_dict(), "shift": shift})


def _cmd_green(args, config, out, quad):
    if args.x is None or args.y is None:
        raise ConfigError("green needs --x and --y")
    op, shift = _operator(args)
    cert = _certificate(args, op)
    results = {}
    if args.which in ("reduced", "both"):
        results["reduced"] = reduced_green(op, cert, args.x, args.y, quad).to_dict()
    if args.which in ("full", "both"):
        results["full"] = full_green(op, cert, args.x, args.y, quad).to_dict()
    _write_json(out, "green.json", config, {"shift": shift, "certificate": cert.to_dict(), **results})


def _cmd_sweep(args, config, out, quad):
    if not args.radii:
        raise ConfigError("sweep needs --radii")
    op, shift = _operator(args)
    cert = _certificate(args, op)
    direction = args.direction or [1.0] + [0.0] * (cert.d - 1)
    result = ratio_sweep(op, cert, direction, args.radii, quad, args.x)
    _write_csv(out, "sweep.csv", config, result.to_csv())
    _write_json(out, "sweep.json", config, {"shift": shift, "certificate": cert.to_dict(), **result.to_dict()})


def _cmd_prop1(args, config, out, quad):
    radii = args.radii or [4.0, 8.0, 16.0, 32.0]
    d = 3 if args.direction is None else len(args.direction)
    axis = np.zeros(d)
    axis[0] = 1.0
    if args.direction is not None:
        axis = np.asarray(args.direction, dtype=float)
        axis = axis / np.linalg.norm(axis)
    rows = []
    for R in radii:
        value = free_kernel_quadrature(R * axis, args.mu_radius, quad, args.kappa)
        reference = newtonian_constant(d) / R ** (d - 2)
        rows.append({"x0": R, "value": value.real, "imag": value.imag, "reference": reference,
                     "rel_deviation": abs(value / reference - 1)})
    devs = [r["rel_deviation"] for r in rows]
    exponent = fitted_exponent(radii, devs) if len(radii) > 1 and min(devs) > 0 else float("nan")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _write_csv(out, "prop1.csv", config, buf.getvalue())
    _write_json(out, "prop1.json", config, {"rows": rows, "fitted_exponent": exponent})


def _oracle_for(description: dict):
    if "separable" in description:
        parts = [build_operator({**p, "d": 1}) for p in description["separable"]]
        return separable_reference([Chain.from_operator(p) for p in parts])
    name = description.get("catalog")
    d = int(description.get("d", 3))
    if name == "free_laplacian":
        return separable_reference([Chain.schrodinger({})] * d)
    if name == "separable_schrodinger":
        q = float(description.get("q", 2.0))
        return separable_reference([Chain.schrodinger({1: q / 2, -1: q / 2})] * d)
    raise ConfigError("the oracle needs a separable operator (a 'separable' list or a separable catalog entry)")


def _cmd_oracle(args, config, out):
    description = _read_description(args.op)
    if description.get("shift") or description.get("flip"):
        raise ConfigError("give the oracle the unshifted operator; it shifts to the spectral bottom itself")
    oracle = _oracle_for(description)
    op = build_operator(description)
    shift = edge_shift(op, 1, args.M, args.N)
    cert = certify(shift_and_flip(op, shift, False), 1, args.M, args.N, args.nb)
    report = compare_to_oracle(cert, oracle, shift)
    _write_json(out, "oracle.json", config, {"oracle": oracle.to_dict(), "comparison": report.to_dict()})
    if not report.passed:
        raise NumericalFailure(f"pipeline disagrees with the oracle in: {', '.join(report.failing)}")


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        quad = QuadratureSpec(order=args.quad_order, depth=args.quad_depth, cheb=args.cheb, target=args.tol,
                              eps=args.eps, far_grid=args.far_grid)
        config = _config(args, quad)
        out = Path(args.out)
        handler = globals()[f"_cmd_{args.command}"]
        if args.command in ("green", "sweep", "prop1"):
            handler(args, config, out, quad)
        else:
            handler(args, config, out)
    except PGreenError as exc:
        print(f"pgreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        # failures outside the library's own taxonomy still count as numerical
        print(f"pgreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NumericalFailure.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
