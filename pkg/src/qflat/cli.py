"""Command-line driver: ``qflat <subcommand> [options]``.

Exit codes: 0 success (warnings allowed), 2 usage or configuration error,
3 I/O error.  Reports are written atomically into ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conventions import QflatError, check_even_dimension, conventions_block
from .curvature import ConformalMetric, curvature_report
from .field import RadialProfile
from .geometry import deficit_check, divergence_flux, geometry_series, hypothesis_report
from .potential import density_from_metric, monte_carlo_potential, normality_residual, pizzetti_coefficients
from .zoo import get_entry, list_entries

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    n: int = 4
    metric: str | None = None
    profile: Path | None = None
    alpha: float = 0.5
    lam: float = 1.0
    width: float = 0.1
    r_min: float = 1.0
    r_max: float | None = None
    count: int = 2000
    tol: float = 1e-6
    verdict_tol: float = 1e-4
    probes: list = field(default_factory=list)
    seed: int = 0
    samples: int = 0
    out: Path = Path(".")
    fmt: str = "both"

    def validate(self):
        check_even_dimension(self.n)
        if self.tol <= 0 or self.verdict_tol <= 0:
            raise UsageError("tolerances must be positive")
        if self.metric is None and self.profile is None:
            raise UsageError("choose a metric with --metric NAME or --profile CSV")
        if self.profile is not None and not self.profile.is_file():
            raise UsageError(f"profile {self.profile} does not exist")
        if self.fmt not in ("csv", "json", "both"):
            raise UsageError("--format must be csv, json or both")
        if self.count < 16:
            raise UsageError("--count must be at least 16")


# config key -> (attribute, converter)
_CONFIG_KEYS = {
    "n": ("n", int),
    "metric": ("metric", str),
    "profile": ("profile", Path),
    "alpha": ("alpha", float),
    "lambda": ("lam", float),
    "width": ("width", float),
    "r_min": ("r_min", float),
    "r_max": ("r_max", float),
    "count": ("count", int),
    "tol": ("tol", float),
    "verdict_tol": ("verdict_tol", float),
    "probes": ("probes", lambda s: [float(x) for x in s.replace(",", " ").split()]),
    "seed": ("seed", int),
    "samples": ("samples", int),
    "out": ("out", Path),
    "format": ("fmt", str),
}


def load_config(path: Path) -> RunConfig:
    """Read an INI-style file; keys may live in any section."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in _CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            attr, conv = _CONFIG_KEYS[key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
            if isinstance(value, Path) and not value.is_absolute():
                value = Path(path).parent / value
            setattr(cfg, attr, value)
    return cfg


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path)
    p.add_argument("--metric")
    p.add_argument("--profile", type=Path, help="CSV with header r,value")
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--width", type=float)
    p.add_argument("--rmin", dest="r_min", type=float, help="inner scale of the node layout")
    p.add_argument("--rmax", dest="r_max", type=float)
    p.add_argument("--count", type=int, help="number of nodes")
    p.add_argument("--tol", type=float)
    p.add_argument("--verdict-tol", dest="verdict_tol", type=float)
    p.add_argument("--probes", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="Monte-Carlo samples per probe (0 disables)")
    p.add_argument("--out", type=Path)
    p.add_argument("--format", dest="fmt", choices=("csv", "json", "both"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qflat", description="Q-curvature diagnostics for radial conformally flat metrics")
    sub = parser.add_subparsers(dest="command", required=True)
    zoo = sub.add_parser("zoo", help="list or show reference metrics")
    zoo.add_argument("action", choices=("list", "show"))
    zoo.add_argument("name", nargs="?")
    zoo.add_argument("--n", type=int)
    zoo.add_argument("--alpha", type=float)
    zoo.add_argument("--lambda", dest="lam", type=float)
    for name, text in (
        ("curvature", "pointwise curvature report"),
        ("normality", "normality residual h = u - v"),
        ("deficit", "Gauss-Bonnet deficit and isoperimetric limit"),
        ("isoperimetric", "area, volume and isoperimetric ratio series"),
        ("flux", "boundary flux of the Laplacian of R (n = 4)"),
    ):
        _common(sub.add_parser(name, help=text))
    piz = sub.add_parser("pizzetti", help="spherical-mean expansion coefficients")
    piz.add_argument("--k", type=int, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for attr in ("metric", "profile", "n", "alpha", "lam", "width", "r_min", "r_max", "count", "tol", "verdict_tol",
                 "probes", "seed", "samples", "out", "fmt"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    cfg.validate()
    return cfg


def _zoo_params(name: str, cfg) -> dict:
    params = {"n": cfg.n}
    if name in ("cone", "nonnormal"):
        params["alpha"] = cfg.alpha
        params["width"] = cfg.width
    if name == "sphere":
        params["lam"] = cfg.lam
    if getattr(cfg, "r_max", None) is not None:
        params["r_max"] = cfg.r_max
    params["count"] = cfg.count
    params["r_scale"] = cfg.r_min
    return params


def resolve_metric(cfg: RunConfig):
    """(metric, density or None, echo of the parameters)."""
    if cfg.profile is not None:
        prof = RadialProfile.from_csv(cfg.profile)
        if cfg.r_max is not None and cfg.r_max < prof.r_max:
            prof = RadialProfile(prof.nodes[prof.nodes <= cfg.r_max], prof.values[prof.nodes <= cfg.r_max])
        metric = ConformalMetric(cfg.n, prof, str(cfg.profile.name))
        return metric, None, {"profile": str(cfg.profile), "n": cfg.n}
    try:
        entry = get_entry(cfg.metric, **_zoo_params(cfg.metric, cfg))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    return entry.metric, entry.density, {"metric": entry.name, **entry.params}


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(cfg: RunConfig, stem: str, csv_text: str | None, payload: dict) -> list[Path]:
    written = []
    if csv_text is not None and cfg.fmt in ("csv", "both"):
        target = cfg.out / f"{stem}.csv"
        _atomic_write(target, csv_text)
        written.append(target)
    if cfg.fmt in ("json", "both"):
        target = cfg.out / f"{stem}.json"
        _atomic_write(target, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        written.append(target)
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _series_csv(header: str, rows) -> str:
    lines = [header]
    lines += [",".join(f"{x:.17g}" for x in row) for row in rows]
    return "\n".join(lines) + "\n"


# --- subcommands -------------------------------------------------------------------------


def cmd_zoo(args) -> int:
    if args.action == "list":
        for name in list_entries():
            entry = get_entry(name)
            print(f"{name}\tn={entry.n}\t{entry.profile_line()}")
        return EXIT_OK
    if args.name is None:
        raise UsageError("zoo show needs an entry name")
    if args.name not in list_entries():
        raise UsageError(f"unknown zoo entry {args.name!r}")
    params = {"n": args.n if args.n is not None else 4}
    if args.name in ("cone", "nonnormal") and args.alpha is not None:
        params["alpha"] = args.alpha
    if args.name == "sphere" and args.lam is not None:
        params["lam"] = args.lam
    entry = get_entry(args.name, **params)
    print(json.dumps(_jsonable(entry.describe()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_curvature(cfg: RunConfig) -> int:
    metric, _, echo = resolve_metric(cfg)
    rep = curvature_report(metric, tol=cfg.tol)
    payload = rep.to_dict()
    payload["parameters"] = echo
    hyp = hypothesis_report(metric)
    payload["hypotheses"] = hyp.to_dict()
    payload["warnings"] = list(rep.warnings) + [
        f"{k} {v}" for k, v in hyp.flags.items() if v == "diverges-numerically"
    ]
    _emit(cfg, "curvature", rep.to_csv(), payload)
    return EXIT_OK


def cmd_normality(cfg: RunConfig) -> int:
    metric, density, echo = resolve_metric(cfg)
    if density is None:
        density = density_from_metric(metric)
    probes = cfg.probes or None
    rep = normality_residual(metric, density, probes, h_tol=cfg.verdict_tol, lap_tol=cfg.verdict_tol)
    payload = rep.to_dict()
    payload["parameters"] = echo
    payload["seed"] = cfg.seed
    if cfg.samples > 0 and metric.n == 4:
        est = monte_carlo_potential(density, rep.probes, cfg.samples, cfg.seed)
        payload["monte_carlo"] = [
            {"r": float(r), "v": e.value, "stderr": e.stderr} for r, e in zip(rep.probes, est)
        ]
    _emit(cfg, "normality", rep.to_csv(), payload)
    return EXIT_OK


def _dyadic_radii(r_max: float, start: float = 1.0) -> np.ndarray:
    radii = [start]
    while radii[-1] * 2 < r_max:
        radii.append(radii[-1] * 2)
    radii.append(r_max)
    return np.array(radii)


def cmd_deficit(cfg: RunConfig) -> int:
    metric, _, echo = resolve_metric(cfg)
    rep = deficit_check(metric)
    series = geometry_series(metric, _dyadic_radii(metric.r_max))
    payload = rep.to_dict()
    payload["parameters"] = echo
    payload["seed"] = cfg.seed
    if cfg.fmt in ("csv", "both"):
        _atomic_write(cfg.out / "geometry.csv", series.to_csv())
    _emit(cfg, "deficit", None, payload)
    return EXIT_OK


def cmd_isoperimetric(cfg: RunConfig) -> int:
    metric, _, echo = resolve_metric(cfg)
    series = geometry_series(metric, _dyadic_radii(metric.r_max))
    payload = {
        "parameters": echo,
        "r": series.radii,
        "area": series.area,
        "volume": series.volume,
        "iso_ratio": series.iso_ratio,
        "conventions": conventions_block(metric.n),
    }
    _emit(cfg, "isoperimetric", series.to_csv(), payload)
    return EXIT_OK


def cmd_flux(cfg: RunConfig) -> int:
    metric, _, echo = resolve_metric(cfg)
    if metric.n != 4:
        raise UsageError("flux is defined for n = 4")
    radii = np.array(cfg.probes) if cfg.probes else _dyadic_radii(metric.r_max)
    rows = divergence_flux(metric, None, radii)
    F = np.array([f for _, f in rows])
    payload = {
        "parameters": echo,
        "flux": [{"rho": r, "F": f} for r, f in rows],
        "max_abs_F": float(np.max(np.abs(F))),
        "last_over_max": float(abs(F[-1]) / np.max(np.abs(F))) if np.any(F) else 0.0,
        "conventions": conventions_block(4),
    }
    _emit(cfg, "flux", _series_csv("rho,F", rows), payload)
    return EXIT_OK


def cmd_pizzetti(args) -> int:
    if args.k < 2:
        raise UsageError("--k must be at least 2")
    print(pizzetti_coefficients(args.k))
    return EXIT_OK


_COMMANDS = {
    "curvature": cmd_curvature,
    "normality": cmd_normality,
    "deficit": cmd_deficit,
    "isoperimetric": cmd_isoperimetric,
    "flux": cmd_flux,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if args.command == "zoo":
                return cmd_zoo(args)
            if args.command == "pizzetti":
                return cmd_pizzetti(args)
            cfg = resolve_config(args)
            return _COMMANDS[args.command](cfg)
    except (UsageError, QflatError, KeyError) as exc:
        print(f"qflat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qflat: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
