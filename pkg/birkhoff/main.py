import argparse
import csv
import hashlib
import json
import sys
import time
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile
from pydantic import ValidationError as PydanticValidationError

from . import __version__
from .config import settings
from .exceptions import BirkhoffError, ConfigError, InfeasibleError, VerificationError
from .logger import logger
from .moran import run_moran_suite
from .schema import RunConfig, RunManifest
from .smooth import (
    MPMap,
    TorusExpandingMap,
    VianaMap,
    check_invariant_interval,
    empirical_spectrum,
    gap_sweep,
    indicator,
    mp_level_spectrum,
    spec_gap_estimate,
    viana_apply,
)
from .thermo import (
    DeltaSchedule,
    bs_dimension,
    constrained_variational,
    counting_pressure,
    direct_level_spectrum,
    equilibrium_measure,
    is_concave,
    legendre_spectrum,
    markov_entropy,
    markov_integral,
    rotation_interval,
    topological_entropy,
    transfer_pressure,
)
from .validators import (
    BsDimSection,
    ConfigValidator,
    MapsSection,
    ParsedConfig,
    PressureSection,
    SpecGapSection,
    SpectrumSection,
)

Command = Callable[[ParsedConfig, Path, List[str]], None]


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_csv(out: Path, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]], outputs: List[str]) -> None:
    """CSV with 12 significant digits; empty cells for missing values"""
    with open(out / name, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    outputs.append(name)


def write_json(out: Path, name: str, payload: Dict[str, Any], outputs: Optional[List[str]] = None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    (out / name).write_text(text + "\n")
    if outputs is not None:
        outputs.append(name)


def _max_gap(a: Sequence[Optional[float]], b: Sequence[Optional[float]]) -> Optional[float]:
    diffs = [abs(x - y) for x, y in zip(a, b) if x is not None and y is not None]
    return max(diffs) if diffs else None


def cmd_pressure(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    """Transfer-operator and counting pressure of [psi] (zero when absent)"""
    space = ConfigValidator.shift(parsed)
    psi = ConfigValidator.potential(parsed, "psi", space, default=0.0)
    section = ConfigValidator.section(parsed, "pressure", PressureSection, required=False,
                                      default=PressureSection())
    transfer = transfer_pressure(space, psi)
    counting = counting_pressure(space, psi, range(section.n_min, section.n_max + 1))
    payload = {
        "space": {"alphabet_size": space.alphabet_size, "rows": space.rows(), "name": space.name},
        "potential": psi.name,
        "transfer_pressure": transfer,
        "topological_entropy": topological_entropy(space),
        "counting": counting.model_dump(),
        "difference": abs(counting.value - transfer),
    }
    if psi.memory <= 2:
        m = equilibrium_measure(space, psi)
        payload["equilibrium"] = {
            "entropy": markov_entropy(m),
            "integral": markov_integral(m, psi),
            "matrix": [list(r) for r in m.matrix],
            "stationary": list(m.stationary),
        }
    write_json(out, "pressure.json", payload, outputs)
    logger.info(f"pressure: transfer {transfer:.12g}, counting {counting.value:.12g}")


def cmd_spectrum(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    """F(alpha) by the Legendre transform, restricted counting and the constrained oracle"""
    space = ConfigValidator.shift(parsed)
    phi = ConfigValidator.potential(parsed, "phi", space)
    psi = ConfigValidator.potential(parsed, "psi", space, default=0.0)
    section = ConfigValidator.section(parsed, "spectrum", SpectrumSection)
    alphas = section.grid()

    interval = rotation_interval(space, phi)
    legendre = legendre_spectrum(space, phi, psi, alphas)
    if not any(legendre.feasible):
        raise InfeasibleError(
            f"every alpha in the grid lies outside the rotation interval [{interval.alpha_min}, {interval.alpha_max}]"
        )
    overrides = {"c": section.delta_c, "delta_min": section.delta_min}
    schedule = DeltaSchedule(**{k: v for k, v in overrides.items() if v is not None})
    direct, _ = direct_level_spectrum(space, phi, psi, alphas, schedule, range(section.n_min, section.n_max + 1))

    constrained: List[Optional[float]] = []
    for alpha, ok in zip(alphas, legendre.feasible):
        if not (ok and section.constrained):
            constrained.append(None)
            continue
        try:
            constrained.append(constrained_variational(space, phi, psi, alpha, section.grid_resolution).value)
        except InfeasibleError as e:
            logger.warning(f"alpha={alpha}: constrained oracle skipped ({e})")
            constrained.append(None)

    f_legendre = [None if end else v for v, end in zip(legendre.values, legendre.endpoint)]
    f_direct = [v if ok else None for v, ok in zip(direct.values, legendre.feasible)]
    rows = [
        (a, fl, fd, fc, q, ok, end)
        for a, fl, fd, fc, q, ok, end in zip(
            alphas, f_legendre, f_direct, constrained, legendre.q_opt, legendre.feasible, legendre.endpoint
        )
    ]
    write_csv(out, "spectrum.csv",
              ["alpha", "F_legendre", "F_direct", "F_constrained", "q_opt", "feasible", "endpoint"], rows, outputs)
    summary = {
        "rotation_interval": interval.model_dump(),
        "n_range": [section.n_min, section.n_max],
        "delta_schedule": schedule.model_dump(),
        "legendre_concave": is_concave(legendre),
        "max_discrepancy": {
            "legendre_direct": _max_gap(f_legendre, f_direct),
            "legendre_constrained": _max_gap(f_legendre, constrained),
            "direct_constrained": _max_gap(f_direct, constrained),
        },
        "feasible": sum(legendre.feasible),
        "endpoints": [a for a, end in zip(alphas, legendre.endpoint) if end],
    }
    write_json(out, "spectrum.json", summary, outputs)


def cmd_moran_verify(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    space = ConfigValidator.shift(parsed)
    phi = ConfigValidator.potential(parsed, "phi", space)
    psi = ConfigValidator.potential(parsed, "psi", space, default=0.0)
    config = ConfigValidator.moran(parsed)
    report = run_moran_suite(space, phi, psi, config, seed=settings.seed)
    write_json(out, "moran.json", report.model_dump(), outputs)
    if not report.passed:
        raise VerificationError("Moran verification failed; see moran.json for the failing checks")


def cmd_bs_dim(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    space = ConfigValidator.shift(parsed)
    psi = ConfigValidator.potential(parsed, "psi", space)
    section = ConfigValidator.section(parsed, "bs-dim", BsDimSection, required=False, default=BsDimSection())
    level = None
    if section.alpha is not None:
        level = (ConfigValidator.potential(parsed, "phi", space), section.alpha)
    dimension = bs_dimension(space, psi, level)
    write_json(out, "bs_dim.json", {
        "dimension": dimension,
        "level_alpha": section.alpha,
        "whole_space": level is None,
        "potential": psi.name,
    }, outputs)


def _observable(section: MapsSection):
    coordinate = section.coordinate
    if section.map == "viana" and coordinate is None:
        coordinate = 1
    return indicator(section.lo, section.hi, coordinate), coordinate


def _point_rows(smooth, points: List[List[float]]):
    if isinstance(smooth, VianaMap):
        header = ["theta", "x", "theta_next", "x_next"]
        rows = []
        for p in points:
            if len(p) != 2:
                raise ConfigError(f"[maps] viana points need theta, x; got {p}")
            rows.append((p[0], p[1], *viana_apply(smooth, p[0], p[1])))
        return header, rows
    if isinstance(smooth, MPMap):
        header = ["x", "image", "left_preimage", "right_preimage"]
        return header, [(p[0], smooth.apply(p[0]), *smooth.inverse_branches(p[0])) for p in points]
    header = ["x", "image"]
    return header, [(p[0], smooth.apply(p[0])) for p in points]


def cmd_maps(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    """Empirical Birkhoff-average histograms for one smooth map"""
    section = ConfigValidator.section(parsed, "maps", MapsSection)
    smooth = ConfigValidator.smooth_map(parsed, section.map)
    observable, coordinate = _observable(section)
    report = empirical_spectrum(smooth, observable, section.ensemble, section.n, section.bins,
                                settings.seed, section.transient)
    write_csv(out, "maps_histogram.csv", ["center", "count", "fraction", "rate", "raw_rate"],
              list(zip(report.centers, report.counts, report.fractions, report.rates, report.raw_rates)), outputs)
    payload: Dict[str, Any] = {
        "map": {"kind": section.map, **smooth.model_dump()},
        "observable": {"lo": section.lo, "hi": section.hi, "coordinate": coordinate},
        "histogram": report.model_dump(),
    }
    if isinstance(smooth, VianaMap):
        payload["invariant_interval"] = check_invariant_interval(smooth, seed=settings.seed)
        payload["note"] = f"a = {smooth.a} is a stand-in; the Misiurewicz condition is not verified"
    if isinstance(smooth, TorusExpandingMap):
        payload["exactness_time"] = {str(r): smooth.exactness_time(r) for r in (0.1, 0.01)}
    if isinstance(smooth, MPMap) and section.spectrum_depth:
        alphas = section.alphas or [round(0.05 * i, 12) for i in range(21)]
        curve = mp_level_spectrum(smooth, alphas, section.spectrum_depth)
        write_csv(out, "maps_spectrum.csv", ["alpha", "F", "feasible"],
                  list(zip(curve.alphas, curve.values, curve.feasible)), outputs)
        payload["spectrum_note"] = curve.note
    if section.point:
        header, rows = _point_rows(smooth, section.point)
        write_csv(out, "maps_points.csv", header, rows, outputs)
    write_json(out, "maps.json", payload, outputs)


def cmd_spec_gap(parsed: ParsedConfig, out: Path, outputs: List[str]) -> None:
    section = ConfigValidator.section(parsed, "spec-gap", SpecGapSection)
    smooth = ConfigValidator.smooth_map(parsed, section.map)
    segments = [(section.x1, section.n1), (section.x2, section.n2)]
    report = spec_gap_estimate(smooth, segments, section.epsilon, section.p_max)
    payload: Dict[str, Any] = {"map": {"kind": section.map, **smooth.model_dump()}, **report.model_dump()}
    if section.sweep:
        sweep = gap_sweep(smooth, section.x1, section.sweep, section.x2, section.n2, section.epsilon, section.p_max)
        payload["sweep"] = sweep.model_dump()
    write_json(out, "spec_gap.json", payload, outputs)


COMMANDS: Dict[str, Command] = {
    "pressure": cmd_pressure,
    "spectrum": cmd_spectrum,
    "moran-verify": cmd_moran_verify,
    "bs-dim": cmd_bs_dim,
    "maps": cmd_maps,
    "spec-gap": cmd_spec_gap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="birkhoff", description="Conditional variational principle toolkit")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", required=True, help="Sectioned run config")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--nmax", type=int, default=None, help="Largest word length enumerated")
    parser.add_argument("--tol", type=float, default=None, help="Power iteration and bisection tolerance")
    return parser


def _apply_overrides(run_config: RunConfig) -> None:
    if run_config.seed is not None:
        settings.seed = run_config.seed
    if run_config.workers is not None:
        settings.workers = run_config.workers
    if run_config.nmax is not None:
        settings.nmax = run_config.nmax
    if run_config.tol is not None:
        settings.power_tol = run_config.tol
        settings.bisection_tol = run_config.tol


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the exit code"""
    args = build_parser().parse_args(argv)
    start_time = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    registry = CollectorRegistry()
    run_count = Counter("birkhoff_runs_total", "Total CLI runs", ["command", "status"], registry=registry)
    run_duration = Histogram("birkhoff_run_duration_seconds", "CLI run duration", ["command"], registry=registry)

    saved = settings.model_dump()
    outputs: List[str] = []
    parsed: Optional[ParsedConfig] = None
    digest = ""
    status, code = "success", 0
    try:
        try:
            run_config = RunConfig(command=args.command, config_path=args.config, out_dir=args.out,
                                   seed=args.seed, tol=args.tol, nmax=args.nmax, workers=args.workers)
        except PydanticValidationError as e:
            error = e.errors()[0]
            raise ConfigError(f"--{error['loc'][0]}: {error['msg']}")
        _apply_overrides(run_config)
        try:
            raw = Path(run_config.config_path).read_bytes()
        except OSError as e:
            raise ConfigError(f"cannot read config {run_config.config_path}: {e}")
        digest = hashlib.sha256(raw).hexdigest()
        parsed = ConfigValidator.parse(raw.decode("utf-8"))
        logger.info(f"Starting {run_config.command} with {run_config.config_path} -> {out}")
        COMMANDS[run_config.command](parsed, out, outputs)

    except VerificationError as e:
        status, code = "failed", e.exit_code
        logger.error(f"Verification failed: {e}")
    except BirkhoffError as e:
        status, code = "error", e.exit_code
        logger.error(f"{type(e).__name__}: {e}")
    except Exception as e:
        status, code = "error", 1
        logger.error(f"Unexpected error: {str(e)}\n{traceback.format_exc()}")
    finally:
        duration = time.time() - start_time
        run_count.labels(command=args.command, status=status).inc()
        run_duration.labels(command=args.command).observe(duration)
        write_to_textfile(str(out / "metrics.prom"), registry)
        manifest = RunManifest(
            command=args.command,
            version=__version__,
            config=parsed.resolved() if parsed is not None else {},
            settings=settings.model_dump(),
            input_sha256=digest,
            outputs=outputs,
            wall_time=round(duration, 3),
            status=status,
        )
        write_json(out, "manifest.json", manifest.model_dump())
        for key, value in saved.items():
            setattr(settings, key, value)
        logger.info(f"{args.command} finished: {status} in {duration:.3f}s")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
