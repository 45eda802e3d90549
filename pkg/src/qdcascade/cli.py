"""Command-line batch driver: simulate, tomo, fit, keyrate and reproduce.

Every run reads an optional JSON :class:`RunConfig`; explicit flags override
it, and the effective configuration is echoed to ``<out>/config.json`` so it
can be fed back in. Exit status is 0 when all outputs were written and all
fits converged, 1 when a stage failed, and 2 for usage or configuration
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fitting, qcore, qkd, simulation, tomography
from .simulation import (
    CoincidenceHistogramSet,
    ConfigurationError,
    DetectorModel,
    SourceModel,
    TimeGrid,
)
from .qkd import SixStateConfig
from .tomography import MleConfig, TimeBinnedStates

SCHEMA_VERSION = 1
SIG = 12

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

FIT_KINDS = ("rabi", "lifetime", "fss", "blinking", "timing", "g2", "efficiency")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Everything a batch run needs.

    ``seed=None`` keeps the expected (noise-free) histograms; an integer
    draws Poisson counts. ``keyrate_range_ps`` defaults to ``[0, 5 tau_x]``.
    """

    source: SourceModel = field(default_factory=SourceModel)
    detector: DetectorModel = field(default_factory=DetectorModel)
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(10.0, 800, -2000.0))
    T_exp_s: float = 300.0
    mle: MleConfig = field(default_factory=MleConfig)
    qkd: SixStateConfig = field(default_factory=SixStateConfig)
    seed: int | None = None
    window_ps: float = 50.0
    keyrate_range_ps: list | None = None
    optimize_basis: bool = True
    histograms: str | None = None
    states: str | None = None
    out: str = "out"

    _nested = {
        "source": SourceModel,
        "detector": DetectorModel,
        "grid": TimeGrid,
        "mle": MleConfig,
        "qkd": SixStateConfig,
    }

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = asdict(v) if f.name in self._nested else v
        return d

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version is None:
            raise ConfigError("missing schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        kw = {}
        for name, value in doc.items():
            if name in cls._nested:
                typ = cls._nested[name]
                if not isinstance(value, dict):
                    raise ConfigError(f"{name}: expected an object")
                sub_known = {f.name for f in fields(typ)}
                bad = sorted(set(value) - sub_known)
                if bad:
                    raise ConfigError(f"{name}: unknown keys: {', '.join(bad)}")
                try:
                    kw[name] = typ(**{k: _as_float_inf(v) for k, v in value.items()})
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{name}: {exc}") from None
            else:
                kw[name] = value
        cfg = cls(**kw)
        base = base_dir or Path.cwd()
        for name in ("histograms", "states"):
            p = getattr(cfg, name)
            if p is not None:
                path = Path(p) if Path(p).is_absolute() else base / p
                if not path.exists():
                    raise ConfigError(f"{name}: path {p} does not exist")
                setattr(cfg, name, str(path))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.seed is not None and (not isinstance(self.seed, int) or self.seed < 0):
            raise ConfigError("seed must be a non-negative integer or null")
        if not float(self.window_ps) > 0:
            raise ConfigError("window_ps must be positive")
        if self.T_exp_s < 0:
            raise ConfigError("T_exp_s must be non-negative")
        if self.keyrate_range_ps is not None and len(self.keyrate_range_ps) != 2:
            raise ConfigError("keyrate_range_ps must be [tmin, tmax]")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, path.parent)

    def dump(self, path) -> None:
        Path(path).write_text(_dumps(self.to_dict()))

    def keyrate_range(self) -> tuple[float, float]:
        if self.keyrate_range_ps is None:
            return 0.0, 5.0 * self.source.tau_x_ns * 1e3
        lo, hi = self.keyrate_range_ps
        return float(lo), float(hi)


def _as_float_inf(v):
    return float("inf") if v in ("inf", "Infinity") else v


def _dumps(doc) -> str:
    """JSON with 12 significant digits; infinities become the string "inf"."""
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (float, np.floating)):
            x = float(x)
            return float(f"{x:.{SIG}g}") if np.isfinite(x) else "inf"
        if isinstance(x, np.integer):
            return int(x)
        return x

    return json.dumps(clean(doc), indent=2)


# ------------------------------------------------------------------ presets


def preset(name: str) -> RunConfig:
    """Dephasing-free SNSPD and SPAD configurations, and the ideal source."""
    src = SourceModel(p_m=0.00415)
    if name == "snspd":
        return RunConfig(source=src, detector=DetectorModel("gaussian", 30.0, 1.0, 1.0))
    if name == "spad":
        return RunConfig(source=src, detector=DetectorModel("sech2", 488.0, 34.0, 306.0))
    if name == "ideal":
        return RunConfig(source=SourceModel(), detector=DetectorModel("delta", 0.0, 0.0, 0.0))
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("snspd", "spad", "ideal")


# ------------------------------------------------------------------ stages


def _write_curve(path_base: Path, fmt: str, columns: dict) -> Path:
    if fmt == "json":
        path = path_base.with_suffix(".json")
        path.write_text(_dumps({k: np.asarray(v).tolist() for k, v in columns.items()}))
    else:
        path = path_base.with_suffix(".csv")
        data = np.column_stack(list(columns.values()))
        np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt=f"%.{SIG}g")
    return path


def run_simulate(cfg: RunConfig, out: Path) -> CoincidenceHistogramSet:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.T_exp_s == 0:
        warnings.warn("zero-duration experiment: histograms are empty", stacklevel=2)
    h = simulation.expected_histograms(cfg.source, cfg.detector, cfg.grid, cfg.T_exp_s)
    if cfg.seed is not None:
        h = simulation.sample_histograms(h, cfg.seed)
    h.to_csv(out / "histograms.csv", sig=SIG)
    return h


def run_tomo(cfg: RunConfig, h: CoincidenceHistogramSet, out: Path, fmt: str = "csv") -> tuple[TimeBinnedStates, dict]:
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", tomography.MleConvergenceWarning)
        states = tomography.time_resolved_states(h, cfg.window_ps, cfg.mle)
    states.to_json(out / "states.json", sig=SIG)
    summary = {"n_windows": len(states), "n_skipped": len(states.skipped),
               "n_unconverged": int((~states.converged).sum())}
    if len(states) == 0:
        return states, summary
    _, conc = tomography.metric_curve(states, "concurrence")
    _, fmax = tomography.metric_curve(states, "fmax")
    _write_curve(out / "concurrence", fmt, {"tau_ps": states.tau_ps, "value": conc, "n_tau": states.n_tau})
    _write_curve(out / "fmax", fmt, {"tau_ps": states.tau_ps, "value": fmax, "n_tau": states.n_tau})
    i = int(np.argmax(conc))
    summary.update(
        peak_concurrence=float(conc[i]),
        peak_tau_ps=float(states.tau_ps[i]),
        weighted_concurrence=tomography.lifetime_weighted(conc, states.n_tau) if states.n_tau.sum() > 0 else 0.0,
        peak_fmax=float(fmax.max()),
    )
    return states, summary


def ideal_states(cfg: RunConfig) -> TimeBinnedStates:
    """Pure cascade states at window centres, weighted by the exciton decay."""
    lo, hi = cfg.keyrate_range()
    w = cfg.window_ps
    centers = np.arange(lo + w / 2, hi - w / 2 + 1e-9, w)
    psi = qcore.cascade_state(centers * 1e-12, cfg.source.S_ueV)
    rhos = np.einsum("ni,nj->nij", psi, psi.conj())
    t = centers * 1e-3
    weight = np.exp(-(t - w * 5e-4) / cfg.source.tau_x_ns) - np.exp(-(t + w * 5e-4) / cfg.source.tau_x_ns)
    return TimeBinnedStates(w, centers, rhos, weight)


def run_keyrate(cfg: RunConfig, states: TimeBinnedStates, out: Path, fmt: str = "csv",
                per_window: bool = False) -> tuple[qkd.KeyRateCurve, dict]:
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = cfg.keyrate_range()
    sel = states.select(lo, hi)
    if len(sel) == 0:
        raise ValueError(f"no reconstructed windows inside [{lo}, {hi}] ps")
    if per_window:
        _, curve = qkd.optimize_keyrate_basis(sel, cfg.qkd, per_window=True)
    elif cfg.optimize_basis:
        _, curve = qkd.optimize_keyrate_basis(sel, cfg.qkd)
    else:
        curve = qkd.time_resolved_keyrate(sel, cfg.qkd)
    _write_curve(out / "keyrate", fmt, {"tau_ps": curve.tau_ps, "r_bits": curve.r, "n_tau": curve.n_tau})
    summary = curve.summary(cfg.qkd)
    summary["range_ps"] = [lo, hi]
    summary["per_window"] = per_window
    (out / "keyrate_summary.json").write_text(_dumps(summary))
    return curve, summary


def run_fit(kind: str, data: str | None, options: dict) -> fitting.FitResult | dict:
    if kind == "efficiency":
        doc = dict(options)
        if data:
            doc.update(json.loads(Path(data).read_text()))
        need = ["eta_prep_x", "eta_prep_xx", "beta", "n_x_hz", "n_xx_hz", "eta_opt", "f_rep_hz"]
        missing = [k for k in need if k not in doc]
        if missing:
            raise ConfigError(f"efficiency needs {', '.join(missing)}")
        return fitting.efficiency_budget(**{k: float(doc[k]) for k in need}).to_dict()
    if data is None:
        raise ConfigError(f"fit {kind} needs --data")
    path = Path(data)
    if not path.exists():
        raise ConfigError(f"{data} does not exist")
    raw = np.loadtxt(path, delimiter=",", skiprows=_header_rows(path), ndmin=2)
    x, y = raw[:, 0], raw[:, 1]
    sigma = raw[:, 2] if raw.shape[1] > 2 else None
    opt = dict(options)
    if kind == "rabi":
        return fitting.fit_rabi(x, y, sigma)
    if kind == "lifetime":
        return fitting.fit_lifetime(x, y, float(opt.pop("response_fwhm_ps", 0.0)), sigma=sigma, **_floats(opt))
    if kind == "fss":
        return fitting.fit_fss(x, y, float(opt.pop("response_fwhm_ps", 30.0)), sigma=sigma, **_floats(opt))
    if kind == "blinking":
        if "rep_period_ns" in opt:
            x, y = fitting.find_rep_peaks(x, y, float(opt.pop("rep_period_ns")))
            sigma = None
        return fitting.fit_blinking(x, y, sigma)
    if kind == "timing":
        kw = {k: (int(v) if k in ("window", "polyorder") else float(v)) for k, v in opt.items()}
        return fitting.extract_timing_response(x, y, **kw)
    if kind == "g2":
        if "rep_period_ns" not in opt:
            raise ConfigError("g2 needs --option rep_period_ns=...")
        g2, areas = fitting.g2_from_hbt(x, y, float(opt["rep_period_ns"]))
        out = {"g2_nn": g2, "peak_areas": {str(k): v for k, v in areas.items()}}
        if "beta" in opt:
            out["g2_corrected"] = fitting.corrected_g2(g2, float(opt["beta"]))
        return out
    raise ConfigError(f"unknown fit kind {kind!r}")


def _floats(d):
    return {k: float(v) for k, v in d.items()}


def _header_rows(path: Path) -> int:
    first = path.read_text().split("\n", 1)[0]
    try:
        [float(v) for v in first.split(",")]
        return 0
    except ValueError:
        return 1


# ------------------------------------------------------------------ argparse


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--preset", choices=PRESETS, help="start from a built-in configuration")
    p.add_argument("--seed", type=int, metavar="N", help="Poisson seed (omit for expected counts)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--window-ps", type=float, metavar="N", help="tomography window width in ps")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="curve output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdcascade", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write expected or sampled coincidence histograms")
    _common(p)

    p = sub.add_parser("tomo", help="time-resolved MLE tomography of histograms")
    _common(p)
    p.add_argument("--histograms", metavar="PATH", help="36-channel histogram CSV")

    p = sub.add_parser("fit", help="run one of the fitting routines")
    _common(p)
    p.add_argument("kind", choices=FIT_KINDS)
    p.add_argument("--data", metavar="PATH", help="CSV columns x,y[,sigma] (JSON inputs for efficiency)")
    p.add_argument("--option", action="append", default=[], metavar="KEY=VALUE",
                   help="extra fitter argument, repeatable")

    p = sub.add_parser("keyrate", help="time-resolved six-state key rate")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--states", metavar="PATH", help="states JSON from tomo")
    src.add_argument("--histograms", metavar="PATH", help="histogram CSV (reconstructed first)")
    src.add_argument("--ideal", action="store_true", help="use pure cascade states")
    p.add_argument("--no-optimize", action="store_true", help="keep the H/V-D/A-R/L basis")
    p.add_argument("--per-window", action="store_true", help="optimize the basis separately per window")

    p = sub.add_parser("reproduce", help="simulate, reconstruct and compute key rates for all presets")
    _common(p)
    return parser


def _effective_config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = RunConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = preset("snspd")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if args.window_ps is not None:
        over["window_ps"] = args.window_ps
    for name in ("histograms", "states"):
        v = getattr(args, name, None)
        if v is not None:
            if not Path(v).exists():
                raise ConfigError(f"{name}: path {v} does not exist")
            over[name] = v
    cfg = replace(cfg, **over)
    cfg.validate()
    return cfg


def _load_histograms(path) -> CoincidenceHistogramSet:
    try:
        return CoincidenceHistogramSet.from_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return _dispatch(args, cfg, out)
    except (ConfigError, ConfigurationError) as exc:
        print(f"qdcascade {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (fitting.FitError, ValueError, OSError) as exc:
        print(f"qdcascade {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


def _report(doc) -> None:
    print(_dumps(doc))


def _dispatch(args, cfg: RunConfig, out: Path) -> int:
    cmd = args.command
    if cmd == "simulate":
        cfg.dump(out / "config.json")
        h = run_simulate(cfg, out)
        _report({"histograms": str(out / "histograms.csv"), "total_counts": float(h.counts.sum())})
        return EXIT_OK

    if cmd == "tomo":
        if cfg.histograms is None:
            raise ConfigError("tomo needs --histograms or a config 'histograms' path")
        h = _load_histograms(cfg.histograms)
        cfg.dump(out / "config.json")
        states, summary = run_tomo(cfg, h, out, args.format)
        _report(summary)
        if len(states) == 0 or summary["n_unconverged"]:
            print("qdcascade tomo: failing stage: tomography "
                  f"({summary['n_unconverged']} unconverged, {len(states)} windows)", file=sys.stderr)
            return EXIT_FAILED
        return EXIT_OK

    if cmd == "fit":
        options = {}
        for item in args.option:
            if "=" not in item:
                raise ConfigError(f"--option expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            options[k.strip()] = v.strip()
        try:
            res = run_fit(args.kind, args.data, options)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(res, fitting.FitResult):
            res.to_json(out / f"fit_{args.kind}.json", sig=SIG)
            _report(res.to_dict(SIG))
            if not res.converged:
                print(f"qdcascade fit: failing stage: {args.kind} fit did not converge "
                      f"(flags: {', '.join(res.flags) or 'none'})", file=sys.stderr)
                return EXIT_FAILED
        else:
            (out / f"fit_{args.kind}.json").write_text(_dumps(res))
            _report(res)
        return EXIT_OK

    if cmd == "keyrate":
        if args.no_optimize:
            cfg = replace(cfg, optimize_basis=False)
        cfg.dump(out / "config.json")
        if args.ideal:
            states = ideal_states(cfg)
        elif cfg.states is not None:
            states = TimeBinnedStates.from_json(cfg.states)
        elif cfg.histograms is not None:
            states, _ = run_tomo(cfg, _load_histograms(cfg.histograms), out, args.format)
        else:
            raise ConfigError("keyrate needs --states, --histograms or --ideal")
        if len(states) == 0:
            raise ValueError("no states to evaluate")
        _, summary = run_keyrate(cfg, states, out, args.format, per_window=args.per_window)
        _report(summary)
        return EXIT_OK

    if cmd == "reproduce":
        return _reproduce(args, cfg, out)
    raise ConfigError(f"unknown command {cmd}")


def _reproduce(args, base: RunConfig, out: Path) -> int:
    failures, summary = [], {}
    for name in PRESETS:
        cfg = replace(preset(name), seed=base.seed, window_ps=base.window_ps, out=str(out / name))
        d = Path(cfg.out)
        d.mkdir(parents=True, exist_ok=True)
        cfg.dump(d / "config.json")
        entry = {}
        try:
            if name == "ideal":
                states = ideal_states(cfg)
            else:
                h = run_simulate(cfg, d)
                states, tsum = run_tomo(cfg, h, d, args.format)
                entry["tomo"] = tsum
                if tsum["n_unconverged"]:
                    failures.append(f"{name}: tomography")
            _, ksum = run_keyrate(cfg, states, d, args.format)
            entry["keyrate"] = ksum
        except (ValueError, fitting.FitError) as exc:
            failures.append(f"{name}: {exc}")
        summary[name] = entry
    (out / "summary.json").write_text(_dumps(summary))
    _report(summary)
    if failures:
        print("qdcascade reproduce: failing stages: " + "; ".join(failures), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
