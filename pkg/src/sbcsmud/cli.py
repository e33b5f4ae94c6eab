"""Command-line front end: presets for each figure, config files, sweeps, CSV/JSON/SVG output.

Exit status: 0 on success, 2 for configuration errors, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, DomainError
from .modem import CodecConfig
from .simkit import AXES, SimConfig, SweepResult, run_sweep, write_csv, write_json

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


@dataclass(frozen=True)
class FigurePreset:
    name: str
    base: SimConfig
    axis: str
    values: tuple[float, ...]
    block_sizes: tuple[int, ...] = (1, 2, 3, 4)
    metric: str = "der"
    description: str = ""


_BASE = SimConfig(n_users=60, chips=20, activity=0.1, snr_db=10.0, trials=2000)

PRESETS = {
    p.name: p
    for p in (
        FigurePreset("fig4_der", _BASE, "snr_db", (0, 5, 10, 15, 20, 25, 30),
                     description="DER vs SNR, M=20, overloading 3, p_a=0.1"),
        FigurePreset("fig4_ber_companion", _BASE, "snr_db", (0, 5, 10, 15, 20, 25, 30), metric="ber",
                     description="BER vs SNR under the fig4_der settings"),
        FigurePreset("fig5_pa", _BASE, "activity", (0.10, 0.12, 0.14, 0.16),
                     description="DER vs activity probability at SNR 10 dB"),
        FigurePreset("fig6_lambda", _BASE, "overloading", (2, 3, 4, 5, 6),
                     description="DER vs overloading factor at SNR 10 dB, p_a=0.1"),
    )
}

# flag name -> (SimConfig field, sweep axis it pins)
_OVERRIDES = {
    "snr": ("snr_db", "snr_db"),
    "block_size": ("block_size", "block_size"),
    "activity": ("activity", "activity"),
    "overloading": ("overloading", "overloading"),
    "users": ("n_users", None),
    "chips": ("chips", None),
    "gamma_margin": ("gamma_margin", None),
}

_CODEC_KEYS = {"constraint_length", "generators", "interleaver_seed", "info_bits"}
_RUN_KEYS = {"name", "axis", "values", "block_sizes", "metric"}


def _parse_generators(raw):
    return tuple(int(g, 8) if isinstance(g, str) else int(g) for g in raw)


def plan_from_mapping(data: dict, name: str = "custom") -> FigurePreset:
    """Build a sweep plan from a flat key/value table (config-file contents).

    Keys are SimConfig field names, the codec fields, ``overloading``, and
    the run keys ``name``, ``axis``, ``values``, ``block_sizes``, ``metric``.
    """
    data = dict(data)
    known = {f for f in SimConfig.__dataclass_fields__} | _CODEC_KEYS | _RUN_KEYS | {"overloading"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    codec_kw = {k: data.pop(k) for k in list(data) if k in _CODEC_KEYS}
    if "generators" in codec_kw:
        codec_kw["generators"] = _parse_generators(codec_kw["generators"])
    run = {k: data.pop(k) for k in list(data) if k in _RUN_KEYS}
    lam = data.pop("overloading", None)
    try:
        cfg = SimConfig(codec=CodecConfig(**codec_kw), **data)
        if lam is not None:
            cfg = cfg.replace(overloading=lam)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    axis = run.get("axis", "snr_db")
    if axis not in AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    default_value = cfg.overloading if axis == "overloading" else getattr(cfg, axis)
    values = tuple(run.get("values", (default_value,)))
    block_sizes = tuple(int(d) for d in run.get("block_sizes", (cfg.block_size,)))
    return FigurePreset(run.get("name", name), cfg, axis, values, block_sizes, run.get("metric", "der"))


def load_config(path) -> FigurePreset:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    return plan_from_mapping(data, name=path.stem)


def apply_overrides(plan: FigurePreset, *, trials=None, seed=None, stop=None, **flags) -> FigurePreset:
    """Flags win over the preset/config.  Overriding the swept parameter pins it to one value."""
    cfg = plan.base
    axis, values, block_sizes = plan.axis, plan.values, plan.block_sizes
    changes = {}
    for flag, value in flags.items():
        if value is None:
            continue
        fld, pins = _OVERRIDES[flag]
        if fld == "block_size":
            block_sizes = (int(value),)
            continue
        if pins == axis:
            values = (value,)
        changes[fld] = value
    if trials is not None:
        changes["trials"] = trials
    if seed is not None:
        changes["master_seed"] = seed
    if stop is not None:
        changes["stop_mode"] = stop.replace("-", "_")
    cfg = cfg.replace(**changes)
    return FigurePreset(plan.name, cfg, axis, tuple(values), tuple(block_sizes), plan.metric, plan.description)


def run_plan(plan: FigurePreset, *, jobs: int = 1, decode: bool = True, progress=None) -> list[SweepResult]:
    """One sweep per block size; the library-level equivalent of a CLI run."""
    out = []
    for d in plan.block_sizes:
        cfg = plan.base.replace(block_size=int(d))
        out.append(run_sweep(cfg, plan.axis, plan.values, cfg.trials, jobs=jobs, decode=decode,
                             progress=progress))
    return out


def run_header(plan: FigurePreset) -> dict:
    return {"name": plan.name, "axis": plan.axis, "values": list(plan.values),
            "block_sizes": list(plan.block_sizes), "metric": plan.metric,
            "master_seed": plan.base.master_seed, "trials": plan.base.trials}


# -- plotting -------------------------------------------------------------

def _read_sweep_csv(path):
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    need = {"axis_value", "der", "der_ci_lo", "der_ci_hi", "ber", "ber_ci_lo", "ber_ci_hi", "trials"}
    if not rows or not need <= set(rows[0]):
        raise DomainError(f"{path}: not a sweep CSV (missing columns or no data rows)")
    parsed = []
    for i, row in enumerate(rows, start=2):
        try:
            rec = {k: (float(v) if v not in ("", None) else None) for k, v in row.items() if k != "axis"}
        except ValueError:
            raise DomainError(f"{path}: row {i} has a non-numeric field") from None
        if rec["axis_value"] is None or rec["der"] is None:
            raise DomainError(f"{path}: row {i} lacks axis_value or der")
        rec["axis"] = row.get("axis") or "axis"
        parsed.append(rec)
    return parsed


def zero_floor(rec, metric: str) -> float:
    """Where a zero-error point is drawn on the log axis: half the smallest resolvable rate."""
    if metric == "ber":
        total = rec.get("bits_total") or 0
        if total:
            return 0.5 / total
    n = rec.get("n_users") or 1
    return 0.5 / (n * rec["trials"])


def render_plot(sweep_csv_path, out_image_path, metric: str = "der") -> Path:
    """Log-scale error rate versus the swept parameter, one line per block size, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if metric not in ("der", "ber"):
        raise ConfigurationError(f"metric must be 'der' or 'ber', got {metric!r}")
    rows = _read_sweep_csv(sweep_csv_path)
    by_d = {}
    for rec in rows:
        by_d.setdefault(int(rec.get("block_size") or 1), []).append(rec)

    plt.rcParams["svg.fonttype"] = "none"  # keep labels as text nodes
    fig, ax = plt.subplots(figsize=(6, 4.2))
    floored_any = False
    for d, recs in sorted(by_d.items()):
        recs = [r for r in recs if r[metric] is not None]
        if not recs:
            continue
        recs.sort(key=lambda r: r["axis_value"])
        xs = [r["axis_value"] for r in recs]
        ys, lo, hi, zx, zy = [], [], [], [], []
        for r in recs:
            y = r[metric]
            if y == 0:
                f = zero_floor(r, metric)
                zx.append(r["axis_value"])
                zy.append(f)
                y = f
            ys.append(y)
            lo.append(max(y - (r[f"{metric}_ci_lo"] or 0.0), 0.0) if r[metric] else 0.0)
            hi.append(max((r[f"{metric}_ci_hi"] or y) - y, 0.0) if r[metric] else 0.0)
        label = "conventional (D=1)" if d == 1 else f"sequence block D={d}"
        line = ax.errorbar(xs, ys, yerr=[lo, hi], marker="o", capsize=3, label=label)
        if zx:
            floored_any = True
            ax.plot(zx, zy, linestyle="none", marker="v", markersize=9, markerfacecolor="white",
                    markeredgecolor=line[0].get_color())
    if floored_any:
        ax.plot([], [], linestyle="none", marker="v", markerfacecolor="white", markeredgecolor="k",
                label="no errors (drawn at 0.5/resolution)")
    ax.set_yscale("log")
    axis = rows[0]["axis"]
    ax.set_xlabel({"snr_db": "SNR (dB)", "activity": "activity probability",
                   "overloading": "overloading factor", "block_size": "block size"}.get(axis, axis))
    ax.set_ylabel("detection error rate" if metric == "der" else "bit error rate")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(out_image_path)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


# -- entry points ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbcsmud", description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), help="figure preset to run")
    src.add_argument("--config", metavar="PATH", help="TOML file with a flat key/value table")
    p.add_argument("--trials", type=int, help="trials per sweep point")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--snr", type=float, metavar="DB")
    p.add_argument("--block-size", type=int)
    p.add_argument("--activity", type=float)
    p.add_argument("--overloading", type=float)
    p.add_argument("--users", type=int)
    p.add_argument("--chips", type=int)
    p.add_argument("--stop", choices=("known-k", "threshold", "both"))
    p.add_argument("--gamma-margin", type=float)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    p.add_argument("--plot", action="store_true", help="also write an SVG plot")
    p.add_argument("--no-decode", action="store_true", help="skip channel decoding (DER only)")
    return p


def _fmt_rate(r):
    return "n/a" if r is None else f"{r.value:.3e}"


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.preset:
            plan = PRESETS[args.preset]
        elif args.config:
            plan = load_config(args.config)
        else:
            plan = plan_from_mapping({}, name="single")
        plan = apply_overrides(
            plan, trials=args.trials, seed=args.seed, stop=args.stop,
            snr=args.snr, block_size=args.block_size, activity=args.activity,
            overloading=args.overloading, users=args.users, chips=args.chips,
            gamma_margin=args.gamma_margin,
        )
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
    except (ConfigurationError, DomainError) as exc:
        print(f"sbcsmud: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"sbcsmud: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO

    def report(p):
        print(f"{plan.axis}={p.axis_value:g} D={p.block_size} N={p.n_users} trials={p.trials} "
              f"DER={_fmt_rate(p.der)} BER={_fmt_rate(p.ber)} saturated={p.saturated_count}", flush=True)

    try:
        sweeps = run_plan(plan, jobs=args.jobs, decode=not args.no_decode, progress=report)
    except (ConfigurationError, DomainError) as exc:
        print(f"sbcsmud: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    header = run_header(plan)
    try:
        csv_path = write_csv(sweeps, out_dir / f"{plan.name}.csv", header)
        write_json(sweeps, out_dir / f"{plan.name}.json", header)
        if args.plot:
            render_plot(csv_path, out_dir / f"{plan.name}.svg", metric=plan.metric)
    except OSError as exc:
        print(f"sbcsmud: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv=None):
    sys.exit(run_cli(argv))


def plot_main(argv=None):
    p = argparse.ArgumentParser(prog="sbcsmud-plot", description="Render a sweep CSV as an SVG plot.")
    p.add_argument("csv")
    p.add_argument("out")
    p.add_argument("--metric", choices=("der", "ber"), default="der")
    args = p.parse_args(argv)
    try:
        render_plot(args.csv, args.out, args.metric)
    except (DomainError, ConfigurationError) as exc:
        print(f"sbcsmud-plot: {exc}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    except OSError as exc:
        print(f"sbcsmud-plot: {exc}", file=sys.stderr)
        sys.exit(EXIT_IO)
    except OSError as exc:
        print(f"sbcsmud-plot: {exc}", file=sys.stderr)
        sys.exit(EXIT_IO)
    sys.exit(EXIT_OK)
