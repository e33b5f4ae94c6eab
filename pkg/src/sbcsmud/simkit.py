"""Monte Carlo engine: end-to-end trials, DER/BER estimation and parameter sweeps."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from statistics import NormalDist

import numpy as np

from ._version import __version__
from .detector import StopRule, decode_detected, sb_gomp
from .errors import ConfigurationError, DomainError, OverSaturationError
from .modem import CodecConfig, dqpsk_modulate, encode_frame, frame_length
from .phy import (
    ChannelRealization,
    assemble_observation,
    draw_activity,
    draw_channel,
    noise_variance,
    spread_frame,
)
from .seqdesign import BlockAssignment, SensingMatrix, assign_blocks, generate_sensing_matrix

AXES = ("snr_db", "block_size", "activity", "overloading")
CHANNEL_MODELS = ("multipath", "unit")
MATRIX_POLICIES = ("fixed", "per_trial")
STOP_MODES = {"known_k": "known_k", "threshold": "residual_threshold", "both": "both"}


@dataclass(frozen=True)
class SimConfig:
    """One operating point of the link.

    Defaults are the reference operating point: M = 20 chips, N = 60 users
    (overloading 3), activity 0.1, 100 info bits per frame.
    ``stop_mode`` is ``known_k`` (genie active count), ``threshold``
    (residual energy below (1 + gamma_margin) M L sigma^2) or ``both``.
    ``matrix_policy="fixed"`` uses one sensing matrix per (seed, M, N)
    for every trial; ``per_trial`` redraws it each trial.
    """

    n_users: int = 60
    chips: int = 20
    block_size: int = 1
    activity: float = 0.1
    snr_db: float = 10.0
    trials: int = 1000
    fading_block_length: int = 10
    tap_count: int = 4
    decay_constant: float = 2.0
    codec: CodecConfig = field(default_factory=CodecConfig)
    stop_mode: str = "known_k"
    gamma_margin: float = 0.25
    max_iters: int | None = None
    penalty: bool = False
    channel_model: str = "multipath"
    matrix_policy: str = "fixed"
    master_seed: int = 0

    def __post_init__(self):
        if self.chips < 1 or self.n_users <= self.chips:
            raise ConfigurationError(f"need 1 <= M < N, got M={self.chips}, N={self.n_users}")
        if not 1 <= self.block_size <= self.n_users:
            raise ConfigurationError(f"block size {self.block_size} outside [1, N]")
        if not 0 < self.activity < 1:
            raise ConfigurationError(f"activity {self.activity} outside (0, 1)")
        if math.isnan(self.snr_db):
            raise ConfigurationError("SNR is NaN")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.stop_mode not in STOP_MODES:
            raise ConfigurationError(f"stop mode must be one of {sorted(STOP_MODES)}")
        if self.channel_model not in CHANNEL_MODELS:
            raise ConfigurationError(f"channel model must be one of {CHANNEL_MODELS}")
        if self.matrix_policy not in MATRIX_POLICIES:
            raise ConfigurationError(f"matrix policy must be one of {MATRIX_POLICIES}")
        if not 1 <= self.tap_count <= self.chips:
            raise ConfigurationError(f"tap count must lie in [1, M], got {self.tap_count}")
        if self.decay_constant <= 0 or self.fading_block_length < 1:
            raise ConfigurationError("decay constant and fading block length must be positive")
        if self.gamma_margin < 0:
            raise ConfigurationError("gamma margin must be non-negative")

    @property
    def overloading(self) -> float:
        return self.n_users / self.chips

    @property
    def frame_columns(self) -> int:
        return frame_length(self.codec.coded_length, self.block_size)[0]

    def replace(self, **changes) -> "SimConfig":
        if "overloading" in changes:
            lam = changes.pop("overloading")
            m = changes.get("chips", self.chips)
            n = lam * m
            if abs(n - round(n)) > 1e-9:
                raise ConfigurationError(f"overloading {lam} x M={m} is not an integer user count")
            changes["n_users"] = int(round(n))
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["codec"]["generators"] = [oct(g) for g in self.codec.generators]
        d["overloading"] = self.overloading
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


BASELINE = SimConfig()


@lru_cache(maxsize=64)
def _fixed_matrix(master_seed: int, m: int, n: int) -> SensingMatrix:
    seed = int(np.random.SeedSequence([master_seed, 0x5EED, m, n]).generate_state(1)[0])
    return generate_sensing_matrix(m, n, seed)


def sensing_matrix_for(cfg: SimConfig, rng=None) -> SensingMatrix:
    if cfg.matrix_policy == "fixed":
        return _fixed_matrix(cfg.master_seed, cfg.chips, cfg.n_users)
    return generate_sensing_matrix(cfg.chips, cfg.n_users, rng)


@dataclass(frozen=True)
class TrialResult:
    true_support: tuple[int, ...]
    detected_support: tuple[int, ...]
    missed: int
    false_alarms: int
    bit_errors: int
    bits_total: int
    saturated: bool
    n_users: int


def _stop_rule(cfg: SimConfig, k: int, sigma2: float, n_cols: int) -> StopRule:
    mode = STOP_MODES[cfg.stop_mode]
    if mode == "known_k":
        return StopRule.known_k(k, max_iters=cfg.max_iters)
    max_iters = cfg.max_iters if cfg.max_iters is not None else cfg.chips
    return StopRule.noise_floor(sigma2, cfg.chips, n_cols, cfg.gamma_margin,
                                k=k if mode == "both" else None, max_iters=max_iters)


def run_trial(cfg: SimConfig, trial_seed, *, decode: bool = True) -> TrialResult:
    """One frame slot end to end: traffic, coding, spreading, channel, detection, decoding.

    Bit errors are tallied over truly active users only; a missed user
    counts as a fully errored frame and false-alarm users are not decoded.
    ``decode=False`` skips demodulation and decoding (bit counts are then
    zero), which is enough for detection-error statistics.
    """
    rng = np.random.default_rng(trial_seed)
    a = sensing_matrix_for(cfg, rng)
    blk = assign_blocks(a, cfg.block_size)
    n_cols = cfg.frame_columns
    lc = cfg.codec.info_bits

    activity = draw_activity(cfg.n_users, cfg.activity, rng)
    if cfg.channel_model == "unit":
        channel = ChannelRealization.flat(cfg.n_users, cfg.chips, n_cols)
    else:
        channel = draw_channel(cfg.n_users, cfg.chips, cfg.tap_count, cfg.decay_constant,
                               cfg.fading_block_length, n_cols, rng)
    sent = {}
    spread = {}
    for n in activity.support:
        bits = rng.integers(0, 2, lc, dtype=np.uint8)
        frame = dqpsk_modulate(encode_frame(bits, cfg.codec), cfg.block_size)
        sent[int(n)] = bits
        spread[n] = spread_frame(frame, blk.columns(a, n))
    obs = assemble_observation(spread, activity, channel, cfg.snr_db, rng)

    stop = _stop_rule(cfg, activity.k, obs.noise_variance, n_cols)
    saturated = False
    try:
        result = sb_gomp(obs, blk, a, stop, penalty=cfg.penalty)
    except OverSaturationError as exc:
        result = exc.partial
        saturated = True

    truth = set(sent)
    found = set(result.support)
    missed = truth - found
    bit_errors = 0
    bits_total = 0
    if decode:
        bits_total = lc * len(truth)
        bit_errors = lc * len(missed)
        decoded = decode_detected(result, cfg.codec, users=truth)
        for user, bits in decoded.items():
            bit_errors += int(np.count_nonzero(bits != sent[user]))
    return TrialResult(
        true_support=tuple(sorted(truth)),
        detected_support=tuple(result.support),
        missed=len(missed),
        false_alarms=len(found - truth),
        bit_errors=bit_errors,
        bits_total=bits_total,
        saturated=saturated,
        n_users=cfg.n_users,
    )


_Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(errors: int, total: int, z: float = _Z95) -> tuple[float, float]:
    if total <= 0:
        raise DomainError("Wilson interval needs a positive total")
    p = errors / total
    denom = 1 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == total else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class Rate:
    """Error rate with its Wilson 95% interval."""

    value: float
    ci_lo: float
    ci_hi: float
    errors: int
    total: int

    def __float__(self):
        return self.value

    @classmethod
    def from_counts(cls, errors: int, total: int) -> "Rate":
        lo, hi = wilson_interval(errors, total)
        return cls(errors / total, lo, hi, errors, total)


def estimate_der(results, definition: str = "both") -> Rate:
    """Per-user activity-state error rate: (misses + false alarms) / sum of N.

    ``definition="miss"`` counts misses only; ``"false_alarm"`` false alarms only.
    """
    results = list(results)
    if not results:
        raise DomainError("cannot estimate DER from zero trials")
    if definition == "both":
        errors = sum(r.missed + r.false_alarms for r in results)
    elif definition == "miss":
        errors = sum(r.missed for r in results)
    elif definition == "false_alarm":
        errors = sum(r.false_alarms for r in results)
    else:
        raise ConfigurationError(f"unknown DER definition {definition!r}")
    return Rate.from_counts(errors, sum(r.n_users for r in results))


def estimate_ber(results) -> Rate | None:
    """Bit error rate over truly active users' frames; None if no active bits were sent."""
    results = list(results)
    if not results:
        raise DomainError("cannot estimate BER from zero trials")
    total = sum(r.bits_total for r in results)
    if total == 0:
        return None
    return Rate.from_counts(sum(r.bit_errors for r in results), total)


def trial_seed(master_seed: int, axis: str, value, index: int) -> np.random.SeedSequence:
    """Counter-based seed for trial ``index`` at sweep point (axis, value)."""
    key = zlib.crc32(f"{axis}={float(value)!r}".encode())
    return np.random.SeedSequence(master_seed, spawn_key=(AXES.index(axis), key, index))


def point_config(base: SimConfig, axis: str, value) -> SimConfig:
    if axis not in AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    if axis == "block_size":
        if float(value) != int(value):
            raise ConfigurationError(f"block size must be an integer, got {value}")
        return base.replace(block_size=int(value))
    if axis == "overloading":
        return base.replace(overloading=float(value))
    return base.replace(**{axis: float(value)})


def _run_chunk(cfg: SimConfig, axis: str, value, indices, decode: bool):
    return [run_trial(cfg, trial_seed(cfg.master_seed, axis, value, i), decode=decode) for i in indices]


@dataclass(frozen=True)
class SweepPoint:
    axis_value: float
    block_size: int
    n_users: int
    trials: int
    der: Rate
    ber: Rate | None
    miss_rate: float
    false_alarm_rate: float
    saturated_count: int


CSV_COLUMNS = (
    "axis_value", "der", "der_ci_lo", "der_ci_hi", "ber", "ber_ci_lo", "ber_ci_hi",
    "trials", "saturated_count", "axis", "block_size", "n_users",
    "miss_rate", "false_alarm_rate", "der_errors", "bit_errors", "bits_total",
)


def summarize(axis: str, value, cfg: SimConfig, results) -> SweepPoint:
    results = list(results)
    der = estimate_der(results)
    n_total = der.total
    return SweepPoint(
        axis_value=float(value),
        block_size=cfg.block_size,
        n_users=cfg.n_users,
        trials=len(results),
        der=der,
        ber=estimate_ber(results),
        miss_rate=sum(r.missed for r in results) / n_total,
        false_alarm_rate=sum(r.false_alarms for r in results) / n_total,
        saturated_count=sum(r.saturated for r in results),
    )


@dataclass(frozen=True)
class SweepResult:
    axis: str
    values: tuple[float, ...]
    points: tuple[SweepPoint, ...]
    config: SimConfig
    version: str = __version__

    @property
    def metadata(self) -> dict:
        return {"config_hash": self.config.digest(), "master_seed": self.config.master_seed,
                "version": self.version, "axis": self.axis}

    def rows(self):
        for p in self.points:
            ber = p.ber
            yield {
                "axis_value": p.axis_value,
                "der": p.der.value, "der_ci_lo": p.der.ci_lo, "der_ci_hi": p.der.ci_hi,
                "ber": None if ber is None else ber.value,
                "ber_ci_lo": None if ber is None else ber.ci_lo,
                "ber_ci_hi": None if ber is None else ber.ci_hi,
                "trials": p.trials, "saturated_count": p.saturated_count,
                "axis": self.axis, "block_size": p.block_size, "n_users": p.n_users,
                "miss_rate": p.miss_rate, "false_alarm_rate": p.false_alarm_rate,
                "der_errors": p.der.errors,
                "bit_errors": None if ber is None else ber.errors,
                "bits_total": 0 if ber is None else ber.total,
            }

    def to_json_dict(self) -> dict:
        return {"metadata": self.metadata, "config": self.config.to_dict(),
                "values": list(self.values), "points": list(self.rows())}


def run_sweep(base_cfg: SimConfig, axis: str, values, trials_per_point: int | None = None,
              *, jobs: int = 1, decode: bool = True, progress=None) -> SweepResult:
    """Run independent trials at each value of one swept parameter.

    Trial seeds depend only on (master_seed, axis, value, trial index), and
    aggregation is a plain sum, so results do not depend on ``jobs``.
    """
    if axis not in AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    values = tuple(float(v) for v in values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    trials = trials_per_point if trials_per_point is not None else base_cfg.trials
    if trials < 1:
        raise ConfigurationError("trials per point must be >= 1")
    points = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for v in values:
            cfg = point_config(base_cfg, axis, v)
            if pool is None:
                results = _run_chunk(cfg, axis, v, range(trials), decode)
            else:
                chunks = np.array_split(np.arange(trials), jobs * 4)
                futures = [pool.submit(_run_chunk, cfg, axis, v, c.tolist(), decode) for c in chunks if len(c)]
                results = [r for f in futures for r in f.result()]
            point = summarize(axis, v, cfg, results)
            points.append(point)
            if progress is not None:
                progress(point)
    finally:
        if pool is not None:
            pool.shutdown()
    return SweepResult(axis, values, tuple(points), base_cfg, __version__)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweeps_to_csv(sweeps, header: dict | None = None) -> str:
    """CSV text for one or more sweeps, preceded by ``#`` reproducibility lines."""
    sweeps = list(sweeps)
    buf = io.StringIO()
    buf.write(f"# sbcsmud {__version__}\n")
    if header:
        buf.write(f"# run: {json.dumps(header, sort_keys=True)}\n")
    for s in sweeps:
        buf.write(f"# config[{s.axis},D={s.config.block_size}]: {json.dumps(s.config.to_dict(), sort_keys=True)}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for s in sweeps:
        for row in s.rows():
            buf.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def write_csv(sweeps, path, header: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(sweeps_to_csv(sweeps, header))
    return path


def write_json(sweeps, path, header: dict | None = None) -> Path:
    path = Path(path)
    doc = {"run": header or {}, "sweeps": [s.to_json_dict() for s in sweeps]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
