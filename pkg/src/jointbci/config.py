"""Experiment configuration: one JSON document, one dataclass per block.

Blocks are ``session``, ``subject``, ``generation``, ``decoder``, ``pace``,
``replay`` and ``output``, plus a top-level integer ``seed``. Every field has a
default, so ``{}`` is a valid config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .signal import MOTOR_CHANNELS, MOTOR_REFERENCE

MODES = ("joint", "coadaptive")
DISTANCE_MODES = ("concat", "sum", "pooled")


def _require(cond, name, msg):
    if not cond:
        raise ConfigError(name, msg)


def _check_types(block, prefix):
    """Reject values whose JSON type differs from the field's default."""
    for f in dataclasses.fields(block):
        val = getattr(block, f.name)
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        name = f"{prefix}.{f.name}"
        if isinstance(default, bool):
            _require(isinstance(val, bool), name, f"must be true or false, got {val!r}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            _require(isinstance(val, (int, float)) and not isinstance(val, bool), name,
                     f"must be a number, got {val!r}")
        elif isinstance(default, str):
            _require(isinstance(val, str), name, f"must be a string, got {val!r}")
        elif isinstance(default, tuple) or f.name == "channels":
            _require(val is None and default is None or isinstance(val, (list, tuple))
                     and all(isinstance(c, str) for c in val), name, "must be a list of channel names")


@dataclass(frozen=True)
class SessionConfig:
    n_sessions: int = 5
    trials_per_session: int = 20  # per class
    calibration_trials_per_class: int | None = None
    threshold_t: float = 0.7
    alpha: float = 0.2
    window_s: float = 1.0
    hop_s: float = 1.0 / 60.0
    slice_start_s: float = 0.5
    slice_end_s: float = 4.5
    slice_window_s: float = 1.0
    mode: str = "joint"

    def validate(self, p="session"):
        _require(isinstance(self.n_sessions, int) and self.n_sessions >= 2, f"{p}.n_sessions",
                 f"must be an integer >= 2, got {self.n_sessions!r}")
        _require(isinstance(self.trials_per_session, int) and self.trials_per_session >= 1,
                 f"{p}.trials_per_session", f"must be a positive integer, got {self.trials_per_session!r}")
        cal = self.calibration_trials_per_class
        _require(cal is None or (isinstance(cal, int) and cal >= 2), f"{p}.calibration_trials_per_class",
                 f"must be null or an integer >= 2, got {cal!r}")
        _require(0 < self.threshold_t < 1, f"{p}.threshold_t", f"must be in (0, 1), got {self.threshold_t!r}")
        _require(self.alpha > 0, f"{p}.alpha", f"must be > 0, got {self.alpha!r}")
        _require(self.window_s > 0, f"{p}.window_s", f"must be > 0, got {self.window_s!r}")
        _require(self.hop_s > 0, f"{p}.hop_s", f"must be > 0, got {self.hop_s!r}")
        _require(self.slice_start_s >= 0, f"{p}.slice_start_s", "must be >= 0")
        _require(self.slice_window_s > 0, f"{p}.slice_window_s", "must be > 0")
        _require(self.slice_end_s - self.slice_start_s >= self.slice_window_s, f"{p}.slice_end_s",
                 "slice window does not fit between slice_start_s and slice_end_s")
        _require(self.slice_end_s - self.slice_start_s >= self.window_s, f"{p}.window_s",
                 "online window does not fit between slice_start_s and slice_end_s")
        _require(self.mode in MODES, f"{p}.mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.mode == "joint":
            _require(self.trials_per_session % 2 == 0, f"{p}.trials_per_session",
                     "must be even in joint mode (trials come in copy/new pairs)")

    @property
    def calibration_per_class(self):
        return self.calibration_trials_per_class or self.trials_per_session


@dataclass(frozen=True)
class SubjectConfig:
    p_gg: float = 0.6
    p_bb: float = 0.6
    delta_copy: float = 0.2
    delta_new: float = 0.2
    eta_learn: float = 0.002

    def validate(self, p="subject"):
        for name in ("p_gg", "p_bb"):
            val = getattr(self, name)
            _require(0 <= val <= 1, f"{p}.{name}", f"must be in [0, 1], got {val!r}")
        _require(not (self.p_gg == 1 and self.p_bb == 1), f"{p}.p_gg", "p_gg and p_bb cannot both be 1")
        for name in ("delta_copy", "delta_new", "eta_learn"):
            val = getattr(self, name)
            _require(0 <= val <= 1, f"{p}.{name}", f"must be in [0, 1], got {val!r}")


@dataclass(frozen=True)
class GenerationConfig:
    fs: float = 1000.0
    channels: tuple = MOTOR_CHANNELS
    reference: str = MOTOR_REFERENCE
    trial_s: float = 5.0
    mu_hz: float = 10.0
    mu_amplitude: float = 1.0
    erd_depth_good: float = 0.6
    erd_depth_bad: float = 0.1
    noise_sigma: float = 2.5
    amplitude_jitter: float = 0.2

    def validate(self, p="generation"):
        _require(self.fs > 0, f"{p}.fs", f"must be > 0, got {self.fs!r}")
        _require(len(self.channels) > 0 and len(set(self.channels)) == len(self.channels),
                 f"{p}.channels", "must be a non-empty list of unique names")
        _require(self.reference not in self.channels, f"{p}.reference", "must not be a recording channel")
        _require(self.trial_s > 0, f"{p}.trial_s", "must be > 0")
        _require(0 < self.mu_hz < self.fs / 2, f"{p}.mu_hz", "must be inside (0, fs/2)")
        _require(self.mu_amplitude > 0, f"{p}.mu_amplitude", "must be > 0")
        _require(0 <= self.erd_depth_good <= 1, f"{p}.erd_depth_good", "must be in [0, 1]")
        _require(0 <= self.erd_depth_bad < self.erd_depth_good, f"{p}.erd_depth_bad",
                 "must satisfy 0 <= erd_depth_bad < erd_depth_good")
        _require(self.noise_sigma > 0, f"{p}.noise_sigma", f"must be > 0, got {self.noise_sigma!r}")
        _require(self.amplitude_jitter >= 0, f"{p}.amplitude_jitter", "must be >= 0")


@dataclass(frozen=True)
class DecoderConfig:
    n_pairs: int = 3
    C: float = 1.0
    channels: tuple | None = None
    band_low_hz: float = 8.0
    band_high_hz: float = 30.0
    filter_order: int = 4
    val_fraction: float = 0.25
    calib_a_bound: float = 50.0
    distance_mode: str = "concat"

    def validate(self, p="decoder"):
        _require(isinstance(self.n_pairs, int) and self.n_pairs >= 1, f"{p}.n_pairs", "must be an integer >= 1")
        _require(self.C > 0, f"{p}.C", f"must be > 0, got {self.C!r}")
        _require(self.channels is None or len(self.channels) >= 2 * self.n_pairs, f"{p}.channels",
                 "channel subset must hold at least 2 * n_pairs channels")
        _require(0 < self.band_low_hz < self.band_high_hz, f"{p}.band_low_hz", "must satisfy 0 < low < high")
        _require(isinstance(self.filter_order, int) and self.filter_order >= 2 and self.filter_order % 2 == 0,
                 f"{p}.filter_order", "must be an even integer >= 2")
        _require(0 < self.val_fraction < 1, f"{p}.val_fraction", "must be in (0, 1)")
        _require(self.calib_a_bound > 0, f"{p}.calib_a_bound", "must be > 0")
        _require(self.distance_mode in DISTANCE_MODES, f"{p}.distance_mode", f"must be one of {DISTANCE_MODES}")


@dataclass(frozen=True)
class PaceConfig:
    lambda0: float = 0.2
    delta_lambda: float = 0.05

    def validate(self, p="pace"):
        _require(0 < self.lambda0 <= 1, f"{p}.lambda0", f"must be in (0, 1], got {self.lambda0!r}")
        _require(self.delta_lambda > 0, f"{p}.delta_lambda", f"must be > 0, got {self.delta_lambda!r}")


@dataclass(frozen=True)
class ReplayConfig:
    session_size: int | None = None  # trials per session when the file has no session metadata

    def validate(self, p="replay"):
        _require(self.session_size is None or (isinstance(self.session_size, int) and self.session_size >= 2),
                 f"{p}.session_size", "must be null or an integer >= 2")


@dataclass(frozen=True)
class OutputConfig:
    export_epochs: bool = False
    write_models: bool = True

    def validate(self, p="output"):
        pass


@dataclass(frozen=True)
class ExperimentConfig:
    session: SessionConfig = field(default_factory=SessionConfig)
    subject: SubjectConfig = field(default_factory=SubjectConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    pace: PaceConfig = field(default_factory=PaceConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def validate(self):
        for f in dataclasses.fields(self):
            block = getattr(self, f.name)
            if hasattr(block, "validate"):
                _check_types(block, f.name)
                block.validate(f.name)
        _require(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        g, d = self.generation, self.decoder
        _require(d.band_high_hz < g.fs / 2, "decoder.band_high_hz", "must be below fs/2")
        if d.channels is not None:
            missing = [c for c in d.channels if c not in g.channels]
            _require(not missing, "decoder.channels", f"unknown channels {missing}")
        _require(self.session.slice_end_s <= g.trial_s, "session.slice_end_s", "must not exceed generation.trial_s")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def canonical_json(self):
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_updates(self, **blocks):
        """Copy with selected fields replaced, e.g. ``with_updates(pace={"lambda0": 0.4})``."""
        kw = {}
        for name, value in blocks.items():
            if isinstance(value, dict):
                kw[name] = dataclasses.replace(getattr(self, name), **value)
            else:
                kw[name] = value
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        kwargs = {}
        block_types = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in block_types:
                raise ConfigError(key, "unknown config block")
            if key == "seed":
                kwargs[key] = value
                continue
            block_cls = _BLOCKS[key]
            if not isinstance(value, dict):
                raise ConfigError(key, "block must be a JSON object")
            known = {f.name for f in dataclasses.fields(block_cls)}
            for k in value:
                if k not in known:
                    raise ConfigError(f"{key}.{k}", "unknown field")
            vals = dict(value)
            for k in ("channels",):
                if k in vals and vals[k] is not None:
                    vals[k] = tuple(vals[k])
            kwargs[key] = block_cls(**vals)
        return cls(**kwargs).validate()


_BLOCKS = {
    "session": SessionConfig,
    "subject": SubjectConfig,
    "generation": GenerationConfig,
    "decoder": DecoderConfig,
    "pace": PaceConfig,
    "replay": ReplayConfig,
    "output": OutputConfig,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def default_config():
    return ExperimentConfig()
