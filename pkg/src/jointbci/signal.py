"""Epoch data model, band-pass filtering, trial slicing and the epoch container format.

The container is a single JSON header line followed by a little-endian float32
payload laid out trial-major, then channel-major::

    {"version":1,"fs":1000,"channels":[...],"reference":"CPz","trials":n,
     "samples_per_trial":t,"labels":[0,1,...]}\\n
    <n * channels * t float32 values>

Label code 0 is Left, 1 is Right. An optional ``"sessions"`` list of per-trial
session indices is carried through when present.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import FormatError, InputError, ParameterError

# Channels used in the recordings (the reference CPz is excluded).
MOTOR_CHANNELS = (
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CP2", "CP4", "CP6",
)
MOTOR_REFERENCE = "CPz"

# Sub-montages for electrode-count ablations, largest to smallest.
CHANNEL_SUBSETS = {
    20: MOTOR_CHANNELS,
    14: ("FC3", "FC1", "FCz", "FC2", "FC4", "C3", "C1", "Cz", "C2", "C4",
         "CP3", "CP1", "CP2", "CP4"),
    8: ("FC3", "FCz", "FC4", "C3", "Cz", "C4", "CP3", "CP4"),
    3: ("C3", "Cz", "C4"),
}

FORMAT_VERSION = 1


class Label(IntEnum):
    """Class label. The integer value doubles as the SVM target."""

    LEFT = 1
    RIGHT = -1

    @property
    def code(self):
        """File code: 0 for Left, 1 for Right."""
        return 0 if self is Label.LEFT else 1

    @classmethod
    def from_code(cls, code):
        if code == 0:
            return cls.LEFT
        if code == 1:
            return cls.RIGHT
        raise ValueError(f"label code must be 0 or 1, got {code!r}")

    @classmethod
    def parse(cls, value):
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            v = value.strip().lower()
            if v in ("left", "l"):
                return cls.LEFT
            if v in ("right", "r"):
                return cls.RIGHT
            return cls.from_code(int(v))
        # numbers are signed labels; file codes go through from_code
        v = int(value)
        if v not in (1, -1):
            raise ValueError(f"numeric label must be +1 or -1, got {value!r}")
        return cls(v)


@dataclass(frozen=True)
class ChannelLayout:
    names: tuple
    reference: str = MOTOR_REFERENCE

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ParameterError("channel layout needs at least one channel")
        if len(set(names)) != len(names):
            raise ParameterError("channel names must be unique")
        if self.reference in names:
            raise ParameterError(f"reference {self.reference!r} is also a recording channel")

    def __len__(self):
        return len(self.names)

    def indices(self, subset):
        """Row indices of ``subset`` within this layout."""
        lookup = {n: i for i, n in enumerate(self.names)}
        try:
            return [lookup[n] for n in subset]
        except KeyError as exc:
            raise ParameterError(f"channel {exc.args[0]!r} not in layout") from None

    @classmethod
    def motor(cls):
        return cls(MOTOR_CHANNELS, MOTOR_REFERENCE)


@dataclass(frozen=True, eq=False)
class Epoch:
    """One trial: ``data`` is channels x samples (microvolts)."""

    data: np.ndarray
    label: Label
    fs: float
    layout: ChannelLayout

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InputError(f"epoch data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(self.layout):
            raise InputError(
                f"epoch has {data.shape[0]} rows but layout has {len(self.layout)} channels"
            )
        if data.shape[1] < 1:
            raise InputError("epoch needs at least one sample")
        if not np.all(np.isfinite(data)):
            raise InputError("epoch contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "label", Label.parse(self.label))
        if not self.fs > 0:
            raise ParameterError(f"sampling rate must be positive, got {self.fs}")

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.fs

    def with_data(self, data):
        return Epoch(data, self.label, self.fs, self.layout)

    def pick(self, channels):
        """Restrict to a channel subset, keeping the given order."""
        idx = self.layout.indices(channels)
        return Epoch(self.data[idx], self.label, self.fs, ChannelLayout(channels, self.layout.reference))


@dataclass(frozen=True, eq=False)
class TrialSlice:
    data: np.ndarray
    offset_s: float


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 8.0
    high_hz: float = 30.0
    order: int = 4
    fs: float = 1000.0

    def __post_init__(self):
        if not (0 < self.low_hz < self.high_hz < self.fs / 2):
            raise ParameterError(
                f"band edges must satisfy 0 < low < high < fs/2, got "
                f"low={self.low_hz}, high={self.high_hz}, fs={self.fs}"
            )
        if self.order < 2 or self.order % 2:
            raise ParameterError(f"filter order must be even and >= 2, got {self.order}")


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Second-order sections, one row per section: ``b0 b1 b2 a0 a1 a2``."""

    sos: np.ndarray
    spec: BandpassSpec = field(default=None)

    def poles(self):
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def zeros(self):
        return np.concatenate([np.roots(s[:3]) for s in self.sos])

    def response(self, freqs_hz):
        """Complex frequency response at ``freqs_hz``."""
        fs = self.spec.fs
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
        h = np.ones_like(z)
        for s in self.sos:
            h = h * np.polyval(s[:3][::-1], 1 / z) / np.polyval(s[3:][::-1], 1 / z)
        return h


def design_bandpass(spec):
    """Butterworth band-pass as a cascade of second-order sections.

    ``spec.order`` is the order of the low-pass prototype, so the band-pass has
    ``2 * order`` poles (the usual ``butter(N, [lo, hi])`` convention); both
    edges sit at -3 dB.
    """
    if not isinstance(spec, BandpassSpec):
        raise ParameterError("design_bandpass expects a BandpassSpec")
    sos = sps.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass", fs=spec.fs, output="sos")
    return FilterCoefficients(sos=sos, spec=spec)


def apply_filter(coeffs, epoch):
    """Causal, zero-initial-state filtering of every channel."""
    out = sps.sosfilt(coeffs.sos, epoch.data, axis=-1)
    return epoch.with_data(out)


def filter_array(coeffs, data):
    """Same as :func:`apply_filter` on a raw ``(..., samples)`` array."""
    return sps.sosfilt(coeffs.sos, np.asarray(data, dtype=np.float64), axis=-1)


def slice_offsets(start_s, end_s, window_s, hop_s):
    """Start offsets (seconds) of every window that fits inside ``[start_s, end_s]``."""
    if start_s < 0 or window_s <= 0 or hop_s <= 0:
        raise ParameterError("start must be >= 0, window and hop must be > 0")
    span = end_s - start_s - window_s
    if span < -1e-9:
        raise ParameterError(
            f"window {window_s}s does not fit between {start_s}s and {end_s}s"
        )
    count = int(math.floor(max(span, 0.0) / hop_s + 1e-9)) + 1
    return [start_s + i * hop_s for i in range(count)]


def slice_trial(epoch, start_s=0.5, end_s=4.5, window_s=1.0, hop_s=1.0):
    if end_s > epoch.duration + 1e-9:
        raise ParameterError(f"end {end_s}s exceeds trial duration {epoch.duration}s")
    offsets = slice_offsets(start_s, end_s, window_s, hop_s)
    width = int(round(window_s * epoch.fs))
    out = []
    for off in offsets:
        i0 = int(round(off * epoch.fs))
        out.append(TrialSlice(data=epoch.data[:, i0:i0 + width], offset_s=off))
    return out


def slice_indices(fs, start_s, end_s, window_s, hop_s):
    """Sample index of each window start plus the window width in samples."""
    offsets = slice_offsets(start_s, end_s, window_s, hop_s)
    return np.array([int(round(o * fs)) for o in offsets]), int(round(window_s * fs))


# ---------------------------------------------------------------------------
# container format


def write_epochs(path, epochs, sessions=None):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_csv(path, epochs)
        return
    if not epochs:
        raise FormatError("refusing to write an empty epoch list")
    first = epochs[0]
    for e in epochs:
        if e.layout != first.layout or e.fs != first.fs or e.n_samples != first.n_samples:
            raise InputError("all epochs in one file must share layout, fs and length")
    header = {
        "version": FORMAT_VERSION,
        "fs": first.fs,
        "channels": list(first.layout.names),
        "reference": first.layout.reference,
        "trials": len(epochs),
        "samples_per_trial": first.n_samples,
        "labels": [e.label.code for e in epochs],
    }
    if sessions is not None:
        if len(sessions) != len(epochs):
            raise InputError("sessions must have one entry per epoch")
        header["sessions"] = [int(s) for s in sessions]
    payload = np.stack([e.data for e in epochs]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(payload.tobytes(order="C"))


def read_epochs(path, with_sessions=False):
    """Load epochs from a container (or ``.csv``) file.

    With ``with_sessions=True`` returns ``(epochs, sessions)`` where ``sessions``
    is ``None`` when the file carries no session metadata.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        epochs, sessions = _read_csv(path), None
    else:
        epochs, sessions = _read_container(path.read_bytes())
    return (epochs, sessions) if with_sessions else epochs


_REQUIRED = ("version", "fs", "channels", "reference", "trials", "samples_per_trial", "labels")


def _read_container(raw):
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing newline-terminated JSON header", offset=len(raw))
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=0) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=0)
    missing = [k for k in _REQUIRED if k not in header]
    if missing:
        raise FormatError(f"header missing fields {missing}", offset=0)
    if header["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported version {header['version']!r}", offset=0)
    n, t = header["trials"], header["samples_per_trial"]
    channels = header["channels"]
    if not isinstance(n, int) or n < 1:
        raise FormatError(f"trials must be a positive integer, got {n!r}", offset=0)
    if not isinstance(t, int) or t < 1:
        raise FormatError(f"samples_per_trial must be a positive integer, got {t!r}", offset=0)
    labels = header["labels"]
    if not isinstance(labels, list) or len(labels) != n:
        raise FormatError(f"expected {n} labels, got {len(labels) if isinstance(labels, list) else labels!r}", offset=0)
    sessions = header.get("sessions")
    if sessions is not None and (not isinstance(sessions, list) or len(sessions) != n):
        raise FormatError(f"expected {n} session indices", offset=0)
    try:
        layout = ChannelLayout(tuple(channels), header["reference"])
        label_objs = [Label.from_code(c) for c in labels]
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad header: {exc}", offset=0) from None

    start = nl + 1
    expected = n * len(channels) * t * 4
    actual = len(raw) - start
    if actual != expected:
        rows = actual / (n * t * 4)
        detail = ""
        if actual < expected and rows == int(rows):
            detail = f"; shape mismatch: header says {len(channels)} channels, payload holds {int(rows)}"
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes, got {actual}{detail}",
            offset=start + min(actual, expected),
        )
    data = np.frombuffer(raw, dtype="<f4", offset=start).reshape(n, len(channels), t)
    bad = ~np.isfinite(data)
    if bad.any():
        flat = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("non-finite value in payload", offset=start + 4 * flat)
    fs = float(header["fs"])
    epochs = [Epoch(data[i].astype(np.float64), label_objs[i], fs, layout) for i in range(n)]
    return epochs, ([int(s) for s in sessions] if sessions is not None else None)


def _write_csv(path, epochs):
    first = epochs[0]
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs={first.fs} reference={first.layout.reference}\n")
        w = csv.writer(fh)
        w.writerow(["trial", "label", "channel"] + [f"s{i}" for i in range(first.n_samples)])
        for ti, e in enumerate(epochs):
            for name, row in zip(e.layout.names, e.data):
                w.writerow([ti, e.label.name.title(), name] + [repr(float(v)) for v in row])


def _read_csv(path):
    fs, reference = None, MOTOR_REFERENCE
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    if k == "fs":
                        fs = float(v)
                    elif k == "reference":
                        reference = v
                continue
            rows.append(line)
    if fs is None:
        raise FormatError("csv fixture needs a '# fs=<Hz>' comment line")
    reader = csv.reader(rows)
    next(reader, None)
    trials = {}
    for rec in reader:
        if not rec:
            continue
        ti, label, name = int(rec[0]), Label.parse(rec[1]), rec[2]
        vals = [float(v) for v in rec[3:]]
        trials.setdefault(ti, (label, [], []))
        trials[ti][1].append(name)
        trials[ti][2].append(vals)
    if not trials:
        raise FormatError("csv fixture holds no trials")
    out = []
    for ti in sorted(trials):
        label, names, data = trials[ti]
        out.append(Epoch(np.array(data), label, fs, ChannelLayout(tuple(names), reference)))
    return out
