"""Simulated subject: a two-state (Good/Bad) Markov learner that emits MI-like EEG.

In Good mode the mu rhythm over the hemisphere contralateral to the imagined
hand is attenuated (event-related desynchronisation); in Bad mode a weak
attenuation lands on a random hemisphere, so the trial carries no class
information. Instructions bend the transition probabilities for one step, and
successful feedback trials drift them towards Good.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .seeding import derive_seed
from .signal import MOTOR_CHANNELS, MOTOR_REFERENCE, ChannelLayout, Epoch, Label


class Mode(enum.Enum):
    GOOD = "good"
    BAD = "bad"


class Instruction(enum.Enum):
    COPY = "copy"
    NEW = "new"
    NONE = "none"


def _clamp(p):
    return min(1.0, max(0.0, p))


def steady_state(p_gg, p_bb):
    """Stationary ``(P(Good), P(Bad))`` of the two-state chain."""
    if not (0 <= p_gg <= 1 and 0 <= p_bb <= 1):
        raise ParameterError(f"transition probabilities must be in [0, 1], got {p_gg}, {p_bb}")
    leave_g, leave_b = 1.0 - p_gg, 1.0 - p_bb
    denom = leave_g + leave_b
    if denom <= 0:
        raise ParameterError("degenerate chain: p_gg = p_bb = 1 has no unique steady state")
    return leave_b / denom, leave_g / denom


def transition_matrix(p_gg, p_bb):
    return np.array([[p_gg, 1.0 - p_gg], [1.0 - p_bb, p_bb]])


@dataclass(frozen=True)
class SubjectState:
    p_gg: float = 0.6
    p_bb: float = 0.6
    mode: Mode | None = None
    delta_copy: float = 0.2
    delta_new: float = 0.2
    eta_learn: float = 0.002
    rng_seed: int = 0
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p_gg", _clamp(float(self.p_gg)))
        object.__setattr__(self, "p_bb", _clamp(float(self.p_bb)))

    @property
    def p_good(self):
        return steady_state(self.p_gg, self.p_bb)[0]


def effective_transitions(state, instruction):
    """Transition probabilities after one-step instruction modulation."""
    p_gg, p_bb = state.p_gg, state.p_bb
    if instruction is Instruction.COPY and state.mode is Mode.GOOD:
        p_gg = _clamp(p_gg + state.delta_copy)
    elif instruction is Instruction.NEW and state.mode is Mode.BAD:
        p_bb = _clamp(p_bb - state.delta_new)
    return p_gg, p_bb


def step_mode(state, instruction=Instruction.NONE):
    """Draw the mode for the next trial.

    The very first draw (``mode is None``) comes from the steady state. Each
    draw uses its own generator keyed by ``(rng_seed, step)``.
    """
    u = np.random.default_rng(derive_seed(state.rng_seed, "mode", state.step)).random()
    p_gg, p_bb = effective_transitions(state, instruction)
    if state.mode is None:
        p_to_good = steady_state(state.p_gg, state.p_bb)[0] if state.p_gg + state.p_bb < 2 else 0.5
    elif state.mode is Mode.GOOD:
        p_to_good = p_gg
    else:
        p_to_good = 1.0 - p_bb
    new = Mode.GOOD if u < p_to_good else Mode.BAD
    return replace(state, mode=new, step=state.step + 1)


def simulate_chain(p_gg, p_bb, n_steps, seed=0, start=Mode.GOOD):
    """Mode path of the unmodulated chain drawn from one stream.

    Much cheaper than repeated :func:`step_mode` calls; meant for long
    Monte-Carlo runs. Returns a bool array, True for Good.
    """
    stay = transition_matrix(p_gg, p_bb).diagonal()
    u = np.random.default_rng(seed).random(n_steps).tolist()
    good = start is Mode.GOOD
    out = np.empty(n_steps, dtype=bool)
    p_stay_g, p_stay_b = float(stay[0]), float(stay[1])
    for i, ui in enumerate(u):
        good = ui < p_stay_g if good else ui >= p_stay_b
        out[i] = good
    return out


def apply_learning_update(state, trial_success):
    if not trial_success or state.eta_learn == 0:
        return state
    return replace(state, p_gg=_clamp(state.p_gg + state.eta_learn),
                   p_bb=_clamp(state.p_bb - state.eta_learn))


# ---------------------------------------------------------------------------
# EEG generation

_COLUMN = {"5": -3, "3": -2, "1": -1, "z": 0, "Z": 0, "2": 1, "4": 2, "6": 3}
_ROW = {"FC": 1, "C": 0, "CP": -1}


def electrode_position(name):
    """Rough (x, y) grid position of a 10-20 sensorimotor electrode."""
    prefix = name.rstrip("0123456789zZ")
    return float(_COLUMN[name[len(prefix):]]), float(_ROW[prefix])


def default_contralateral_map(channels=MOTOR_CHANNELS):
    """Left-hand imagery attenuates the right hemisphere and vice versa."""
    right = tuple(c for c in channels if electrode_position(c)[0] > 0)
    left = tuple(c for c in channels if electrode_position(c)[0] < 0)
    return {Label.LEFT: right, Label.RIGHT: left}


@dataclass(frozen=True)
class GenerationParams:
    channels: ChannelLayout = field(default_factory=ChannelLayout.motor)
    fs: float = 1000.0
    trial_s: float = 5.0
    mu_hz: float = 10.0
    mu_amplitude: float = 1.0
    erd_depth_good: float = 0.6
    erd_depth_bad: float = 0.1
    noise_sigma: float = 2.5
    amplitude_jitter: float = 0.2
    contralateral_map: dict = None

    def __post_init__(self):
        if not self.erd_depth_good > self.erd_depth_bad >= 0 or self.erd_depth_good > 1:
            raise ParameterError("need 1 >= erd_depth_good > erd_depth_bad >= 0")
        if not self.noise_sigma > 0:
            raise ParameterError("noise_sigma must be > 0")
        if self.contralateral_map is None:
            object.__setattr__(self, "contralateral_map", default_contralateral_map(self.channels.names))

    @classmethod
    def from_config(cls, g):
        return cls(channels=ChannelLayout(tuple(g.channels), g.reference), fs=g.fs, trial_s=g.trial_s,
                   mu_hz=g.mu_hz, mu_amplitude=g.mu_amplitude, erd_depth_good=g.erd_depth_good,
                   erd_depth_bad=g.erd_depth_bad, noise_sigma=g.noise_sigma,
                   amplitude_jitter=g.amplitude_jitter)


def _source_gains(names):
    """Spatial spread of the two motor mu sources (near C3 and C4) onto each channel."""
    pos = np.array([electrode_position(n) for n in names])
    out = []
    for cx in (-2.0, 2.0):
        d2 = (pos[:, 0] - cx) ** 2 + pos[:, 1] ** 2
        out.append(np.exp(-d2 / (2 * 1.5 ** 2)))
    return np.stack(out)  # (2, channels)


def pink_noise(rng, n_rows, n_samples):
    """Unit-variance noise with a 1/f power spectrum, one row per channel."""
    white = rng.standard_normal((n_rows, n_samples))
    spec = np.fft.rfft(white, axis=1)
    f = np.arange(spec.shape[1], dtype=float)
    f[0] = 1.0
    spec = spec / np.sqrt(f)
    spec[:, 0] = 0.0
    x = np.fft.irfft(spec, n=n_samples, axis=1)
    return x / x.std(axis=1, keepdims=True)


def generate_trial(state, label, params, trial_index=0):
    """Synthesise one trial for ``label`` in the subject's current mode.

    Deterministic in ``(state.rng_seed, trial_index)``. Values are rounded to
    float32 so the trial survives a round trip through the epoch container.
    """
    label = Label.parse(label)
    if state.mode is None:
        raise ParameterError("subject has no mode yet; call step_mode first")
    rng = np.random.default_rng(derive_seed(state.rng_seed, "trial", int(trial_index)))
    names = params.channels.names
    n_ch = len(names)
    n = int(round(params.trial_s * params.fs))
    t = np.arange(n) / params.fs

    gains = _source_gains(names)
    jitter = params.amplitude_jitter
    sources = np.empty((2, n))
    for k in range(2):
        freq = params.mu_hz * (1.0 + 0.05 * rng.standard_normal())
        phase = rng.uniform(0, 2 * np.pi)
        amp = params.mu_amplitude * np.exp(jitter * rng.standard_normal())
        # slow amplitude wobble so the rhythm is not a pure tone
        wobble = 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
        sources[k] = amp * wobble * np.sin(2 * np.pi * freq * t + phase)
    mu = gains.T @ sources

    if state.mode is Mode.GOOD:
        side, depth = label, params.erd_depth_good
    else:
        side = Label.LEFT if rng.random() < 0.5 else Label.RIGHT
        depth = params.erd_depth_bad
    attenuated = params.channels.indices(params.contralateral_map[side])
    mu[attenuated] *= 1.0 - depth

    noise = pink_noise(rng, n_ch, n) + 0.5 * pink_noise(rng, 1, n)
    data = mu + params.noise_sigma * noise
    data = data.astype(np.float32).astype(np.float64)
    return Epoch(data, label, params.fs, params.channels)


def subject_from_config(cfg, seed):
    return SubjectState(p_gg=cfg.p_gg, p_bb=cfg.p_bb, delta_copy=cfg.delta_copy,
                        delta_new=cfg.delta_new, eta_learn=cfg.eta_learn, rng_seed=seed)
