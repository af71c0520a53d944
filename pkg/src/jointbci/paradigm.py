"""Session orchestration: calibration, copy/new feedback sessions, decoder updates.

A run is a calibration session without feedback followed by feedback
sessions. The decoder is retrained only at session boundaries, on every trial
collected so far: with self-paced reweighting in joint mode, or plainly
(RETRAIN) in co-adaptive mode. Joint-mode feedback trials come in same-class
pairs; the second trial of a pair carries a Copy or New instruction depending on
whether the first one reached the success threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import csp, metrics, spl, svm
from .errors import ExperimentError, JointBCIError, ParameterError, SequencingError
from .seeding import derive_seed, rng_for
from .signal import BandpassSpec, Label, design_bandpass, filter_array, slice_indices
from .subject import (GenerationParams, Instruction, apply_learning_update, generate_trial, step_mode,
                      subject_from_config)

JOINT = "joint"
COADAPTIVE = "coadaptive"


@dataclass(frozen=True)
class FeedbackState:
    c_left: float = 0.5
    c_right: float = 0.5
    update_count: int = 0


def update_feedback(state, p_left, alpha):
    """One brightness update; ``c_left`` is clamped to [0, 1] and ``c_right`` mirrors it."""
    if not 0 <= p_left <= 1:
        raise ParameterError(f"p_left must be in [0, 1], got {p_left}")
    c_left = min(1.0, max(0.0, state.c_left + alpha * ((p_left - 0.5) * 2)))
    return FeedbackState(c_left=c_left, c_right=1.0 - c_left, update_count=state.update_count + 1)


@dataclass(frozen=True, eq=False)
class TrialOutcome:
    label: Label
    instruction: Instruction
    window_correct: np.ndarray
    accuracy: float
    success: bool
    mean_p_left: float
    decision_trace: np.ndarray
    position: str = "single"  # "first", "next" or "single"
    feedback: FeedbackState = field(default_factory=FeedbackState)


def score_trial(decoder, window_features, label, threshold_t=0.7, instruction=Instruction.NONE,
                position="single", alpha=None):
    """Classify every window of a trial and summarise.

    ``decoder`` is a :class:`spl.TrainedDecoder` or a bare
    :class:`svm.DecoderModel`; ``window_features`` has one row per window.
    With ``alpha`` set, the feedback brightness is updated once per window.
    """
    feats = np.atleast_2d(np.asarray(window_features, dtype=float))
    if len(feats) < 1:
        raise ParameterError("need at least one window")
    model = getattr(decoder, "model", decoder)
    label = Label.parse(label)
    dec = svm.decision_value(model, feats)
    correct = svm.hard_label(dec) == int(label)
    p_left = svm.posterior_left(model, dec)
    fb = FeedbackState()
    if alpha is not None:
        for p in p_left:
            fb = update_feedback(fb, float(p), alpha)
    acc = float(np.mean(correct))
    return TrialOutcome(label=label, instruction=instruction, window_correct=correct, accuracy=acc,
                        success=acc >= threshold_t, mean_p_left=float(np.mean(p_left)),
                        decision_trace=dec, position=position, feedback=fb)


def next_instruction(previous, mode=JOINT):
    """Copy after a successful first trial, New after a failed one."""
    if mode == COADAPTIVE:
        return Instruction.NONE
    if previous.position != "first":
        raise SequencingError(f"instruction requested after a {previous.position!r} trial")
    return Instruction.COPY if previous.success else Instruction.NEW


# ---------------------------------------------------------------------------
# signal path shared by simulation and replay


class Pipeline:
    """Channel pick, causal band-pass, slice grid and online window grid."""

    def __init__(self, config, layout):
        d, s = config.decoder, config.session
        self.fs = config.generation.fs
        self.channels = tuple(d.channels) if d.channels else tuple(layout.names)
        self.rows = layout.indices(self.channels)
        self.coeffs = design_bandpass(BandpassSpec(d.band_low_hz, d.band_high_hz, d.filter_order, self.fs))
        self.grid_starts, self.grid_width = slice_indices(
            self.fs, s.slice_start_s, s.slice_end_s, s.slice_window_s, s.slice_window_s)
        self.online_starts, self.online_width = slice_indices(
            self.fs, s.slice_start_s, s.slice_end_s, s.window_s, s.hop_s)

    def filter(self, data):
        return filter_array(self.coeffs, np.asarray(data)[self.rows])

    def grid_covariances(self, filtered):
        slices = np.stack([filtered[:, i:i + self.grid_width] for i in self.grid_starts])
        return spl.CovarianceSet.from_slices(slices)

    def window_features(self, bank, filtered, starts=None, width=None):
        """Log-variance features of sliding windows via running sums of the projections."""
        starts = self.online_starts if starts is None else starts
        width = self.online_width if width is None else width
        z = bank.filters @ filtered
        c1 = np.concatenate([np.zeros((len(z), 1)), np.cumsum(z, axis=1)], axis=1)
        c2 = np.concatenate([np.zeros((len(z), 1)), np.cumsum(z * z, axis=1)], axis=1)
        s1 = c1[:, starts + width] - c1[:, starts]
        s2 = c2[:, starts + width] - c2[:, starts]
        var = np.maximum(s2 / width - (s1 / width) ** 2, 0.0).T
        return csp._log_ratio(var)


def _validation_split(trial_labels, fraction):
    """Boolean mask of validation trials: the last ``fraction`` of each class, in time order."""
    labels = np.asarray(trial_labels)
    mask = np.zeros(len(labels), dtype=bool)
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        k = int(round(fraction * len(idx)))
        k = min(max(k, 1), len(idx) - 1)
        mask[idx[len(idx) - k:]] = True
    return mask


def train_session_decoder(mode, covs, trial_labels, n_slices, config, seed, session_index):
    """Fit the decoder on every trial collected so far.

    ``covs`` holds ``n_slices`` consecutive slices per trial in trial order.
    """
    d, pace = config.decoder, config.pace
    trial_labels = np.asarray(trial_labels)
    slice_labels = np.repeat(trial_labels, n_slices)
    if mode == COADAPTIVE:
        return spl.train_unweighted_decoder(covs, slice_labels, C=d.C, n_pairs=d.n_pairs,
                                            calib_a_bound=d.calib_a_bound)
    val_trials = _validation_split(trial_labels, d.val_fraction)
    val = np.repeat(val_trials, n_slices)
    return spl.train_joint_decoder(
        covs[~val], slice_labels[~val], covs[val], slice_labels[val],
        lambda0=pace.lambda0, delta_lambda=pace.delta_lambda,
        seed=derive_seed(seed, "decoder", session_index), C=d.C, n_pairs=d.n_pairs,
        calib_a_bound=d.calib_a_bound)


def session_labels(mode, per_class, calibration, rng):
    """Balanced, shuffled label order; joint feedback sessions use same-class pairs."""
    if mode == JOINT and not calibration:
        pairs = np.array([1] * (per_class // 2) + [-1] * (per_class // 2))
        rng.shuffle(pairs)
        return np.repeat(pairs, 2), True
    labels = np.array([1] * per_class + [-1] * per_class)
    rng.shuffle(labels)
    return labels, False


@dataclass
class ExperimentResult:
    report: metrics.ExperimentReport
    decoders: list
    epochs: list = field(default_factory=list)
    sessions: list = field(default_factory=list)


class _Book:
    """Accumulates per-trial data and builds session summaries."""

    def __init__(self, config, pipeline, mode, seed):
        self.config = config
        self.pipe = pipeline
        self.mode = mode
        self.seed = seed
        self.n_slices = len(pipeline.grid_starts)
        self.covs = []
        self.labels = []
        self.sessions = []
        self.records = []
        self.decoders = []
        self.traces = []

    def add(self, covs, label, session):
        self.covs.append(covs)
        self.labels.append(int(label))
        self.sessions.append(session)

    def all_covs(self):
        return spl.CovarianceSet.concat(self.covs)

    def grid_outcome(self, decoder, covs, label, instruction=Instruction.NONE, position="single"):
        t = self.config.session
        return score_trial(decoder, decoder.features(covs.sample), label, t.threshold_t,
                           instruction, position, alpha=t.alpha)

    def train(self, session):
        try:
            dec = train_session_decoder(self.mode, self.all_covs(), self.labels, self.n_slices,
                                        self.config, self.seed, session)
        except JointBCIError as exc:
            raise ExperimentError(session + 1, exc) from exc
        self.decoders.append(dec)
        self.traces.append(dec.trace)
        return dec

    def trial_weights(self, decoder, idx):
        covs = spl.CovarianceSet.concat([self.covs[i] for i in idx])
        labels = np.repeat([self.labels[i] for i in idx], self.n_slices)
        w = decoder.sample_weights(covs.sample, labels)
        dec = decoder.decisions(covs.sample)
        return w.reshape(-1, self.n_slices).mean(1), dec.reshape(-1, self.n_slices).mean(1)

    def summarise(self, session, decoder, calibration):
        idx = [i for i, s in enumerate(self.sessions) if s == session]
        weights, decisions = self.trial_weights(decoder, idx)
        recs = [self.records[i] for i in idx]
        for r, w in zip(recs, weights):
            r.weight = float(w)
        labels = np.array([self.labels[i] for i in idx])
        scores = metrics.fit_score_distribution(decisions, labels, weights)
        acc = [r.accuracy for r in recs]
        return metrics.SessionSummary(
            index=session + 1, calibration=calibration,
            accuracy=float(np.mean(acc)),
            offline_accuracy=float(np.mean([r.offline_accuracy for r in recs])),
            success_proportion=metrics.success_proportion(acc, self.config.session.threshold_t),
            distance=float("nan"), scores=scores, n_trials=len(idx))

    def distances(self, summaries):
        """Refit plain CSP on the last two sessions and measure every session with it."""
        n_sess = max(self.sessions) + 1
        last = [i for i, s in enumerate(self.sessions) if s >= n_sess - 2]
        covs = spl.CovarianceSet.concat([self.covs[i] for i in last])
        y = np.repeat([self.labels[i] for i in last], self.n_slices)
        bank = csp.fit_csp_from_covariances(covs.trial, np.ones(len(y)), y, self.config.decoder.n_pairs)
        for summ in summaries:
            idx = [i for i, s in enumerate(self.sessions) if s == summ.index - 1]
            cs = spl.CovarianceSet.concat([self.covs[i] for i in idx])
            f = csp.features_from_covariances(bank, cs.sample)
            yy = np.repeat([self.labels[i] for i in idx], self.n_slices)
            summ.distance = metrics.feature_distance(f[yy == 1], f[yy == -1], self.config.decoder.distance_mode)

    def trajectories(self):
        feedback = [r for r in self.records if not np.isnan(r.mean_decision)]
        if not feedback:
            return {}
        dec = [r.mean_decision for r in feedback]
        lab = [r.label for r in feedback]
        try:
            return metrics.score_trajectory(dec, lab)
        except ParameterError:
            return {}


def run_experiment(config, subject=None, pace=None, seed=None, keep_epochs=False):
    """Simulate a full calibration + feedback experiment.

    ``subject`` defaults to one built from ``config.subject``; ``pace``
    (``(lambda0, delta_lambda)``) overrides ``config.pace``; ``seed`` overrides
    ``config.seed``. Deterministic in the resolved config and seed.
    """
    if seed is not None:
        config = replace(config, seed=int(seed))
    if pace is not None:
        config = config.with_updates(pace={"lambda0": pace[0], "delta_lambda": pace[1]})
    config.validate()
    seed = config.seed
    mode = config.session.mode
    sess_cfg = config.session
    gen = GenerationParams.from_config(config.generation)
    pipe = Pipeline(config, gen.channels)
    state = subject if subject is not None else subject_from_config(config.subject, derive_seed(seed, "subject"))
    book = _Book(config, pipe, mode, seed)
    epochs, epoch_sessions, summaries, subject_trace = [], [], [], []
    decoder = None
    trial_index = 0

    for s in range(sess_cfg.n_sessions):
        calibration = s == 0
        per_class = sess_cfg.calibration_per_class if calibration else sess_cfg.trials_per_session
        labels, paired = session_labels(mode, per_class, calibration, rng_for(seed, "labels", s))
        filtered_session = []
        prev = None
        for j, lab in enumerate(labels):
            label = Label(int(lab))
            position = ("first" if j % 2 == 0 else "next") if paired else "single"
            instruction = next_instruction(prev, mode) if position == "next" else Instruction.NONE
            state = step_mode(state, instruction)
            epoch = generate_trial(state, label, gen, trial_index)
            trial_index += 1
            if keep_epochs:
                epochs.append(epoch)
                epoch_sessions.append(s)
            filtered = pipe.filter(epoch.data)
            covs = pipe.grid_covariances(filtered)
            book.add(covs, label, s)
            rec = metrics.TrialRecord(session=s + 1, index=len(book.records), label=int(label),
                                      instruction=instruction.value, pair_position=position,
                                      mode=state.mode.value, accuracy=float("nan"),
                                      offline_accuracy=float("nan"), success=False,
                                      mean_decision=float("nan"), mean_p_left=float("nan"),
                                      final_c_left=0.5, weight=float("nan"))
            if calibration:
                filtered_session.append(filtered)
            else:
                outcome = score_trial(decoder, pipe.window_features(decoder.bank, filtered), label,
                                      sess_cfg.threshold_t, instruction, position, alpha=sess_cfg.alpha)
                grid = book.grid_outcome(decoder, covs, label)
                rec.accuracy = outcome.accuracy
                rec.offline_accuracy = grid.accuracy
                rec.success = bool(outcome.success)
                rec.mean_decision = float(np.mean(outcome.decision_trace))
                rec.mean_p_left = outcome.mean_p_left
                rec.final_c_left = outcome.feedback.c_left
                state = apply_learning_update(state, outcome.success)
                prev = outcome
            book.records.append(rec)

        decoder = book.train(s)
        if calibration:
            # no online decoder existed during calibration: score it in-sample
            idx = [i for i, ss in enumerate(book.sessions) if ss == s]
            for i, filtered in zip(idx, filtered_session):
                rec = book.records[i]
                outcome = score_trial(decoder, pipe.window_features(decoder.bank, filtered), rec.label,
                                      sess_cfg.threshold_t)
                rec.accuracy = outcome.accuracy
                rec.success = bool(outcome.success)
                rec.offline_accuracy = book.grid_outcome(decoder, book.covs[i], rec.label).accuracy
        summaries.append(book.summarise(s, decoder, calibration))
        subject_trace.append({"session": s + 1, "p_gg": state.p_gg, "p_bb": state.p_bb,
                              "p_good": state.p_good})

    book.distances(summaries)
    report = metrics.ExperimentReport(mode=mode, sessions=summaries, trials=book.records,
                                      training_traces=book.traces, trajectories=book.trajectories(),
                                      subject_trace=subject_trace, source="simulate")
    return ExperimentResult(report=report, decoders=book.decoders, epochs=epochs, sessions=epoch_sessions)


def split_sessions(n_trials, config, sessions=None):
    """Session index per trial: from file metadata, fixed chunks, or the session layout."""
    if sessions is not None:
        uniq = sorted(set(sessions))
        remap = {s: i for i, s in enumerate(uniq)}
        return [remap[s] for s in sessions]
    size = config.replay.session_size
    if size is not None:
        return [i // size for i in range(n_trials)]
    first = 2 * config.session.calibration_per_class
    rest = 2 * config.session.trials_per_session
    return [0 if i < first else 1 + (i - first) // rest for i in range(n_trials)]


def run_replay(epochs, config, sessions=None):
    """Pseudo-online pass over recorded epochs, scored on the slice grid.

    Sessions are processed in order; the decoder trained after session k is
    used to score session k + 1, exactly as in :func:`run_experiment`.
    """
    config.validate()
    if not epochs:
        raise ParameterError("no epochs to replay")
    mode = config.session.mode
    pipe = Pipeline(config, epochs[0].layout)
    if abs(epochs[0].fs - pipe.fs) > 1e-9:
        pipe = Pipeline(config.with_updates(generation={"fs": epochs[0].fs}), epochs[0].layout)
    sess_idx = split_sessions(len(epochs), config, sessions)
    book = _Book(config, pipe, mode, config.seed)
    summaries = []
    decoder = None
    n_sess = max(sess_idx) + 1
    if n_sess < 2:
        raise ParameterError("replay needs at least two sessions")
    for s in range(n_sess):
        idx = [i for i, ss in enumerate(sess_idx) if ss == s]
        if not idx:
            continue
        for i in idx:
            e = epochs[i]
            covs = pipe.grid_covariances(pipe.filter(e.data))
            book.add(covs, e.label, s)
            rec = metrics.TrialRecord(session=s + 1, index=len(book.records), label=int(e.label),
                                      instruction=Instruction.NONE.value, pair_position="single", mode=None,
                                      accuracy=float("nan"), offline_accuracy=float("nan"), success=False,
                                      mean_decision=float("nan"), mean_p_left=float("nan"),
                                      final_c_left=0.5, weight=float("nan"))
            if decoder is not None:
                out = book.grid_outcome(decoder, covs, e.label)
                rec.accuracy = rec.offline_accuracy = out.accuracy
                rec.success = bool(out.success)
                rec.mean_decision = float(np.mean(out.decision_trace))
                rec.mean_p_left = out.mean_p_left
                rec.final_c_left = out.feedback.c_left
            book.records.append(rec)
        calibration = decoder is None
        decoder = book.train(s)
        if calibration:
            for i in [k for k, ss in enumerate(book.sessions) if ss == s]:
                rec = book.records[i]
                out = book.grid_outcome(decoder, book.covs[i], rec.label)
                rec.accuracy = rec.offline_accuracy = out.accuracy
                rec.success = bool(out.success)
        summaries.append(book.summarise(s, decoder, calibration))
    book.distances(summaries)
    report = metrics.ExperimentReport(mode=mode, sessions=summaries, trials=book.records,
                                      training_traces=book.traces, trajectories=book.trajectories(),
                                      source="replay")
    return ExperimentResult(report=report, decoders=book.decoders)
