"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
import scipy.signal as ss

from jointbci import csp, spl, svm
from jointbci.cli import main
from jointbci.config import default_config
from jointbci.errors import SequencingError
from jointbci.paradigm import (COADAPTIVE, JOINT, FeedbackState, next_instruction, run_experiment,
                               score_trial, update_feedback)
from jointbci.signal import BandpassSpec, Label, design_bandpass
from jointbci.subject import Instruction, simulate_chain, steady_state, transition_matrix

from oracles import closed_form_weight, plain_csp, random_trials, svm_oracle

N_SEEDS = 20


def verdict(capsys, number, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail} "
              f"[{elapsed:.2f}s, budget {budget:g}s]")
    assert ok, detail


# 1 ---------------------------------------------------------------------------

def test_criterion_1_closed_form_weights(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    lam = r.uniform(1e-6, 1 - 1e-6, 1000)
    loss = r.uniform(0, 1.2, 1000) * lam
    got = np.array([spl.weight_from_loss(l, m) for l, m in zip(loss, lam)])
    ref = np.array([closed_form_weight(float(l), float(m)) for l, m in zip(loss, lam)])
    err = float(np.max(np.abs(got - ref)))

    at_zero = all(spl.weight_from_loss(0.0, m) == 1.0 for m in lam[:100])
    above = all(spl.weight_from_loss(m + e, m) == 0.0 for m, e in zip(lam[:100], r.uniform(0, 1, 100)))
    above = above and all(spl.weight_from_loss(m, m) == 0.0 for m in lam[:100])
    monotone = True
    for m in r.uniform(0.01, 0.99, 100):
        grid = np.linspace(0, m, 41)[1:-1]
        monotone &= bool(np.all(np.diff(spl.weight_from_loss(grid, m)) < 0))
    ok = err <= 1e-12 and at_zero and above and monotone
    verdict(capsys, 1, ok, f"max |v - closed form| = {err:.1e}, v(0)=1 {at_zero}, v(L>=lam)=0 {above}, "
            f"strictly decreasing {monotone}", time.perf_counter() - t0, 1)


# 2 ---------------------------------------------------------------------------

def _descent_run(seed, monkeypatch):
    r = np.random.default_rng(seed)
    n, d = int(r.integers(16, 41)), int(r.integers(1, 6))
    y = np.where(r.random(n) < 0.5, 1, -1)
    y[:2] = (1, -1)
    x = r.standard_normal((n, d)) + y[:, None] * r.uniform(0.2, 1.5)
    xv, yv = r.standard_normal((10, d)), np.array([1, -1] * 5)

    fits = []
    fit = svm.fit_weighted_svm

    def recording(features, labels, weights=None, **kw):
        model = fit(features, labels, weights, **kw)
        fits.append((np.array(weights, dtype=float), model))
        return model

    monkeypatch.setattr(svm, "fit_weighted_svm", recording)
    dec = spl.train_joint_decoder(x, y, xv, yv, float(r.uniform(0.1, 0.5)), float(r.uniform(0.05, 0.3)),
                                  seed=seed, C=float(r.uniform(0.5, 3.0)))
    monkeypatch.undo()

    v_rise, w_rise, skipped = -math.inf, -math.inf, 0
    for k in range(1, len(fits)):
        (v_prev, m_prev), (v_k, m_k) = fits[k - 1], fits[k]
        lam = dec.trace[k].lam
        scale = spl.loss_scale(spl.hinge_losses(m_prev, x, y))

        def objective(model, v):
            return spl.regularized_objective(model, x, y, v, lam, scale)

        if dec.trace[k].fallback:
            skipped += 1
        else:
            v_rise = max(v_rise, objective(m_prev, v_k) - objective(m_prev, v_prev))
        w_rise = max(w_rise, objective(m_k, v_k) - objective(m_prev, v_k))
    return v_rise, w_rise, skipped, len(fits) - 1


def test_criterion_2_alternating_descent(capsys, monkeypatch):
    t0 = time.perf_counter()
    runs = np.array([_descent_run(s, monkeypatch) for s in range(50)])
    v_rise, w_rise = runs[:, 0].max(), runs[:, 1].max()
    ok = v_rise <= 1e-9 and w_rise <= 1e-9
    verdict(capsys, 2, ok, f"50 datasets, {int(runs[:, 3].sum())} iterations: max v-step rise {v_rise:.1e}, "
            f"max w-step rise {w_rise:.1e} ({int(runs[:, 2].sum())} fallback v-steps not checked)",
            time.perf_counter() - t0, 30)


# 3 ---------------------------------------------------------------------------

def _svm_fixtures():
    r = np.random.default_rng(3)
    for n in (2, 3, 5, 8, 12, 20, 30):
        for d in range(1, 6):
            y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
            x = r.standard_normal((n, d)) + y[:, None] * r.uniform(0, 1.5)
            v = r.uniform(0, 1, n)
            yield x, y, v, float(r.choice([0.1, 1.0, 10.0])), r


def test_criterion_3_svm_oracle(capsys):
    t0 = time.perf_counter()
    worst_rel, worst_drop, count = 0.0, 0.0, 0
    for x, y, v, C, r in _svm_fixtures():
        count += 1
        model = svm.fit_weighted_svm(x, y, v, C=C)
        ref, _, _ = svm_oracle(x, y, v, C)
        ours = svm.svm_objective(model, x, y, v)
        worst_rel = max(worst_rel, abs(ours - ref) / max(abs(ref), 1e-12))

        if len(y) >= 5:
            v0 = v.copy()
            v0[r.choice(np.arange(2, len(y)), len(y) // 3, replace=False)] = 0.0
            keep = v0 > 0
            a = svm.fit_weighted_svm(x, y, v0, C=C)
            b = svm.fit_weighted_svm(x[keep], y[keep], v0[keep], C=C)
            worst_drop = max(worst_drop, abs(svm.svm_objective(a, x, y, v0)
                                             - svm.svm_objective(b, x[keep], y[keep], v0[keep])))
    ok = worst_rel <= 1e-4 and worst_drop <= 1e-8
    verdict(capsys, 3, ok, f"{count} fixtures: max relative objective gap {worst_rel:.1e}, "
            f"zero-weight removal gap {worst_drop:.1e}", time.perf_counter() - t0, 60)


# 4 ---------------------------------------------------------------------------

def test_criterion_4_csp_oracle(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(4)
    worst_angle, worst_sum = 0.0, 0.0
    for _ in range(20):
        data, y = random_trials(r, n=int(r.integers(10, 31)), ch=int(r.integers(4, 9)))
        m = 2
        bank = csp.fit_weighted_csp(data, np.ones(len(y)), y, m)
        ref, _ = plain_csp(data, y, m)
        for part in (slice(0, m), slice(m, 2 * m)):
            worst_angle = max(worst_angle, float(np.max(csp.subspace_angles(bank.filters[part], ref[part]))))
        covs = csp.trial_covariances(data)
        r1, r2 = covs[y == 1].mean(0), covs[y == -1].mean(0)
        for w in bank.filters:
            total = w @ (r1 + r2) @ w
            worst_sum = max(worst_sum, abs((w @ r1 @ w) / total + (w @ r2 @ w) / total - 1.0))
    ok = worst_angle < 1e-6 and worst_sum <= 1e-8
    verdict(capsys, 4, ok, f"20 fixtures: max principal angle {worst_angle:.1e} rad, "
            f"max |lam1 + lam2 - 1| {worst_sum:.1e}", time.perf_counter() - t0, 10)


# 5 ---------------------------------------------------------------------------

def test_criterion_5_markov(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(5)
    worst_formula, worst_emp = 0.0, 0.0
    for i in range(20):
        p_gg, p_bb = r.uniform(0.1, 0.9, 2)
        good, bad = steady_state(p_gg, p_bb)
        worst_formula = max(worst_formula, abs(good - (1 - p_bb) / (2 - p_gg - p_bb)), abs(good + bad - 1))
        pi = np.array([good, bad])
        worst_formula = max(worst_formula, float(np.max(np.abs(pi @ transition_matrix(p_gg, p_bb) - pi))))
        path = simulate_chain(p_gg, p_bb, 100_000, seed=i)
        worst_emp = max(worst_emp, abs(path.mean() - good))
    ok = worst_formula <= 1e-12 and worst_emp <= 0.01
    verdict(capsys, 5, ok, f"20 pairs: analytic error {worst_formula:.1e}, "
            f"max |empirical - steady| {worst_emp:.4f} over 1e5 steps", time.perf_counter() - t0, 10)


# 6 ---------------------------------------------------------------------------

def test_criterion_6_filter(capsys):
    t0 = time.perf_counter()
    coeffs = design_bandpass(BandpassSpec(8.0, 30.0, 4, 1000.0))
    _, h = ss.sosfreqz(coeffs.sos, worN=[2.0, 8.0, 30.0, 60.0], fs=1000.0)
    db = 20 * np.log10(np.abs(h))
    edges_ok = bool(np.all(np.abs(db[1:3] + 3.0) <= 0.5))
    stop_ok = bool(db[0] < -20 and db[3] < -20)
    radius = float(np.max(np.abs(coeffs.poles())))
    ok = edges_ok and stop_ok and radius < 1
    verdict(capsys, 6, ok, f"edges {db[1]:.2f}/{db[2]:.2f} dB, 2 Hz {db[0]:.1f} dB, 60 Hz {db[3]:.1f} dB, "
            f"max pole radius {radius:.4f}", time.perf_counter() - t0, 1)


# 7 ---------------------------------------------------------------------------

def _outcome(n_windows, n_correct, threshold, position):
    model = svm.DecoderModel(w=np.array([1.0]), b=0.0, C=1.0)
    feats = np.where(np.arange(n_windows) < n_correct, 1.0, -1.0)[:, None]
    return score_trial(model, feats, Label.LEFT, threshold, position=position)


def test_criterion_7_paradigm(capsys):
    t0 = time.perf_counter()
    thresholds = [round(0.05 * k, 2) for k in range(1, 21)]
    cases = wrong = 0
    for n in list(range(1, 13)) + [181]:
        for k in range(n + 1):
            for t in thresholds:
                out = _outcome(n, k, t, "first")
                expect = Instruction.COPY if Fraction(k, n) >= Fraction(str(t)) else Instruction.NEW
                cases += 1
                wrong += next_instruction(out, JOINT) is not expect
                wrong += next_instruction(out, COADAPTIVE) is not Instruction.NONE
    guarded = 0
    for position in ("next", "single"):
        try:
            next_instruction(_outcome(4, 4, 0.7, position), JOINT)
        except SequencingError:
            guarded += 1

    r = np.random.default_rng(7)
    p = r.uniform(0, 1, 100_000)
    p[::97] = 0.0
    p[::89] = 1.0
    p[::83] = 0.5
    alpha = r.uniform(0, 1, 100_000)
    state, broken = FeedbackState(), 0
    for i, (pi, ai) in enumerate(zip(p.tolist(), alpha.tolist())):
        new = update_feedback(state, pi, ai)
        expect = min(1.0, max(0.0, state.c_left + ai * (pi - 0.5) * 2))
        broken += not (0 <= new.c_left <= 1 and new.c_right == 1 - new.c_left
                       and new.update_count == i + 1 and abs(new.c_left - expect) <= 1e-15)
        state = new

    seq, s = [], FeedbackState()
    for _ in range(4):
        s = update_feedback(s, 1.0, 0.2)
        seq.append(s.c_left)
    worked = np.allclose(seq, [0.7, 0.9, 1.0, 1.0], atol=1e-12, rtol=0)
    ok = wrong == 0 and guarded == 2 and broken == 0 and worked
    verdict(capsys, 7, ok, f"{cases} grid cases, {wrong} wrong; {broken} invariant breaks in 1e5 updates; "
            f"clamped sequence {[round(c, 12) for c in seq]}", time.perf_counter() - t0, 5)


# 8 and 9 ---------------------------------------------------------------------

@pytest.fixture(scope="session")
def default_runs():
    cfg = default_config()
    runs, times = {}, {}
    for mode in (JOINT, COADAPTIVE):
        mcfg = cfg.with_updates(session={"mode": mode})
        t0 = time.perf_counter()
        runs[mode] = [run_experiment(mcfg, seed=s).report for s in range(N_SEEDS)]
        times[mode] = time.perf_counter() - t0
    return runs, times


def test_criterion_8_qualitative_reproduction(capsys, default_runs):
    runs, times = default_runs
    t0 = time.perf_counter()
    joint = np.array([r.accuracy for r in runs[JOINT]])
    coad = np.array([r.accuracy for r in runs[COADAPTIVE]])
    gap = 100 * (joint[:, -1].mean() - coad[:, -1].mean())
    sp = np.array([r.success_proportions for r in runs[JOINT]]).mean(0)
    dist = np.array([r.distances for r in runs[JOINT]]).mean(0)
    a_ok = gap >= 3.0
    b_ok = bool(np.all(np.diff(sp[1:]) >= 0))
    c_ok = dist[-1] > dist[0]
    elapsed = times[JOINT] + times[COADAPTIVE] + time.perf_counter() - t0
    detail = (f"(a) final-session gap {gap:.2f} pp [{joint[:, -1].mean():.3f} vs {coad[:, -1].mean():.3f}] "
              f"{'ok' if a_ok else 'no'}; (b) joint success proportion "
              f"{' '.join(f'{v:.3f}' for v in sp[1:])} {'ok' if b_ok else 'no'}; "
              f"(c) distance s1 {dist[0]:.3f} -> s5 {dist[-1]:.3f} {'ok' if c_ok else 'no'}; {N_SEEDS} seeds")
    verdict(capsys, 8, a_ok and b_ok and c_ok, detail, elapsed, 600)


def test_criterion_9_copy_new_signature(capsys, default_runs):
    runs, times = default_runs
    t0 = time.perf_counter()
    after_copy, after_new, first_of_new = [], [], []
    for report in runs[JOINT]:
        trials = [t for t in report.trials if t.session > 1]
        for first, nxt in zip(trials[::2], trials[1::2]):
            assert first.pair_position == "first" and nxt.pair_position == "next"
            if nxt.instruction == Instruction.COPY.value:
                after_copy.append(nxt.accuracy)
            else:
                after_new.append(nxt.accuracy)
                first_of_new.append(first.accuracy)
    c, n, f = np.mean(after_copy), np.mean(after_new), np.mean(first_of_new)
    ok = c > n > f
    elapsed = times[JOINT] + time.perf_counter() - t0
    verdict(capsys, 9, ok, f"next-after-Copy {c:.3f} (n={len(after_copy)}) > next-after-New {n:.3f} "
            f"(n={len(after_new)}) > first-of-New {f:.3f}; {N_SEEDS} seeds", elapsed, 120)


# 10 --------------------------------------------------------------------------

def _snapshot(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if p.name == "manifest.json":
            m = json.loads(p.read_text())
            m.pop("created", None)
            out[p.relative_to(root).as_posix()] = json.dumps(m, sort_keys=True).encode()
        else:
            out[p.relative_to(root).as_posix()] = p.read_bytes()
    return out


def test_criterion_10_cli_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"session": {"n_sessions": 3, "trials_per_session": 4},
                               "output": {"export_epochs": True}, "seed": 5}))
    source = tmp_path / "source"
    assert main(["simulate", "--config", str(cfg), "--out", str(source)]) == 0
    epochs = str(source / "epochs.bin")

    def commands(out):
        return [
            ["simulate", "--config", str(cfg), "--out", str(out / "sim")],
            ["replay", "--epochs", epochs, "--config", str(cfg), "--out", str(out / "replay")],
            ["train", "--epochs", epochs, "--config", str(cfg), "--model-out", str(out / "model.json")],
            ["eval", "--epochs", epochs, "--model", str(source / "models" / "session3.json"),
             "--out", str(out / "eval.json")],
            ["sweep", "--config", str(cfg), "--lambda0", "0.2,0.6", "--dlambda", "0.2",
             "--epochs", epochs, "--out", str(out / "sweep")],
        ]

    codes = []
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        codes += [main(c) for c in commands(tmp_path / run)]
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = all(c == 0 for c in codes) and not differing and len(a) > 0
    verdict(capsys, 10, ok, f"5 commands x 2 runs, {len(a)} output files, "
            f"{len(differing)} differ {differing[:3]}", time.perf_counter() - t0, 60)
