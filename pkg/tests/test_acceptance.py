"""Acceptance criteria 1-8.

Each test prints one ``[PASS]`` or ``[FAIL]`` line with the measured
numbers, then asserts. Run just this module with

    pytest -v -s tests/test_acceptance.py

or as a script, ``python3 tests/test_acceptance.py``, which prints the
eight lines and exits non-zero if any criterion fails. Criteria 5 and 6
run the shipped SlipGrid configs and take a few minutes on one core.
"""

import json
import math
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvorl import dve, neural, offline, pipeline
from dvorl.buffer import ActionSpec, ReplayBuffer
from dvorl.cli import main as cli_main
from dvorl.divergence import kl_knn
from dvorl.dve import DveTrainerState, ValuedBuffer
from dvorl.offline import LearnerConfig

ROOT = Path(__file__).resolve().parents[1]
SINGLE_CONFIG = ROOT / "configs" / "slipgrid_single.json"
REMOVAL_CONFIG = ROOT / "configs" / "slipgrid_removal.json"

_lines = {}


def report(number, ok, detail, capsys=None):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    _lines[number] = line
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return ok


# ---------------------------------------------------------------- 1


def criterion_1():
    """k-NN KL against the Gaussian closed form 0.5 |mu|^2."""
    start = time.perf_counter()
    worst = {}
    for shift, oracle, tol in ((1.0, 0.5, 0.1), (2.0, 2.0, 0.3)):
        errs = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            p = rng.normal(size=(5000, 2))
            q = rng.normal(size=(5000, 2)) + [shift, 0.0]
            errs.append(abs(kl_knn(p, q, 5) - oracle))
        worst[oracle] = (max(errs), tol)
    elapsed = time.perf_counter() - start
    ok = all(err <= tol for err, tol in worst.values()) and elapsed < 10
    detail = ", ".join(f"KL {o}: max |err| {e:.3f} (tol {t})" for o, (e, t) in worst.items())
    return ok, f"{detail}; {elapsed:.2f} s (< 10 s)"


# ---------------------------------------------------------------- 2


def _fd_flat(net, x, s, h=1e-5):
    out = []
    for w, b in zip(net.weights, net.biases):
        for arr in (w, b):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = neural.logprob_grad(net, x, s)[0]
                arr[idx] = old - h
                down = neural.logprob_grad(net, x, s)[0]
                arr[idx] = old
                out.append((up - down) / (2 * h))
    return np.array(out)


def criterion_2(n_nets=24):
    """Analytic log-likelihood gradients against central differences."""
    start = time.perf_counter()
    worst = 0.0
    for seed in range(n_nets):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3))))
        net = neural.init(d, hidden, seed=seed)
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(int(rng.integers(2, 8)), d))
        s = rng.random(len(x)) if seed % 2 else (rng.random(len(x)) < 0.5).astype(float)
        _, g = neural.logprob_grad(net, x, s)
        a, f = g.flat(), _fd_flat(net, x, s)
        rel = np.abs(a - f) / np.maximum(np.abs(a) + np.abs(f), 1e-8)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 5
    return ok, f"{n_nets} nets, max relative error {worst:.2e} (< 1e-4); {elapsed:.2f} s (< 5 s)"


# ---------------------------------------------------------------- 3


def _oracle_rolling(rewards, window):
    rolling, out = 0.0, []
    for r in rewards:
        sig = r - rolling
        rolling = (window - 1) / window * rolling + r / window
        out.append((sig, rolling))
    return out


def criterion_3():
    """Baseline recursion and inclusive filter rule against independent loops."""
    rng = np.random.default_rng(2024)
    bad_seq = 0
    for _ in range(1000):
        window = int(rng.integers(1, 50))
        rewards = (rng.random(int(rng.integers(1, 200))) * rng.choice([1.0, 10.0, 1000.0])).tolist()
        state = DveTrainerState(window)
        got = [(state.observe(r), state.r_rolling) for r in rewards]
        bad_seq += got != _oracle_rolling(rewards, window)

    bad_filter = 0
    template = ReplayBuffer.from_arrays(
        np.arange(64.0).reshape(64, 1), np.zeros(64), np.zeros((64, 1)), np.zeros(64), np.zeros(64), ActionSpec.discrete(1)
    )
    for _ in range(1000):
        n = int(rng.integers(1, 64))
        w = rng.random(n)
        eps = float(rng.random()) if rng.random() < 0.5 else float(w[rng.integers(n)])  # exact ties half the time
        kept = dve.filter_buffer(ValuedBuffer(template.subset(range(n)), w), eps)
        brute = [i for i in range(n) if w[i] >= eps]
        bad_filter += [int(t.state[0]) for t in kept] != brute
    ok = bad_seq == 0 and bad_filter == 0
    return ok, f"recursion mismatches {bad_seq}/1000 sequences, filter mismatches {bad_filter}/1000 cases"


# ---------------------------------------------------------------- 4


def criterion_4():
    """Filter monotonicity and boundaries, property-tested."""
    failures = []

    @settings(max_examples=300, deadline=None, database=None)
    @given(
        st.lists(st.floats(0, 1, exclude_min=True, exclude_max=True), min_size=1, max_size=80),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def prop(values, e1, e2):
        w = np.array(values)
        n = len(w)
        b = ReplayBuffer.from_arrays(
            np.arange(float(n)).reshape(n, 1), np.zeros(n), np.zeros((n, 1)), np.zeros(n), np.zeros(n), ActionSpec.discrete(1)
        )
        vb = ValuedBuffer(b, w)
        ids = lambda eps: {int(t.state[0]) for t in dve.filter_buffer(vb, eps)}
        lo, hi = sorted((e1, e2))
        assert ids(0.0) == set(range(n))
        assert ids(1.0) == set()
        assert ids(hi) <= ids(lo)

    try:
        prop()
    except AssertionError as exc:
        failures.append(str(exc))

    # the same boundaries on values produced by a trained-shape network
    rng = np.random.default_rng(0)
    net = neural.init(7, (32, 32), seed=1)
    x = rng.normal(scale=5.0, size=(5000, 7))
    w = neural.forward(net, x)
    vb = ValuedBuffer(
        ReplayBuffer.from_arrays(x[:, :2], np.zeros(5000), x[:, 3:5], x[:, 5], np.zeros(5000), ActionSpec.discrete(1)), w
    )
    if len(dve.filter_buffer(vb, 0.0)) != 5000 or len(dve.filter_buffer(vb, 1.0)) != 0:
        failures.append("network-valued boundaries")
    return not failures, "300 random valued buffers: eps=0 keeps all, eps=1 keeps none, eps1<=eps2 gives a subset" + (
        f"; failures: {failures}" if failures else ""
    )


# ---------------------------------------------------------------- 5


def criterion_5(seeds=range(10)):
    """DVORL arm >= baseline arm on the shifted SlipGrid in >= 7 of 10 master seeds."""
    cfg = pipeline.load_config(SINGLE_CONFIG)
    assert cfg.source.slip_prob == 0.0 and cfg.target.slip_prob == 0.3
    assert (cfg.buffers.source_size, cfg.buffers.target_size) == (20000, 500)
    assert cfg.dve.reward_mode == "weighted" and cfg.dve.feature_mode.value == "state_action_next"
    start = time.perf_counter()
    wins, diffs = 0, []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in seeds:
            rep = pipeline.run_single(replace(cfg, seed=seed), Path(tmp) / str(seed))
            base = rep["arms"]["baseline"]["mean_return"]
            dvorl = rep["arms"]["dvorl"]["mean_return"]
            wins += dvorl >= base
            diffs.append(dvorl - base)
    elapsed = time.perf_counter() - start
    ok = wins >= 7 and elapsed < 600
    spread = " ".join(f"{d:+.4f}" for d in diffs)
    return ok, f"DVORL >= baseline in {wins}/10 seeds (need 7); differences {spread}; {elapsed:.0f} s (< 600 s)"


# ---------------------------------------------------------------- 6


def criterion_6():
    """Removing the top 40% hurts more than removing the bottom 40%."""
    cfg = pipeline.load_config(REMOVAL_CONFIG)
    assert cfg.removal.repetitions >= 10 and 0.4 in cfg.removal.fractions
    with tempfile.TemporaryDirectory() as tmp:
        summary = pipeline.run_removal_curve(cfg, tmp)
    curve = {(c["side"], c["fraction"]): c["mean_return"] for c in summary["curve"]}
    hi, lo = curve[("highest", 0.4)], curve[("lowest", 0.4)]
    runs = summary["runs"]
    within = 0
    for rep in range(cfg.removal.repetitions):
        cell = {(r["side"], r["fraction"]): r for r in runs if r["repetition"] == rep}
        full = cell[("lowest", 0.0)]
        within += abs(cell[("lowest", 0.4)]["mean_return"] - full["mean_return"]) <= full["std_error"]
    ok = hi < lo and within >= 6
    return ok, (
        f"mean return at 0.4: remove-highest {hi:.3f} < remove-lowest {lo:.3f} "
        f"(fraction 0: {curve[('lowest', 0.0)]:.3f}); remove-lowest within 1 SE in {within}/10 seeds (need 6)"
    )


# ---------------------------------------------------------------- 7


def criterion_7():
    """``run --seed 7`` twice gives byte-identical report and artifacts."""
    names = [
        "report.json", "source.dvrb", "target.dvrb", "filtered.dvrb", "dve.dvnn", "dve_history.csv",
        "values.csv", "policy_baseline.dvqp", "policy_dvorl.dvqp", "eval_baseline.json", "eval_dvorl.json",
    ]
    with tempfile.TemporaryDirectory() as tmp:
        codes = [cli_main(["run", "--config", str(SINGLE_CONFIG), "--seed", "7", "--out", f"{tmp}/{d}"]) for d in "ab"]
        differ = [n for n in names if (Path(tmp) / "a" / n).read_bytes() != (Path(tmp) / "b" / n).read_bytes()]
        seed_echo = json.loads((Path(tmp) / "a" / "report.json").read_text())["config"]["seed"]
    ok = codes == [0, 0] and not differ and seed_echo == 7
    return ok, f"exit codes {codes}; {len(names) - len(differ)}/{len(names)} artifacts byte-identical" + (
        f"; differing: {differ}" if differ else ""
    )


# ---------------------------------------------------------------- 8


def criterion_8():
    """FQI on the 2-state chain and BCQ with tau 0."""
    # A=0, B=1; action 0 -> A (r 0), action 1 -> B (r 1 from A, 2 from B); gamma 0.9
    # Q(B,1) = 2/(1-0.9) = 20, Q(A,1) = 1 + 18 = 19, Q(.,0) = 0.9 * 19 = 17.1
    analytic = np.array([[17.1, 19.0], [17.1, 20.0]])
    s = np.array([0, 0, 1, 1.0])[:, None]
    chain = ReplayBuffer.from_arrays(
        s, [0, 1, 0, 1], np.array([0, 1, 0, 1.0])[:, None], [0, 1, 0, 2], np.zeros(4), ActionSpec.discrete(2)
    )
    fqi = offline.train_offline(chain, LearnerConfig(algorithm="fqi", iterations=400))
    err = float(np.max(np.abs(fqi.policy.q - analytic)))
    bcq = offline.train_offline(chain, LearnerConfig(algorithm="bcq", constraint=0.0, iterations=400))
    same_chain = np.array_equal(fqi.policy.q, bcq.policy.q)

    cfg = pipeline.load_config(SINGLE_CONFIG)
    seeds = pipeline.run_seeds(0)
    cfg = replace(cfg, buffers=replace(cfg.buffers, source_size=5000))
    grid = pipeline.stage_generate_source(cfg, seeds)
    g_fqi = offline.train_offline(grid, LearnerConfig(algorithm="fqi"))
    g_bcq = offline.train_offline(grid, LearnerConfig(algorithm="bcq", constraint=0.0))
    same_grid = np.array_equal(g_fqi.policy.q, g_bcq.policy.q) and np.array_equal(
        g_fqi.policy.greedy_actions(), g_bcq.policy.greedy_actions()
    )
    ok = err <= 1e-9 and same_chain and same_grid
    return ok, f"chain max |Q - analytic| {err:.1e} (<= 1e-9); BCQ(tau=0) == FQI exactly: chain {same_chain}, grid {same_grid}"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    ok, detail = CRITERIA[number]()
    assert report(number, ok, detail, capsys), detail


if __name__ == "__main__":
    results = []
    for number, fn in CRITERIA.items():
        ok, detail = fn()
        results.append(report(number, ok, detail))
    sys.exit(0 if all(results) else 1)
