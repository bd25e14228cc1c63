import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvorl import dve, neural
from dvorl.divergence import FeatureMode, KlEstimatorConfig
from dvorl.dve import DveConfig, DveTrainerState, ValuedBuffer

from conftest import random_buffer


def oracle_baseline(rewards, window):
    """Independent loop over the moving-average recursion."""
    rolling = 0.0
    sigs, rolls = [], []
    for r in rewards:
        sigs.append(r - rolling)
        rolling = (window - 1) / window * rolling + r / window
        rolls.append(rolling)
    return sigs, rolls


def valued(values, seed=0):
    values = np.asarray(values, dtype=float)
    return ValuedBuffer(random_buffer(len(values), seed=seed), values)


def test_first_batch_example():
    state = DveTrainerState(20)
    assert state.observe(2.0) == 2.0
    assert state.r_rolling == pytest.approx(0.1, abs=1e-15)


def test_constant_reward_converges():
    state = DveTrainerState(20)
    sigs = [state.observe(3.0) for _ in range(2000)]
    assert abs(state.r_rolling - 3.0) < 1e-12 and abs(sigs[-1]) < 1e-12
    assert all(abs(a) >= abs(b) for a, b in zip(sigs, sigs[1:]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1000), min_size=1, max_size=100), st.integers(1, 50))
def test_baseline_matches_oracle_exactly(rewards, window):
    state = DveTrainerState(window)
    sigs = [state.observe(r) for r in rewards]
    want_sigs, want_rolls = oracle_baseline(rewards, window)
    assert sigs == want_sigs
    assert [h[2] for h in state.history] == want_rolls


def test_filter_inclusive_example():
    vb = valued([0.05, 0.1, 0.7])
    kept = dve.filter_buffer(vb, 0.1)
    assert list(kept) == [vb.buffer.transitions[1], vb.buffer.transitions[2]]


def test_filter_boundaries_with_network_values():
    b = random_buffer(50)
    net = neural.init(dve.input_dim(2, 1), (8,), seed=1)
    vb = dve.value_buffer(net, b)
    assert len(dve.filter_buffer(vb, 0.0)) == 50
    assert len(dve.filter_buffer(vb, 1.0)) == 0


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(1e-9, 1 - 1e-9), min_size=1, max_size=60),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_filter_monotone_and_consistent(values, e1, e2):
    e1, e2 = sorted((e1, e2))
    vb = valued(values)
    loose = [t for t in dve.filter_buffer(vb, e1)]
    tight = [t for t in dve.filter_buffer(vb, e2)]
    loose_ids = {i for i, t in enumerate(vb.buffer) if any(t is u for u in loose)}
    tight_ids = {i for i, t in enumerate(vb.buffer) if any(t is u for u in tight)}
    assert tight_ids <= loose_ids
    assert len(tight) + int(np.sum(np.asarray(values) < e2)) == len(values)


def test_exclude_fraction_examples():
    vb = valued([0.9, 0.2, 0.9, 0.1])
    t = vb.buffer.transitions
    assert list(dve.exclude_fraction(vb, 0.5, "highest")) == [t[1], t[3]]
    assert list(dve.exclude_fraction(vb, 0.5, "lowest")) == [t[0], t[2]]
    assert list(dve.exclude_fraction(vb, 0.0, "highest")) == list(t)
    assert len(dve.exclude_fraction(vb, 1.0, "lowest")) == 0
    # ties go lower index first
    assert dve.removal_order([0.9, 0.2, 0.9, 0.1], "highest")[:2].tolist() == [0, 2]
    with pytest.raises(ValueError):
        dve.exclude_fraction(vb, 0.5, "middle")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([0.1, 0.3, 0.5, 0.7]), min_size=1, max_size=40), st.floats(0, 1))
def test_exclude_fraction_partition(values, fraction):
    n = len(values)
    k = dve.n_removed(fraction, n)
    assert k == int(np.floor(fraction * n + 1e-9))
    order = dve.removal_order(values, "highest")
    assert sorted(order.tolist()) == list(range(n))
    kept = dve.exclude_fraction(valued(values), fraction, "highest")
    assert len(kept) == n - k


def test_n_removed_representation_error():
    assert dve.n_removed(0.29, 100) == 29
    assert dve.n_removed(0.4, 20000) == 8000


def test_value_buffer_batching_invisible():
    b = random_buffer(1234, seed=3)
    net = neural.init(dve.input_dim(2, 1), (16, 16), seed=2)
    a = dve.value_buffer(net, b, 200).values
    assert np.array_equal(a, dve.value_buffer(net, b, 1000).values)
    assert np.array_equal(a, dve.value_buffer(net, b, 200).values)


def test_zero_net_values_one_half():
    b = random_buffer(10)
    net = neural.zeros_like(neural.init(dve.input_dim(2, 1), (4,), seed=0))
    assert np.all(dve.value_buffer(net, b).values == 0.5)


def test_fold_scaling_is_equivalent():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 5)) * [1, 10, 0.1, 3, 1] + 4
    shift, scale = dve.input_scaling(x)
    net = neural.init(5, (7,), seed=1)
    folded = dve.fold_scaling(net, shift, scale)
    assert np.allclose(neural.forward(folded, x), neural.forward(net, (x - shift) / scale), rtol=0, atol=1e-12)


def test_constant_column_scale_is_one():
    shift, scale = dve.input_scaling(np.array([[1.0, 2.0], [1.0, 4.0]]))
    assert scale[0] == 1.0 and scale[1] == 1.0


def _grid_buffers():
    from dvorl import envs

    cfg = envs.DomainConfig()
    env = envs.make_env(cfg, 0)
    policy = envs.train_behavior(env, 300, seed=0)
    source = envs.generate_buffer(envs.make_env(cfg, 1), policy, 1000, 0.5, seed=1)
    target = envs.generate_buffer(envs.make_env(cfg.shifted(slip_prob=0.3), 2), policy, 200, 0.1, seed=2)
    return source, target


def test_batch_mode_identical_data_pins_reward_at_cap():
    source, _ = _grid_buffers()
    # one batch spanning the whole buffer has exactly the target's moments
    cfg =DveConfig(reward_mode="batch", batch_size=len(source), kl=KlEstimatorConfig(method="gaussian"), epochs=2, hidden_sizes=(8,))
    _, state = dve.train_dve(source, source, cfg)
    assert all(r == 1000.0 for r, _, _ in state.history)


@pytest.mark.parametrize("method", ["histogram", "gaussian", "knn"])
def test_train_dve_deterministic(method):
    source, target = _grid_buffers()
    cfg = DveConfig(kl=KlEstimatorConfig(method=method), epochs=2, hidden_sizes=(16,), seed=4)
    net1, st1 = dve.train_dve(source, target, cfg)
    net2, st2 = dve.train_dve(source, target, cfg)
    assert st1.history == st2.history
    assert net1.flat().tobytes() == net2.flat().tobytes()
    assert len(st1.history) == 2 * 5
    v1 = dve.value_buffer(net1, source)
    assert list(dve.filter_buffer(v1, 0.1)) == list(dve.filter_buffer(dve.value_buffer(net2, source), 0.1))


def test_standardize_off_matches_raw_training():
    source, target = _grid_buffers()
    cfg = DveConfig(kl=KlEstimatorConfig(method="histogram"), epochs=1, hidden_sizes=(8,), standardize=False)
    net, state = dve.train_dve(source, target, cfg)
    assert len(state.history) == 5 and net.input_dim == dve.input_dim(2, 1)


def test_small_target_falls_back_to_gaussian(caplog):
    source, target = _grid_buffers()
    cfg = DveConfig(epochs=1, hidden_sizes=(4,))
    with caplog.at_level("WARNING"):
        dve.train_dve(source, target.subset([0, 1, 2]), cfg)
    assert "Gaussian" in caplog.text


def test_soft_mode_leaves_network_unchanged():
    # s == w zeroes the log-likelihood gradient, so soft mode never moves
    source, target = _grid_buffers()
    cfg = DveConfig(surrogate_mode="soft", kl=KlEstimatorConfig(method="histogram"), epochs=1, hidden_sizes=(8,), standardize=False)
    net, _ = dve.train_dve(source, target, cfg)
    assert np.array_equal(net.flat(), neural.init(net.input_dim, (8,), seed=cfg.seed).flat())


def test_push_values_up_recovers_saturated_net():
    x = np.random.default_rng(0).normal(size=(50, 3))
    net = neural.init(3, (8,), seed=0)
    net.biases[-1][:] = -40.0
    before = neural.forward(net, x)
    assert before.max() < 1e-12
    dve.push_values_up(net, x, 0.01)
    assert neural.forward(net, x).mean() > before.mean()
    steps = 1
    while neural.forward(net, x).mean() < 0.5 and steps < 200:
        dve.push_values_up(net, x, 0.01)
        steps += 1
    # the output bias alone moves by 0.01 * 50 rows per step from a logit of -40
    assert steps < 80


def test_min_mean_value_inactive_on_healthy_run():
    source, target = _grid_buffers()
    cfg = DveConfig(kl=KlEstimatorConfig(method="histogram"), epochs=2, hidden_sizes=(16,), seed=4)
    net1, st1 = dve.train_dve(source, target, cfg)
    net2, st2 = dve.train_dve(source, target, DveConfig(**{**cfg.__dict__, "min_mean_value": 0.01}))
    assert st2.floor_steps == 0 and st1.history == st2.history
    assert net1.flat().tobytes() == net2.flat().tobytes()


def test_min_mean_value_fires_below_bound():
    source, target = _grid_buffers()
    cfg = DveConfig(kl=KlEstimatorConfig(method="histogram"), epochs=1, hidden_sizes=(8,), min_mean_value=0.99)
    _, state = dve.train_dve(source, target, cfg)
    assert state.floor_steps == state.step


def test_config_validation():
    for bad in (
        dict(selection_threshold=1.5),
        dict(moving_average_window=0),
        dict(surrogate_mode="gumbel"),
        dict(reward_mode="other"),
        dict(update_sign=0),
        dict(learning_rate=0.0),
        dict(min_mean_value=1.0),
    ):
        with pytest.raises(ValueError):
            DveConfig(**bad)
    assert DveConfig(feature_mode="state").feature_mode is FeatureMode.STATE_ONLY


def test_csv_artifacts(tmp_path):
    values = np.array([0.25, 1 / 3, 0.9999999999])
    dve.write_values_csv(values, tmp_path / "v.csv")
    assert np.array_equal(dve.read_values_csv(tmp_path / "v.csv"), values)
    dve.write_history_csv([(1.0, 1.0, 0.05)], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "step,r_phi,r_sig,r_rolling"
    (tmp_path / "bad.csv").write_text("i,w\n0,0.5\n")
    with pytest.raises(ValueError):
        dve.read_values_csv(tmp_path / "bad.csv")
