import itertools

import numpy as np
import pytest

from dfalearn.data import DatasetBundle, TraceSample
from dfalearn.evaluation import accuracy, extract_dfa
from dfalearn.harness import tomita_bundle
from dfalearn.model import AdamState, ModelParams, activations, init_params
from dfalearn.training import (
    HISTORY_COLUMNS,
    DivergenceError,
    TemperatureSchedule,
    TrainConfig,
    _resolve_alphabet_size,
    history_to_csv,
    load_checkpoint,
    save_checkpoint,
    save_history,
    train,
)
from dfalearn.automata import Alphabet


def parity_bundle(max_len=6):
    """Every binary string up to max_len, labeled by even number of ones."""
    samples = []
    for l in range(max_len + 1):
        for syms in itertools.product((0, 1), repeat=l):
            samples.append(TraceSample(label=sum(syms) % 2 == 0, symbols=syms))
    return DatasetBundle(train=samples, dev=samples[:20], test=samples[:20],
                         metadata={"alphabet_size": 2})


def reject_all_bundle(n=40, seed=0):
    rng = np.random.default_rng(seed)
    samples = [
        TraceSample(label=False, symbols=tuple(rng.integers(0, 2, size=rng.integers(0, 7)).tolist()))
        for _ in range(n)
    ]
    return DatasetBundle(train=samples, dev=samples[:10], test=samples[:10],
                         metadata={"alphabet_size": 2})


def quick(seed=0, **overrides):
    base = dict(max_epochs=10, batch_size=16, window=50, restarts=0, rng_seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


# --- temperature schedule ---------------------------------------------------

def test_schedule_geometric_decay():
    sched = TemperatureSchedule()
    assert sched.value(0) == 1.0
    assert sched.value(200) == pytest.approx(0.999**200)
    assert sched.value(10**7) == 1e-5  # floor


def test_schedule_custom_start():
    sched = TemperatureSchedule(start=2.0, decay=0.5, floor=0.1)
    assert sched.value(1) == 1.0
    assert sched.value(50) == 0.1


@pytest.mark.parametrize("kwargs", [
    {"decay": 0.0}, {"decay": 1.0}, {"floor": 0.0}, {"start": 1e-6, "floor": 1e-5},
])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        TemperatureSchedule(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"learning_rate": 0.0}, {"max_epochs": 0}, {"batch_size": 0}, {"window": 0},
    {"mode": "fuzzy"}, {"restarts": -1}, {"restart_below": 0.0}, {"restart_below": 1.5},
    {"restart_below": None, "restart_above": 0.9},
    {"restart_below": 0.9, "restart_above": 0.8},
    {"restart_below": 0.9, "restart_above": 1.1},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# --- the loop itself --------------------------------------------------------

def test_train_is_deterministic():
    bundle = parity_bundle(4)
    a = train(bundle, 3, quick(seed=5))
    b = train(bundle, 3, quick(seed=5))
    assert np.array_equal(a.params.trans_logits, b.params.trans_logits)
    assert np.array_equal(a.params.accept_logits, b.params.accept_logits)
    assert a.epochs_run == b.epochs_run
    c = train(bundle, 3, quick(seed=6))
    assert not np.array_equal(a.params.trans_logits, c.params.trans_logits)


def test_history_rows_follow_schedule():
    bundle = parity_bundle(4)
    sched = TemperatureSchedule(start=0.7, decay=0.9)
    result = train(bundle, 3, quick(max_epochs=6), sched)
    assert [row["epoch"] for row in result.history] == list(range(6))
    for row in result.history:
        assert row["tau"] == sched.value(row["epoch"])
        for key in HISTORY_COLUMNS + ("train_acc_discrete",):
            assert key in row
        assert 0.0 <= row["train_acc"] <= 1.0
        assert 0.0 <= row["dev_acc_discrete"] <= 1.0


def test_loss_decreases_on_learnable_data():
    result = train(parity_bundle(5), 4, quick(max_epochs=40, seed=1))
    assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]


def test_full_batch_runs_too():
    result = train(parity_bundle(3), 2, quick(batch_size=None, max_epochs=5))
    assert result.epochs_run == 5


def test_early_stop_on_plateau():
    # a reject-everything problem is solved almost immediately; once the loss
    # stops moving and the discretized machine scores like the soft one, the
    # loop should not grind on to the epoch cap
    result = train(
        reject_all_bundle(),
        2,
        TrainConfig(max_epochs=200, batch_size=8, loss_tol=1e-3, restarts=0, rng_seed=0),
    )
    assert result.stopped_early
    assert result.epochs_run < 200
    assert result.history[-1]["train_acc"] == 1.0


def test_epoch_cap_reported_without_early_stop():
    result = train(parity_bundle(3), 2, quick(max_epochs=4))
    assert not result.stopped_early
    assert result.epochs_run == 4
    assert result.seconds > 0.0


# --- restarts ---------------------------------------------------------------

def test_restarts_exhausted_on_unfittable_data():
    # parity needs two states; with q_max=1 every attempt underfits
    result = train(parity_bundle(4), 1, quick(max_epochs=8, restarts=2))
    assert result.attempts == 3
    assert result.history[-1]["train_acc_discrete"] < 0.995


def test_stop_at_first_fit_skips_spare_attempts():
    result = train(
        reject_all_bundle(), 2,
        quick(max_epochs=30, restarts=3, stop_at_first_fit=True),
    )
    assert result.attempts == 1
    assert result.history[-1]["train_acc_discrete"] == 1.0


def test_default_selection_runs_every_attempt():
    result = train(reject_all_bundle(), 2, quick(max_epochs=12, restarts=2))
    assert result.attempts == 3


def test_fit_ceiling_rejects_memorized_attempts():
    # every attempt nails the all-reject data, which a ceiling below 1.0
    # classifies as memorization — so nothing fits and every attempt runs,
    # first-fit notwithstanding
    result = train(
        reject_all_bundle(), 2,
        quick(max_epochs=30, restarts=2, restart_below=0.5, restart_above=0.99,
              stop_at_first_fit=True),
    )
    assert result.attempts == 3
    assert result.history[-1]["train_acc_discrete"] == 1.0


def test_fit_ceiling_at_one_still_accepts():
    result = train(
        reject_all_bundle(), 2,
        quick(max_epochs=30, restarts=2, restart_below=0.5, restart_above=1.0,
              stop_at_first_fit=True),
    )
    assert result.attempts == 1


def test_restarts_disabled_when_threshold_is_none():
    result = train(parity_bundle(4), 1, quick(max_epochs=8, restarts=5, restart_below=None))
    assert result.attempts == 1


# --- resume -----------------------------------------------------------------

def test_resume_retraces_uninterrupted_run(tmp_path):
    bundle = parity_bundle(5)
    cfg_full = quick(max_epochs=12, seed=9, restart_below=None)
    full = train(bundle, 3, cfg_full)

    half = train(bundle, 3, quick(max_epochs=7, seed=9, restart_below=None))
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, half.params, half.optimizer, epoch=half.epochs_run, tau=0.0)
    params, optimizer, epoch, _, _ = load_checkpoint(path)
    resumed = train(bundle, 3, cfg_full, start_state=(params, optimizer, epoch))

    assert np.array_equal(resumed.params.trans_logits, full.params.trans_logits)
    assert np.array_equal(resumed.params.accept_logits, full.params.accept_logits)
    assert np.array_equal(resumed.optimizer.v_trans, full.optimizer.v_trans)
    assert resumed.optimizer.step == full.optimizer.step
    assert resumed.epochs_run == full.epochs_run
    assert [r["epoch"] for r in resumed.history] == list(range(7, 12))


def test_resume_rejects_mismatched_shape():
    bundle = parity_bundle(3)
    params = init_params(5, 2, rng_seed=0)
    with pytest.raises(ValueError, match="shape"):
        train(bundle, 3, quick(), start_state=(params, AdamState.fresh(params), 0))


# --- guard rails ------------------------------------------------------------

def test_divergence_raises_with_context(monkeypatch):
    import dfalearn.training as training_mod

    def poisoned(params, tau, batch):
        return float("nan"), np.zeros_like(params.trans_logits), np.zeros_like(params.accept_logits)

    monkeypatch.setattr(training_mod, "backward", poisoned)
    with pytest.raises(DivergenceError) as exc_info:
        train(parity_bundle(3), 2, quick(max_epochs=3))
    assert exc_info.value.epoch == 0
    assert "non-finite" in str(exc_info.value)


def test_mode_mismatch_is_rejected():
    beliefs = np.eye(2)[[0, 1, 0]]
    bundle = DatasetBundle(
        train=[TraceSample(label=True, beliefs=beliefs)],
        dev=[], test=[], metadata={"alphabet_size": 2},
    )
    with pytest.raises(ValueError, match="mode"):
        train(bundle, 2, quick())


def test_belief_mode_trains():
    rng = np.random.default_rng(4)
    samples = []
    for _ in range(24):
        length = rng.integers(1, 6)
        ids = rng.integers(0, 2, size=length)
        samples.append(TraceSample(label=bool(ids.sum() % 2 == 0), beliefs=np.eye(2)[ids]))
    bundle = DatasetBundle(train=samples, dev=samples[:8], test=samples[:8],
                           metadata={"alphabet_size": 2})
    result = train(bundle, 3, quick(mode="belief", max_epochs=10))
    assert result.epochs_run == 10


def test_converged_run_discretizes_at_floor_temperature():
    """After convergence the model is effectively crisp.

    Evaluated at the temperature floor, every transition row should be within
    a whisker of one-hot (max row entropy < 1e-3 nats), and the snapped
    machine's train accuracy should match the continuous model's — the
    stopping rule promises the latter, re-checked here from the outside.
    """
    bundle = tomita_bundle(1, rng_seed=11, sizes=(80, 20, 20), lengths=(8, 10, 12))
    result = train(bundle, 5, TrainConfig(max_epochs=150, rng_seed=3))
    assert result.history[-1]["train_acc_discrete"] == 1.0

    trans, _ = activations(result.params, 1e-5)
    row_entropy = -(trans * np.log(np.clip(trans, 1e-300, 1.0))).sum(axis=-1)
    assert float(row_entropy.max()) < 1e-3

    final_tau = result.history[-1]["tau"]
    machine = extract_dfa(result.params)
    cont_acc = accuracy(result.params, bundle.train, tau=final_tau)
    assert abs(accuracy(machine, bundle.train) - cont_acc) <= 1e-3
    assert accuracy(machine, bundle.test) == 1.0
    assert machine.num_states == 2


# --- alphabet resolution ----------------------------------------------------

def test_alphabet_explicit_overrides_metadata():
    assert _resolve_alphabet_size(parity_bundle(2), 4) == 4


def test_alphabet_from_metadata():
    assert _resolve_alphabet_size(parity_bundle(2), None) == 2


def test_alphabet_from_belief_width():
    bundle = DatasetBundle(
        train=[TraceSample(label=True, beliefs=np.eye(5)[[0, 2]])], dev=[], test=[],
    )
    assert _resolve_alphabet_size(bundle, None) == 5


def test_alphabet_from_symbols():
    bundle = DatasetBundle(
        train=[TraceSample(label=True, symbols=(0, 6, 2))], dev=[], test=[],
    )
    assert _resolve_alphabet_size(bundle, None) == 7


# --- artifacts --------------------------------------------------------------

def test_history_csv_has_pinned_columns():
    result = train(parity_bundle(3), 2, quick(max_epochs=3))
    text = history_to_csv(result.history)
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,tau,train_loss,train_acc,dev_acc,dev_acc_discrete"
    assert len(lines) == 4  # header + one row per epoch


def test_save_history_round_trip(tmp_path):
    result = train(parity_bundle(3), 2, quick(max_epochs=2))
    path = tmp_path / "history.csv"
    save_history(path, result.history)
    assert path.read_text() == history_to_csv(result.history)


def test_checkpoint_round_trip(tmp_path):
    params = init_params(4, 3, rng_seed=8)
    opt = AdamState.fresh(params)
    opt.m_trans += 0.125
    opt.step = 17
    path = tmp_path / "model.json"
    save_checkpoint(path, params, opt, epoch=42, tau=0.25, alphabet=Alphabet(3, ("a", "b", "c")))
    params2, opt2, epoch, tau, alphabet = load_checkpoint(path)
    assert np.array_equal(params2.trans_logits, params.trans_logits)
    assert np.array_equal(params2.accept_logits, params.accept_logits)
    assert np.array_equal(opt2.m_trans, opt.m_trans)
    assert opt2.step == 17
    assert (epoch, tau) == (42, 0.25)
    assert alphabet.names == ("a", "b", "c")


def test_checkpoint_survives_awkward_floats(tmp_path):
    params = init_params(2, 2, rng_seed=0)
    params.trans_logits[0, 0, 0] = 0.1 + 0.2  # not exactly 0.3
    params.trans_logits[0, 0, 1] = 1e-300
    path = tmp_path / "model.json"
    save_checkpoint(path, params, AdamState.fresh(params), epoch=0, tau=1.0)
    params2, *_ = load_checkpoint(path)
    assert np.array_equal(params2.trans_logits, params.trans_logits)


def test_checkpoint_rejects_truncated_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"q_max": 3, "alphabet": ["0", "1"]')
    with pytest.raises(ValueError, match="corrupt checkpoint"):
        load_checkpoint(path)


def test_checkpoint_rejects_missing_field(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"q_max": 3}')
    with pytest.raises(ValueError, match="corrupt checkpoint"):
        load_checkpoint(path)
