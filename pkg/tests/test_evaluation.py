import logging

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from dfalearn.automata import (
    Alphabet,
    Dfa,
    Pfa,
    dfa_accepts,
    dfa_equivalent,
    hopcroft_minimize,
    pfa_argmax_dfa,
    random_dfa,
    trim_unreachable,
)
from dfalearn.data import TraceSample, nearest_one_hot
from dfalearn.evaluation import (
    AggregateStats,
    RunReport,
    accuracy,
    best_k_of_n,
    dfa_predictions,
    extract_dfa,
    select_best,
    weight_count,
)
from dfalearn.model import ModelParams, init_params, softmax_with_temp, sigmoid_with_temp
from conftest import dfa_logit_params, dfas, traces


# --- extraction -------------------------------------------------------------

def test_extract_recovers_planted_machine():
    dfa = random_dfa(5, Alphabet(3), rng_seed=77)
    params = dfa_logit_params(dfa)
    extracted = extract_dfa(params)
    assert dfa_equivalent(extracted, dfa)
    assert extracted.num_states == hopcroft_minimize(dfa).num_states


@settings(max_examples=40)
@given(dfas())
def test_extract_round_trip_language(dfa):
    assert dfa_equivalent(extract_dfa(dfa_logit_params(dfa)), dfa)


def test_extract_without_minimize_keeps_all_states():
    params = init_params(6, 2, rng_seed=3)
    raw = extract_dfa(params, minimize=False)
    assert raw.num_states == 6
    assert extract_dfa(params).num_states <= 6


def test_extract_uses_given_alphabet_names():
    alpha = Alphabet(2, ("x", "y"))
    dfa = extract_dfa(init_params(3, 2, rng_seed=0), alphabet=alpha, minimize=False)
    assert dfa.alphabet.names == ("x", "y")


def test_extraction_is_temperature_invariant():
    """Discretizing the softened machine gives the same DFA at any temperature.

    Argmax of softmax(logits / tau) is argmax of logits, and
    sigmoid(logit / tau) > 1/2 iff logit > 0, so the temperature never touches
    the extracted automaton.  Checked against the probabilistic route.
    """
    for seed in range(25):
        params = init_params(5, 2, rng_seed=seed)
        want = extract_dfa(params)
        for tau in (1e-5, 0.05, 1.0, 7.3):
            trans = softmax_with_temp(params.trans_logits, tau)
            v_in = np.zeros(5)
            v_in[0] = 1.0
            pfa = Pfa(trans, v_in, sigmoid_with_temp(params.accept_logits, tau))
            crisp = hopcroft_minimize(trim_unreachable(pfa_argmax_dfa(pfa)))
            assert dfa_equivalent(crisp, want)


def test_extract_threshold_excludes_zero_logit():
    # acceptance needs a strictly positive logit, matching a strict 1/2 cut
    params = ModelParams(2, np.zeros((1, 2, 2)), np.array([0.0, 1e-12]))
    raw = extract_dfa(params, minimize=False)
    assert raw.accepting.tolist() == [False, True]


# --- weight accounting ------------------------------------------------------

@pytest.mark.parametrize(
    "q_max, alphabet_size, expected",
    [
        (10, 2, 220),
        (30, 2, 1860),
        (100, 2, 20200),
        (100, 3, 30200),
        (200, 2, 80400),
        (200, 3, 120400),
    ],
)
def test_weight_count_table(q_max, alphabet_size, expected):
    assert weight_count(q_max, alphabet_size) == expected


@given(st.integers(1, 300), st.integers(1, 26))
def test_weight_count_formula(q, p):
    assert weight_count(q, p) == p * q * q + 2 * q


# --- batched DFA predictions -----------------------------------------------

@settings(max_examples=30)
@given(st.data())
def test_dfa_predictions_match_single_runs(data):
    dfa = data.draw(dfas())
    samples = [
        TraceSample(label=data.draw(st.booleans()), symbols=tuple(data.draw(traces(dfa.alphabet.size))))
        for _ in range(data.draw(st.integers(1, 8)))
    ]
    got = dfa_predictions(dfa, samples)
    want = np.array([dfa_accepts(dfa, s.symbols) for s in samples])
    assert np.array_equal(got, want)


def test_dfa_predictions_belief_traces_use_argmax():
    dfa = random_dfa(4, Alphabet(3), rng_seed=5)
    rng = np.random.default_rng(9)
    beliefs = rng.dirichlet(np.ones(3), size=12)
    soft = TraceSample(label=True, beliefs=beliefs)
    crisp = TraceSample(label=True, symbols=tuple(nearest_one_hot(row) for row in beliefs))
    assert dfa_predictions(dfa, [soft]) == dfa_predictions(dfa, [crisp])


def test_dfa_predictions_empty_trace_reads_initial_state():
    dfa = Dfa(2, Alphabet(2), np.array([[1, 1], [0, 0]]), np.array([True, False]))
    assert dfa_predictions(dfa, [TraceSample(label=True, symbols=())]).tolist() == [True]


# --- accuracy dispatch ------------------------------------------------------

def _samples_for(dfa, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        syms = tuple(rng.integers(0, dfa.alphabet.size, size=rng.integers(0, 12)).tolist())
        out.append(TraceSample(label=dfa_accepts(dfa, syms), symbols=syms))
    return out


def test_accuracy_perfect_on_own_labels():
    dfa = random_dfa(4, Alphabet(2), rng_seed=11)
    assert accuracy(dfa, _samples_for(dfa, 40, seed=1)) == 1.0


def test_accuracy_counts_mismatches():
    dfa = Dfa(1, Alphabet(2), np.zeros((1, 2), dtype=int), np.array([False]))  # rejects all
    samples = [
        TraceSample(label=True, symbols=(0,)),
        TraceSample(label=False, symbols=(1,)),
        TraceSample(label=True, symbols=()),
        TraceSample(label=False, symbols=(0, 1)),
    ]
    assert accuracy(dfa, samples) == 0.5


def test_accuracy_model_route_agrees_with_planted_dfa():
    dfa = random_dfa(5, Alphabet(2), rng_seed=23)
    samples = _samples_for(dfa, 30, seed=2)
    assert accuracy(dfa_logit_params(dfa), samples, tau=1.0) == 1.0


def test_accuracy_model_needs_temperature():
    with pytest.raises(ValueError, match="temperature"):
        accuracy(init_params(3, 2, rng_seed=0), [TraceSample(label=True, symbols=(0,))])


def test_accuracy_rejects_other_predictors():
    with pytest.raises(TypeError):
        accuracy("not a model", [TraceSample(label=True, symbols=(0,))])


def test_accuracy_empty_is_one_with_warning(caplog):
    dfa = random_dfa(3, Alphabet(2), rng_seed=0)
    with caplog.at_level(logging.WARNING):
        assert accuracy(dfa, []) == 1.0
    assert any("empty sample list" in r.message for r in caplog.records)


# --- run reports ------------------------------------------------------------

def _report(seed=0, dev=1.0, test=1.0, q_max=10, alphabet=2, q_hat=4, seconds=1.0):
    return RunReport(
        seed=seed,
        q_max=q_max,
        alphabet_size=alphabet,
        train_acc=1.0,
        dev_acc=dev,
        test_acc=test,
        train_acc_dfa=1.0,
        dev_acc_dfa=dev,
        test_acc_dfa=test,
        q_hat=q_hat,
        weights=weight_count(q_max, alphabet),
        seconds=seconds,
    )


def test_report_round_trip():
    rep = _report(seed=7, dev=0.95, test=0.875, q_hat=6, seconds=3.25)
    assert RunReport.from_dict(rep.to_dict()) == rep


def test_report_rejects_out_of_range_accuracy():
    with pytest.raises(ValueError, match="dev_acc"):
        _report(dev=1.5)


def test_report_rejects_inconsistent_weights():
    with pytest.raises(ValueError, match="inconsistent"):
        RunReport(
            seed=0, q_max=10, alphabet_size=2,
            train_acc=1.0, dev_acc=1.0, test_acc=1.0,
            train_acc_dfa=1.0, dev_acc_dfa=1.0, test_acc_dfa=1.0,
            q_hat=4, weights=219, seconds=0.0,
        )


def test_report_rejects_empty_machine():
    with pytest.raises(ValueError, match="q_hat"):
        _report(q_hat=0)


# --- selection and aggregation ----------------------------------------------

def test_select_best_prefers_dev_accuracy():
    reports = [_report(seed=0, dev=0.9), _report(seed=1, dev=0.99), _report(seed=2, dev=0.95)]
    assert select_best(reports).seed == 1


def test_select_best_breaks_dev_tie_by_weights_then_size_then_seed():
    a = _report(seed=0, dev=1.0, q_max=30)           # 1860 weights
    b = _report(seed=1, dev=1.0, q_max=10, q_hat=5)  # 220 weights, larger machine
    c = _report(seed=2, dev=1.0, q_max=10, q_hat=4)
    d = _report(seed=3, dev=1.0, q_max=10, q_hat=4)
    assert select_best([a, b, c, d]).seed == 2
    assert select_best([a, b]).seed == 1
    assert select_best([c, d]).seed == 2


def test_select_best_requires_reports():
    with pytest.raises(ValueError):
        select_best([])


def test_best_k_of_n_hand_check():
    reports = [
        _report(seed=0, dev=1.0, test=1.0, q_hat=4, seconds=2.0),
        _report(seed=1, dev=0.9, test=0.5, q_hat=9, seconds=9.0),  # dropped
        _report(seed=2, dev=1.0, test=0.9, q_hat=6, seconds=4.0),
    ]
    stats = best_k_of_n(reports, k=2)
    assert stats.k == 2
    assert stats.mean_test_acc == pytest.approx(0.95)
    assert stats.std_test_acc == pytest.approx(np.std([1.0, 0.9], ddof=1))
    assert stats.mean_q_hat == pytest.approx(5.0)
    assert stats.mean_seconds == pytest.approx(3.0)


def test_best_k_of_n_single_run_has_zero_std():
    stats = best_k_of_n([_report(test=0.75)], k=1)
    assert stats.mean_test_acc == 0.75
    assert stats.std_test_acc == 0.0


def test_best_k_of_n_validates_k():
    reports = [_report(seed=s) for s in range(3)]
    for bad in (0, 4, -1):
        with pytest.raises(ValueError):
            best_k_of_n(reports, bad)


def test_aggregate_is_over_selected_runs_only():
    # the dropped run's runtime must not leak into the aggregate
    reports = [
        _report(seed=0, dev=1.0, seconds=1.0),
        _report(seed=1, dev=0.2, seconds=500.0),
        _report(seed=2, dev=1.0, seconds=3.0),
    ]
    stats = best_k_of_n(reports, k=2)
    assert stats.mean_seconds == pytest.approx(2.0)
