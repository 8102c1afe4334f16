"""From trained parameters to exact automata and headline metrics.

Extraction reads the argmax of each transition-logit row (the softmax argmax
is the same at every temperature, so no temperature enters) and thresholds
acceptance logits at zero, then trims and minimizes.  Metrics follow the
benchmark convention: a run is scored by querying the extracted DFA, with
continuous-model accuracies kept alongside for diagnostics.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from dfalearn.automata import Alphabet, Dfa, hopcroft_minimize, trim_unreachable
from dfalearn.data import TraceSample
from dfalearn.model import ModelParams, PackedTraces, batch_outputs

__all__ = [
    "RunReport",
    "AggregateStats",
    "extract_dfa",
    "weight_count",
    "accuracy",
    "dfa_predictions",
    "select_best",
    "best_k_of_n",
]

log = logging.getLogger(__name__)


def extract_dfa(params: ModelParams, alphabet: Alphabet | None = None, minimize: bool = True) -> Dfa:
    """Crisp automaton underlying the relaxed model.

    Transition targets are per-row argmaxes of the logits; a state accepts
    iff its acceptance logit is positive (identical to thresholding the
    sigmoid at 1/2, without evaluating it).  With ``minimize`` the result is
    trimmed and Hopcroft-minimized.
    """
    if alphabet is None:
        alphabet = Alphabet(params.alphabet_size)
    dfa = Dfa(
        num_states=params.q_max,
        alphabet=alphabet,
        delta=np.argmax(params.trans_logits, axis=2).T,
        accepting=params.accept_logits > 0.0,
        initial=0,
    )
    if not minimize:
        return dfa
    return hopcroft_minimize(trim_unreachable(dfa))


def weight_count(q_max: int, alphabet_size: int) -> int:
    """Parameter-count convention: transition logits plus output and initial vectors."""
    return alphabet_size * q_max * q_max + 2 * q_max


def dfa_predictions(dfa: Dfa, samples: list[TraceSample]) -> np.ndarray:
    """Vectorized acceptance for a batch of traces.

    Belief traces are first snapped symbol-wise to their nearest one-hot.
    Ragged lengths are handled by masking, not by padding symbols: a trace's
    state freezes once it ends.
    """
    n = len(samples)
    if n == 0:
        return np.zeros(0, dtype=bool)
    if samples[0].is_belief:
        sym_lists = [np.argmax(s.beliefs, axis=1) for s in samples]
    else:
        sym_lists = [np.array(s.symbols, dtype=np.int64) for s in samples]
    lengths = np.array([len(s) for s in sym_lists])
    max_len = int(lengths.max(initial=0))
    padded = np.zeros((n, max_len), dtype=np.int64)
    for i, syms in enumerate(sym_lists):
        padded[i, : len(syms)] = syms
    states = np.full(n, dfa.initial, dtype=np.int64)
    for t in range(max_len):
        stepped = dfa.delta[states, padded[:, t]]
        states = np.where(t < lengths, stepped, states)
    return dfa.accepting[states]


def accuracy(predictor, samples: list[TraceSample], tau: float | None = None) -> float:
    """Fraction of samples whose predicted acceptance matches the label.

    ``predictor`` is a :class:`Dfa` or a :class:`ModelParams` (the latter
    needs the temperature and thresholds its continuous output at 1/2).
    An empty sample list scores 1.0 by convention, with a warning.
    """
    if not samples:
        log.warning("accuracy over an empty sample list; returning 1.0 by convention")
        return 1.0
    labels = np.array([s.label for s in samples], dtype=bool)
    if isinstance(predictor, Dfa):
        predicted = dfa_predictions(predictor, samples)
    elif isinstance(predictor, ModelParams):
        if tau is None:
            raise ValueError("model accuracy needs a temperature")
        pack = PackedTraces(samples, predictor.alphabet_size)
        predicted = batch_outputs(predictor, tau, pack) > 0.5
    else:
        raise TypeError(f"cannot score a {type(predictor).__name__}")
    return float(np.mean(predicted == labels))


@dataclass(frozen=True)
class RunReport:
    """Everything reported about one training run."""

    seed: int
    q_max: int
    alphabet_size: int
    train_acc: float
    dev_acc: float
    test_acc: float
    train_acc_dfa: float
    dev_acc_dfa: float
    test_acc_dfa: float
    q_hat: int
    weights: int
    seconds: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("train_acc", "dev_acc", "test_acc", "train_acc_dfa", "dev_acc_dfa", "test_acc_dfa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.q_hat < 1:
            raise ValueError(f"q_hat must be >= 1, got {self.q_hat}")
        if self.weights != weight_count(self.q_max, self.alphabet_size):
            raise ValueError(
                f"weights {self.weights} inconsistent with q_max={self.q_max}, "
                f"alphabet={self.alphabet_size}"
            )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "q_max": self.q_max,
            "alphabet_size": self.alphabet_size,
            "train_acc": self.train_acc,
            "dev_acc": self.dev_acc,
            "test_acc": self.test_acc,
            "train_acc_dfa": self.train_acc_dfa,
            "dev_acc_dfa": self.dev_acc_dfa,
            "test_acc_dfa": self.test_acc_dfa,
            "q_hat": self.q_hat,
            "weights": self.weights,
            "seconds": self.seconds,
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(**doc)


def _selection_key(report: RunReport):
    # higher dev accuracy wins; then fewer weights, smaller DFA, lower seed
    return (-report.dev_acc_dfa, report.weights, report.q_hat, report.seed)


def select_best(reports: list[RunReport]) -> RunReport:
    """The run to keep: best dev accuracy, ties broken toward the smaller model.

    Selection is on the extracted DFA's dev accuracy (the artifact actually
    shipped); remaining ties fall through weight count, then extracted size,
    then seed, so the choice is deterministic.
    """
    if not reports:
        raise ValueError("select_best needs at least one report")
    return min(reports, key=_selection_key)


@dataclass(frozen=True)
class AggregateStats:
    """Mean and sample standard deviation over the selected top-k runs."""

    k: int
    mean_test_acc: float
    std_test_acc: float
    mean_q_hat: float
    std_q_hat: float
    mean_seconds: float
    std_seconds: float


def best_k_of_n(reports: list[RunReport], k: int) -> AggregateStats:
    """Aggregate the k best-by-dev runs out of n."""
    if not 1 <= k <= len(reports):
        raise ValueError(f"need 1 <= k <= {len(reports)}, got k={k}")
    top = sorted(reports, key=_selection_key)[:k]

    def mean_std(values):
        arr = np.array(values, dtype=np.float64)
        return float(arr.mean()), (float(arr.std(ddof=1)) if k > 1 else 0.0)

    mt, st = mean_std([r.test_acc_dfa for r in top])
    mq, sq = mean_std([r.q_hat for r in top])
    ms, ss = mean_std([r.seconds for r in top])
    return AggregateStats(
        k=k,
        mean_test_acc=mt,
        std_test_acc=st,
        mean_q_hat=mq,
        std_q_hat=sq,
        mean_seconds=ms,
        std_seconds=ss,
    )
