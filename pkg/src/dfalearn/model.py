"""The trainable relaxed automaton and its gradients.

The model keeps unconstrained transition logits (one (q_max, q_max) block per
symbol) and one acceptance logit per state.  At temperature tau the logits
become a stochastic transition tensor via a row softmax of logits/tau and a
per-state acceptance probability via a sigmoid of logits/tau.  Running a
trace multiplies the state-belief row vector through the per-symbol matrices
(crisp mode) or their belief-weighted convex combinations (belief mode); the
prediction is the final belief dotted with the acceptance vector.

Gradients are computed by hand in reverse mode.  The batched engine sorts
traces by length (descending) once per dataset, keeps only the active prefix
of the batch at each timestep, and partitions active rows by symbol so each
step is a handful of matrix products.  Accumulation order is fixed (timestep
descending, symbol ascending), so gradients are bit-reproducible.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dfalearn.data import TraceSample

__all__ = [
    "ModelParams",
    "ForwardTrace",
    "AdamState",
    "PackedTraces",
    "softmax_with_temp",
    "sigmoid_with_temp",
    "init_params",
    "activations",
    "forward",
    "bce_loss",
    "backward",
    "batch_outputs",
    "adam_step",
]

BCE_CLIP = 1e-7


def softmax_with_temp(logits: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of logits/tau along the last axis, max-shifted for stability."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid_with_temp(x, tau: float):
    """Elementwise 1/(1+exp(-x/tau)), overflow-safe for any logit magnitude."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(x, dtype=np.float64) / tau
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass
class ModelParams:
    """Unconstrained logits for a relaxed automaton with q_max states."""

    q_max: int
    trans_logits: np.ndarray  # (alphabet, q_max, q_max)
    accept_logits: np.ndarray  # (q_max,)

    def __post_init__(self):
        if self.q_max < 1:
            raise ValueError(f"q_max must be >= 1, got {self.q_max}")
        self.trans_logits = np.array(self.trans_logits, dtype=np.float64)
        self.accept_logits = np.array(self.accept_logits, dtype=np.float64)
        p_shape = self.trans_logits.shape
        if len(p_shape) != 3 or p_shape[1:] != (self.q_max, self.q_max):
            raise ValueError(f"trans_logits must be (alphabet, {self.q_max}, {self.q_max})")
        if self.accept_logits.shape != (self.q_max,):
            raise ValueError(f"accept_logits must have length {self.q_max}")
        if not (np.all(np.isfinite(self.trans_logits)) and np.all(np.isfinite(self.accept_logits))):
            raise ValueError("logits must be finite")

    @property
    def alphabet_size(self) -> int:
        return self.trans_logits.shape[0]


def init_params(
    q_max: int, alphabet_size: int, rng_seed: int, permutation_bias: float = 0.0
) -> ModelParams:
    """Standard-normal logits: diffuse but non-uniform rows at temperature 1.

    With ``permutation_bias`` > 0, each symbol's logit matrix additionally gets
    that amount added along a random permutation, so the argmax skeleton at
    epoch 0 tends toward a permutation automaton.  Permutation rows neither
    lose nor concentrate state mass, which keeps gradients flowing into all
    q_max states early on; a plain normal init often funnels the state
    distribution through two or three states before the output layer has any
    say, and cyclic languages then converge to an undersized machine.
    """
    rng = np.random.default_rng(rng_seed)
    trans = rng.normal(0.0, 1.0, size=(alphabet_size, q_max, q_max))
    if permutation_bias:
        for p in range(alphabet_size):
            trans[p, np.arange(q_max), rng.permutation(q_max)] += permutation_bias
    return ModelParams(
        q_max=q_max,
        trans_logits=trans,
        accept_logits=rng.normal(0.0, 1.0, size=q_max),
    )


def activations(params: ModelParams, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """(stochastic transition tensor, acceptance-probability vector) at tau."""
    return (
        softmax_with_temp(params.trans_logits, tau),
        sigmoid_with_temp(params.accept_logits, tau),
    )


@dataclass(frozen=True)
class ForwardTrace:
    """Full state-belief sequence h_0..h_l and the final prediction."""

    states: np.ndarray  # (length + 1, q_max)
    output: float
    trans: np.ndarray
    accept: np.ndarray


def forward(params: ModelParams, tau: float, sample: TraceSample) -> ForwardTrace:
    """Reference single-trace recurrence (both modes).

    Belief mode adds only the nonzero-weight terms, in ascending symbol
    order, so a belief trace whose rows are exact one-hots reproduces the
    crisp result bit for bit.
    """
    trans, accept = activations(params, tau)
    q = params.q_max
    h = np.zeros(q)
    h[0] = 1.0
    states = [h]
    if sample.is_belief:
        if sample.beliefs.shape[1] != params.alphabet_size:
            raise ValueError(
                f"belief width {sample.beliefs.shape[1]} does not match "
                f"alphabet size {params.alphabet_size}"
            )
        for row in sample.beliefs:
            h = states[-1]
            nxt = np.zeros(q)
            for p in range(params.alphabet_size):
                w = row[p]
                if w != 0.0:
                    nxt += w * (h @ trans[p])
            states.append(nxt)
    else:
        for sym in sample.symbols:
            if not 0 <= sym < params.alphabet_size:
                raise ValueError(
                    f"symbol {sym} out of range for alphabet size {params.alphabet_size}"
                )
            states.append(states[-1] @ trans[sym])
    y = float(states[-1] @ accept)
    return ForwardTrace(states=np.array(states), output=y, trans=trans, accept=accept)


def bce_loss(y: float, label: int) -> float:
    """Binary cross-entropy with predictions clamped to [1e-7, 1−1e-7]."""
    y = min(max(float(y), BCE_CLIP), 1.0 - BCE_CLIP)
    return -np.log(y) if label else -np.log1p(-y)


class PackedTraces:
    """A batch reorganized for the length-bucketed recurrence.

    Traces are sorted by length, longest first, so the set of traces still
    running at step t is always a prefix of the batch; ``counts[t]`` is its
    size.  Crisp batches additionally carry, for each (step, symbol), the
    active-prefix rows reading that symbol, which lets each step run as one
    matrix product per symbol.  Belief batches carry the per-step belief
    matrix instead.  Packing is done once per dataset and reused.
    """

    def __init__(self, samples: Sequence[TraceSample], alphabet_size: int):
        self.alphabet_size = alphabet_size
        self.size = len(samples)
        if self.size == 0:
            self.is_belief = False
            self.max_len = 0
            self.order = np.zeros(0, dtype=np.int64)
            self.labels = np.zeros(0, dtype=np.float64)
            self.counts = [0]
            self.sym_rows = []
            self.beliefs = []
            return
        modes = {s.is_belief for s in samples}
        if len(modes) > 1:
            raise ValueError("cannot pack crisp and belief samples together")
        self.is_belief = modes.pop()
        lengths = np.array([len(s) for s in samples], dtype=np.int64)
        self.order = np.argsort(-lengths, kind="stable")
        ordered = [samples[int(i)] for i in self.order]
        self.labels = np.array([s.label for s in ordered], dtype=np.float64)
        self.max_len = int(lengths.max())
        # counts[t] = number of traces with length >= t, t = 0..max_len
        hist = np.bincount(lengths, minlength=self.max_len + 1)
        tail = np.cumsum(hist[::-1])[::-1]
        self.counts = [int(tail[t]) if t < len(tail) else 0 for t in range(self.max_len + 1)]
        self.sym_rows: list[list[np.ndarray]] = [[]]
        self.beliefs: list[np.ndarray] = [np.zeros((0, alphabet_size))]
        for t in range(1, self.max_len + 1):
            ct = self.counts[t]
            if self.is_belief:
                block = np.stack([ordered[i].beliefs[t - 1] for i in range(ct)])
                if block.shape[1] != alphabet_size:
                    raise ValueError(
                        f"belief width {block.shape[1]} does not match "
                        f"alphabet size {alphabet_size}"
                    )
                self.beliefs.append(block)
            else:
                col = np.array([ordered[i].symbols[t - 1] for i in range(ct)])
                if col.size and (col.min() < 0 or col.max() >= alphabet_size):
                    raise ValueError(f"symbol out of range for alphabet size {alphabet_size}")
                self.sym_rows.append(
                    [np.flatnonzero(col == p) for p in range(alphabet_size)]
                )


def _packed_forward(trans: np.ndarray, pack: PackedTraces, keep_history: bool):
    """Run the recurrence over a packed batch.

    Returns (final_states, history), final states in sorted order; history is
    the per-step list of active-prefix state matrices (None unless kept).
    """
    n, q = pack.size, trans.shape[1]
    h0 = np.zeros((n, q))
    if n:
        h0[:, 0] = 1.0
    finals = np.empty((n, q))
    history = [h0] if keep_history else None
    current = h0
    for t in range(1, pack.max_len + 1):
        ct, prev_ct = pack.counts[t], pack.counts[t - 1]
        finals[ct:prev_ct] = current[ct:prev_ct]  # traces of length t-1 end here
        active = current[:ct]
        if pack.is_belief:
            weights = pack.beliefs[t]
            nxt = np.zeros((ct, q))
            for p in range(pack.alphabet_size):
                nxt += weights[:, p : p + 1] * (active @ trans[p])
        else:
            nxt = np.empty((ct, q))
            for p, rows in enumerate(pack.sym_rows[t]):
                if rows.size:
                    nxt[rows] = active[rows] @ trans[p]
        if keep_history:
            history.append(nxt)
        current = nxt
    finals[: pack.counts[pack.max_len]] = current
    return finals, history


def _bce_and_grad(y: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean clamped BCE over the batch and dL/dy (zero where the clamp is active)."""
    n = y.shape[0]
    if n == 0:
        return 0.0, y
    yc = np.clip(y, BCE_CLIP, 1.0 - BCE_CLIP)
    losses = np.where(labels == 1.0, -np.log(yc), -np.log1p(-yc))
    grad = np.where(
        (y > BCE_CLIP) & (y < 1.0 - BCE_CLIP),
        (yc - labels) / (yc * (1.0 - yc)) / n,
        0.0,
    )
    return float(losses.mean()), grad


def batch_outputs(params: ModelParams, tau: float, pack: PackedTraces) -> np.ndarray:
    """Predictions for a packed batch, returned in the original sample order."""
    trans, accept = activations(params, tau)
    finals, _ = _packed_forward(trans, pack, keep_history=False)
    y_sorted = finals @ accept
    y = np.empty_like(y_sorted)
    y[pack.order] = y_sorted
    return y


def backward(
    params: ModelParams, tau: float, batch
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean BCE over the batch and its exact gradients w.r.t. both logit tensors.

    ``batch`` is a :class:`PackedTraces` or a list of samples (packed on the
    fly).  An empty batch yields loss 0 and zero gradients.
    """
    pack = batch if isinstance(batch, PackedTraces) else PackedTraces(batch, params.alphabet_size)
    trans, accept = activations(params, tau)
    finals, history = _packed_forward(trans, pack, keep_history=True)
    y = finals @ accept
    loss, dy = _bce_and_grad(y, pack.labels)

    grad_accept_prob = finals.T @ dy
    grad_finals = dy[:, None] * accept[None, :]
    grad_trans_prob = np.zeros_like(trans)

    grad_h = grad_finals.copy()  # row i: adjoint of trace i's newest stored state
    for t in range(pack.max_len, 0, -1):
        ct = pack.counts[t]
        prev = history[t - 1]
        if pack.is_belief:
            weights = pack.beliefs[t]
            active_prev = prev[:ct]
            g = grad_h[:ct]
            g_prev = np.zeros((ct, trans.shape[1]))
            for p in range(pack.alphabet_size):
                w = weights[:, p : p + 1]
                grad_trans_prob[p] += (w * active_prev).T @ g
                g_prev += (w * g) @ trans[p].T
            grad_h[:ct] = g_prev
        else:
            for p, rows in enumerate(pack.sym_rows[t]):
                if rows.size:
                    g = grad_h[rows]
                    grad_trans_prob[p] += prev[rows].T @ g
                    grad_h[rows] = g @ trans[p].T

    # pull back through the temperature-scaled activations
    inner = (grad_trans_prob * trans).sum(axis=-1, keepdims=True)
    grad_trans_logits = trans * (grad_trans_prob - inner) / tau
    grad_accept_logits = grad_accept_prob * accept * (1.0 - accept) / tau
    return loss, grad_trans_logits, grad_accept_logits


@dataclass
class AdamState:
    """First/second-moment accumulators for both logit tensors."""

    m_trans: np.ndarray
    v_trans: np.ndarray
    m_accept: np.ndarray
    v_accept: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        return cls(
            m_trans=np.zeros_like(params.trans_logits),
            v_trans=np.zeros_like(params.trans_logits),
            m_accept=np.zeros_like(params.accept_logits),
            v_accept=np.zeros_like(params.accept_logits),
        )


def adam_step(
    params: ModelParams,
    grad_trans: np.ndarray,
    grad_accept: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One adaptive-moment update with bias correction, in place."""
    state.step += 1
    t = state.step
    for param, grad, m, v in (
        (params.trans_logits, grad_trans, state.m_trans, state.v_trans),
        (params.accept_logits, grad_accept, state.m_accept, state.v_accept),
    ):
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)
