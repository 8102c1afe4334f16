"""Exact finite-automata semantics.

Deterministic acceptors are stored in dense transition-table form
(``delta[state][symbol] -> state``), probabilistic acceptors in matrix form
(a stochastic transition tensor plus initial and output vectors).  Everything
here is exact and pure: values are immutable after construction, operations
return new objects, and ties are always broken toward the lowest index so
results are reproducible byte for byte.
"""

from collections import deque
from dataclasses import dataclass, field
import json
import string

import numpy as np

__all__ = [
    "Alphabet",
    "Dfa",
    "Pfa",
    "DfaFormatError",
    "dfa_accepts",
    "pfa_accept_prob",
    "dfa_to_pfa",
    "pfa_argmax_dfa",
    "trim_unreachable",
    "hopcroft_minimize",
    "dfa_equivalent",
    "random_dfa",
    "export_dot",
    "dfa_to_json",
    "dfa_from_json",
]

_ROW_SUM_TOL = 1e-9


class DfaFormatError(ValueError):
    """Raised when a serialized automaton is malformed."""


def _default_names(size: int) -> tuple[str, ...]:
    letters = string.ascii_lowercase
    return tuple(letters[i] if i < len(letters) else f"s{i}" for i in range(size))


@dataclass(frozen=True)
class Alphabet:
    """Symbols are the integers ``0..size-1``; names are for display only."""

    size: int
    names: tuple[str, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"alphabet size must be >= 1, got {self.size}")
        names = self.names if self.names is not None else _default_names(self.size)
        names = tuple(str(n) for n in names)
        if len(names) != self.size:
            raise ValueError(f"expected {self.size} symbol names, got {len(names)}")
        object.__setattr__(self, "names", names)


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dfa:
    """Complete deterministic acceptor over an integer alphabet.

    ``delta`` has shape (num_states, alphabet.size) and must be total;
    ``accepting`` is a boolean vector.  State 0 is the initial state by
    convention (a different ``initial`` is tolerated in memory; serialization
    renumbers it back to 0).
    """

    num_states: int
    alphabet: Alphabet
    delta: np.ndarray
    accepting: np.ndarray
    initial: int = 0

    def __post_init__(self):
        if self.num_states < 1:
            raise ValueError(f"num_states must be >= 1, got {self.num_states}")
        delta = _frozen_array(self.delta, np.int64)
        accepting = _frozen_array(self.accepting, bool)
        if delta.shape != (self.num_states, self.alphabet.size):
            raise ValueError(
                f"delta shape {delta.shape} does not match "
                f"({self.num_states}, {self.alphabet.size})"
            )
        if accepting.shape != (self.num_states,):
            raise ValueError(f"accepting must have length {self.num_states}")
        if delta.size and (delta.min() < 0 or delta.max() >= self.num_states):
            raise ValueError("transition target out of range")
        if not 0 <= self.initial < self.num_states:
            raise ValueError(f"initial state {self.initial} out of range")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "accepting", accepting)

    def __eq__(self, other):
        if not isinstance(other, Dfa):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and self.initial == other.initial
            and self.alphabet == other.alphabet
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.accepting, other.accepting)
        )


@dataclass(frozen=True, eq=False)
class Pfa:
    """Probabilistic acceptor in matrix form.

    ``transition[p][q]`` is the next-state distribution from state q on
    symbol p (rows sum to 1), ``input_vec`` the initial-state distribution,
    ``output_vec`` the per-state acceptance probability.
    """

    transition: np.ndarray
    input_vec: np.ndarray
    output_vec: np.ndarray

    def __post_init__(self):
        trans = _frozen_array(self.transition, np.float64)
        vin = _frozen_array(self.input_vec, np.float64)
        vout = _frozen_array(self.output_vec, np.float64)
        if trans.ndim != 3 or trans.shape[1] != trans.shape[2]:
            raise ValueError(f"transition tensor must be (P, Q, Q), got {trans.shape}")
        q = trans.shape[1]
        if vin.shape != (q,) or vout.shape != (q,):
            raise ValueError("input/output vectors must have length Q")
        if trans.min(initial=0.0) < 0 or vin.min(initial=0.0) < 0:
            raise ValueError("probabilities must be nonnegative")
        row_sums = trans.sum(axis=2)
        if np.abs(row_sums - 1.0).max(initial=0.0) > _ROW_SUM_TOL:
            raise ValueError("transition rows must sum to 1")
        if abs(vin.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("input vector must sum to 1")
        if vout.min(initial=0.0) < 0 or vout.max(initial=1.0) > 1:
            raise ValueError("output vector entries must lie in [0, 1]")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "input_vec", vin)
        object.__setattr__(self, "output_vec", vout)

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.transition.shape[0]


def _check_symbols(trace, alphabet_size: int):
    for sym in trace:
        if not 0 <= int(sym) < alphabet_size:
            raise ValueError(f"symbol {sym} out of range for alphabet of size {alphabet_size}")


def dfa_accepts(dfa: Dfa, trace) -> bool:
    """Exact membership: run the transition table and test the final state."""
    _check_symbols(trace, dfa.alphabet.size)
    state = dfa.initial
    for sym in trace:
        state = int(dfa.delta[state, int(sym)])
    return bool(dfa.accepting[state])


def pfa_accept_prob(pfa: Pfa, trace) -> float:
    """Acceptance probability: input vector times per-symbol matrices times output vector."""
    _check_symbols(trace, pfa.alphabet_size)
    h = pfa.input_vec
    for sym in trace:
        h = h @ pfa.transition[int(sym)]
    return float(h @ pfa.output_vec)


def dfa_to_pfa(dfa: Dfa) -> Pfa:
    """Embed a DFA as the PFA whose rows are the one-hot encodings of its tables."""
    q, p = dfa.num_states, dfa.alphabet.size
    trans = np.zeros((p, q, q))
    rows = np.arange(q)
    for sym in range(p):
        trans[sym, rows, dfa.delta[:, sym]] = 1.0
    vin = np.zeros(q)
    vin[dfa.initial] = 1.0
    return Pfa(transition=trans, input_vec=vin, output_vec=dfa.accepting.astype(np.float64))


def pfa_argmax_dfa(pfa: Pfa, alphabet: Alphabet | None = None) -> Dfa:
    """Discretize a PFA to the nearest DFA.

    Each transition row collapses to its argmax (ties to the lowest index),
    the initial state is the argmax of the input vector, and a state accepts
    iff its output probability is strictly above 0.5.
    """
    if alphabet is None:
        alphabet = Alphabet(pfa.alphabet_size)
    delta = np.argmax(pfa.transition, axis=2).T  # (Q, P)
    return Dfa(
        num_states=pfa.num_states,
        alphabet=alphabet,
        delta=delta,
        accepting=pfa.output_vec > 0.5,
        initial=int(np.argmax(pfa.input_vec)),
    )


def _reachable_order(dfa: Dfa) -> list[int]:
    """States reachable from the initial state, in BFS discovery order."""
    seen = {dfa.initial}
    order = [dfa.initial]
    queue = deque([dfa.initial])
    while queue:
        q = queue.popleft()
        for sym in range(dfa.alphabet.size):
            nxt = int(dfa.delta[q, sym])
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
    return order


def trim_unreachable(dfa: Dfa) -> Dfa:
    """Drop unreachable states and renumber the rest in BFS order (initial becomes 0)."""
    order = _reachable_order(dfa)
    if len(order) == dfa.num_states and order == list(range(dfa.num_states)):
        return dfa
    remap = {old: new for new, old in enumerate(order)}
    delta = np.array(
        [[remap[int(dfa.delta[old, sym])] for sym in range(dfa.alphabet.size)] for old in order],
        dtype=np.int64,
    )
    accepting = np.array([dfa.accepting[old] for old in order], dtype=bool)
    return Dfa(len(order), dfa.alphabet, delta, accepting, initial=0)


def hopcroft_minimize(dfa: Dfa) -> Dfa:
    """Minimal complete DFA for the same language (partition refinement).

    Unreachable states are trimmed first, then accepting/rejecting blocks are
    refined against preimages until stable.  The result is renumbered in BFS
    order from the initial block, so equal inputs give identical outputs.
    """
    dfa = trim_unreachable(dfa)
    n, p = dfa.num_states, dfa.alphabet.size

    preimage = [[[] for _ in range(n)] for _ in range(p)]
    for q in range(n):
        for sym in range(p):
            preimage[sym][int(dfa.delta[q, sym])].append(q)

    accepting = frozenset(np.flatnonzero(dfa.accepting).tolist())
    rejecting = frozenset(range(n)) - accepting
    partition = {b for b in (accepting, rejecting) if b}
    worklist = {min((accepting, rejecting), key=len)} if accepting and rejecting else set()

    while worklist:
        splitter = worklist.pop()
        for sym in range(p):
            x = set()
            for q in splitter:
                x.update(preimage[sym][q])
            if not x:
                continue
            for block in list(partition):
                inside = block & x
                outside = block - x
                if not inside or not outside:
                    continue
                inside, outside = frozenset(inside), frozenset(outside)
                partition.remove(block)
                partition.update((inside, outside))
                if block in worklist:
                    worklist.remove(block)
                    worklist.update((inside, outside))
                else:
                    worklist.add(min((inside, outside), key=len))

    block_of = {}
    for block in partition:
        for q in block:
            block_of[q] = block

    # renumber blocks by BFS from the initial block, symbols ascending
    ids = {block_of[dfa.initial]: 0}
    order = [block_of[dfa.initial]]
    queue = deque(order)
    while queue:
        block = queue.popleft()
        rep = min(block)
        for sym in range(p):
            nxt = block_of[int(dfa.delta[rep, sym])]
            if nxt not in ids:
                ids[nxt] = len(ids)
                order.append(nxt)
                queue.append(nxt)

    m = len(order)
    delta = np.zeros((m, p), dtype=np.int64)
    accepting_min = np.zeros(m, dtype=bool)
    for block, idx in ids.items():
        rep = min(block)
        accepting_min[idx] = dfa.accepting[rep]
        for sym in range(p):
            delta[idx, sym] = ids[block_of[int(dfa.delta[rep, sym])]]
    return Dfa(m, dfa.alphabet, delta, accepting_min, initial=0)


def dfa_equivalent(a: Dfa, b: Dfa) -> bool:
    """Exact language equality via BFS over the product automaton."""
    if a.alphabet.size != b.alphabet.size:
        raise ValueError(
            f"alphabet sizes differ: {a.alphabet.size} vs {b.alphabet.size}"
        )
    start = (a.initial, b.initial)
    seen = {start}
    queue = deque([start])
    while queue:
        qa, qb = queue.popleft()
        if bool(a.accepting[qa]) != bool(b.accepting[qb]):
            return False
        for sym in range(a.alphabet.size):
            nxt = (int(a.delta[qa, sym]), int(b.delta[qb, sym]))
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return True


def random_dfa(num_states: int, alphabet: Alphabet, rng_seed: int) -> Dfa:
    """Random complete DFA with every state reachable from state 0.

    Each state accepts with probability 1/2.  A reachability skeleton is laid
    down first: for each state j > 0, one transition from a uniformly random
    earlier state (on a uniformly random symbol whose cell is still free)
    points to j.  Remaining cells are then filled uniformly at random.
    """
    if num_states < 1:
        raise ValueError(f"num_states must be >= 1, got {num_states}")
    rng = np.random.default_rng(rng_seed)
    q, p = num_states, alphabet.size
    accepting = rng.random(q) < 0.5
    delta = np.full((q, p), -1, dtype=np.int64)
    for j in range(1, q):
        while True:
            src = int(rng.integers(0, j))
            sym = int(rng.integers(0, p))
            if delta[src, sym] < 0:
                delta[src, sym] = j
                break
    for state in range(q):
        for sym in range(p):
            if delta[state, sym] < 0:
                delta[state, sym] = int(rng.integers(0, q))
    return Dfa(q, alphabet, delta, accepting, initial=0)


def export_dot(dfa: Dfa) -> str:
    """Graphviz text for a DFA: one node per state, double circles for accepting.

    Output is byte-stable: states ascending, symbols ascending, newline at end.
    The initial state is shaded; no extra pseudo-nodes are emitted.
    """
    lines = ["digraph dfa {", "  rankdir=LR;"]
    for q in range(dfa.num_states):
        shape = "doublecircle" if dfa.accepting[q] else "circle"
        attrs = [f"shape={shape}"]
        if q == dfa.initial:
            attrs.append("style=filled")
            attrs.append("fillcolor=lightgrey")
        lines.append(f"  q{q} [{', '.join(attrs)}];")
    for q in range(dfa.num_states):
        for sym in range(dfa.alphabet.size):
            label = dfa.alphabet.names[sym]
            lines.append(f'  q{q} -> q{int(dfa.delta[q, sym])} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def dfa_to_json(dfa: Dfa) -> str:
    """Serialize a DFA; the initial state is renumbered to 0 if necessary."""
    if dfa.initial != 0:
        dfa = _renumber_initial_to_zero(dfa)
    doc = {
        "alphabet": list(dfa.alphabet.names),
        "num_states": dfa.num_states,
        "initial": 0,
        "delta": dfa.delta.tolist(),
        "accepting": dfa.accepting.tolist(),
    }
    return json.dumps(doc, indent=2) + "\n"


def _renumber_initial_to_zero(dfa: Dfa) -> Dfa:
    perm = list(range(dfa.num_states))
    perm[0], perm[dfa.initial] = perm[dfa.initial], perm[0]
    inv = {old: new for new, old in enumerate(perm)}
    delta = np.array(
        [[inv[int(dfa.delta[old, sym])] for sym in range(dfa.alphabet.size)] for old in perm],
        dtype=np.int64,
    )
    accepting = np.array([dfa.accepting[old] for old in perm], dtype=bool)
    return Dfa(dfa.num_states, dfa.alphabet, delta, accepting, initial=0)


def dfa_from_json(text: str) -> Dfa:
    """Parse a serialized DFA, validating every field.

    Raises :class:`DfaFormatError` naming the offending field; a document
    whose initial state is not 0 is renumbered on import.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DfaFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DfaFormatError("document must be a JSON object")
    for key in ("alphabet", "num_states", "delta", "accepting"):
        if key not in doc:
            raise DfaFormatError(f"missing field '{key}'")
    names = doc["alphabet"]
    if not isinstance(names, list) or not names:
        raise DfaFormatError("field 'alphabet' must be a nonempty list of names")
    num_states = doc["num_states"]
    if not isinstance(num_states, int) or num_states < 1:
        raise DfaFormatError("field 'num_states' must be a positive integer")
    delta = doc["delta"]
    if (
        not isinstance(delta, list)
        or len(delta) != num_states
        or any(not isinstance(row, list) or len(row) != len(names) for row in delta)
    ):
        raise DfaFormatError("field 'delta' must be a num_states x alphabet table")
    for row in delta:
        for cell in row:
            if not isinstance(cell, int) or not 0 <= cell < num_states:
                raise DfaFormatError("transition target out of range in field 'delta'")
    accepting = doc["accepting"]
    if (
        not isinstance(accepting, list)
        or len(accepting) != num_states
        or any(not isinstance(flag, bool) for flag in accepting)
    ):
        raise DfaFormatError("field 'accepting' must be a list of num_states booleans")
    initial = doc.get("initial", 0)
    if not isinstance(initial, int) or not 0 <= initial < num_states:
        raise DfaFormatError("field 'initial' out of range")
    dfa = Dfa(num_states, Alphabet(len(names), tuple(names)), np.array(delta), np.array(accepting), initial=initial)
    if initial != 0:
        dfa = _renumber_initial_to_zero(dfa)
    return dfa
