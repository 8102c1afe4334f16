"""The seven Tomita benchmark languages over the binary alphabet.

Symbols are 0 and 1.  Each language comes in two independent forms: a direct
membership predicate (:func:`tomita_accepts`) and an explicit minimal DFA
(:func:`tomita_dfa`).  The two are cross-checked exhaustively in the test
suite; keep them independent when editing.

Definitions used (the standard ones from the grammar-induction literature):
  1: 1*
  2: (10)*
  3: no odd-length run of 1s immediately followed by an odd-length run of 0s
  4: no substring 000
  5: even number of 0s and even number of 1s
  6: (#1s - #0s) divisible by 3
  7: 0*1*0*1*
"""

import numpy as np

from dfalearn.automata import Alphabet, Dfa

__all__ = ["TOMITA_IDS", "TOMITA_MINIMAL_SIZES", "tomita_accepts", "tomita_dfa"]

TOMITA_IDS = (1, 2, 3, 4, 5, 6, 7)

# minimal complete-DFA state counts, keyed by language id
TOMITA_MINIMAL_SIZES = {1: 2, 2: 3, 3: 5, 4: 4, 5: 4, 6: 3, 7: 5}

BINARY = Alphabet(2, ("0", "1"))


def _check_id(language_id: int):
    if language_id not in TOMITA_MINIMAL_SIZES:
        raise ValueError(f"Tomita language id must be in 1..7, got {language_id}")


def _check_binary(trace) -> list[int]:
    out = []
    for sym in trace:
        sym = int(sym)
        if sym not in (0, 1):
            raise ValueError(f"Tomita languages are binary; got symbol {sym}")
        out.append(sym)
    return out


def _runs(trace):
    """Maximal runs as (symbol, length) pairs."""
    out = []
    for sym in trace:
        if out and out[-1][0] == sym:
            out[-1][1] += 1
        else:
            out.append([sym, 1])
    return [(s, n) for s, n in out]


def _t3(trace) -> bool:
    runs = _runs(trace)
    for (sym_a, len_a), (sym_b, len_b) in zip(runs, runs[1:]):
        if sym_a == 1 and sym_b == 0 and len_a % 2 == 1 and len_b % 2 == 1:
            return False
    return True


def _t7(trace) -> bool:
    # runs must alternate 0,1,0,1 (a string starting with 1 skips the first slot)
    runs = _runs(trace)
    expected = [0, 1, 0, 1]
    if runs and runs[0][0] == 1:
        expected = expected[1:]
    if len(runs) > len(expected):
        return False
    return all(sym == want for (sym, _), want in zip(runs, expected))


_PREDICATES = {
    1: lambda t: all(s == 1 for s in t),
    2: lambda t: len(t) % 2 == 0 and all(s == (1 - i % 2) for i, s in enumerate(t)),
    3: _t3,
    4: lambda t: not any(t[i : i + 3] == [0, 0, 0] for i in range(len(t) - 2)),
    5: lambda t: t.count(0) % 2 == 0 and t.count(1) % 2 == 0,
    6: lambda t: (t.count(1) - t.count(0)) % 3 == 0,
    7: _t7,
}

# q0 is initial throughout; rows are (on-0, on-1)
_TABLES = {
    1: ([[1, 0], [1, 1]], [True, False]),
    2: ([[2, 1], [0, 2], [2, 2]], [True, False, False]),
    3: ([[0, 1], [2, 0], [3, 4], [2, 1], [4, 4]], [True, True, False, True, False]),
    4: ([[1, 0], [2, 0], [3, 0], [3, 3]], [True, True, True, False]),
    5: ([[1, 2], [0, 3], [3, 0], [2, 1]], [True, False, False, False]),
    6: ([[2, 1], [0, 2], [1, 0]], [True, False, False]),
    7: ([[0, 1], [2, 1], [2, 3], [4, 3], [4, 4]], [True, True, True, True, False]),
}


def tomita_accepts(language_id: int, trace) -> bool:
    """Membership in Tomita language ``language_id`` via its direct definition."""
    _check_id(language_id)
    return bool(_PREDICATES[language_id](_check_binary(trace)))


def tomita_dfa(language_id: int) -> Dfa:
    """Explicit minimal DFA for Tomita language ``language_id``."""
    _check_id(language_id)
    delta, accepting = _TABLES[language_id]
    return Dfa(len(delta), BINARY, np.array(delta), np.array(accepting))
