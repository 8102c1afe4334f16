import sys

import hypothesis
from hypothesis import strategies as st
import numpy as np

from dfalearn.automata import Alphabet, Dfa
from dfalearn.model import ModelParams

hypothesis.settings.register_profile("ci", deadline=None, max_examples=50)
hypothesis.settings.load_profile("ci")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance pass/fail lines after the normal test summary."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)


def dfa_logit_params(dfa: Dfa, scale: float = 20.0) -> ModelParams:
    """Logits that saturate to the given DFA: +scale on chosen cells, -scale off."""
    q, p = dfa.num_states, dfa.alphabet.size
    trans = np.full((p, q, q), -scale)
    for state in range(q):
        for sym in range(p):
            trans[sym, state, int(dfa.delta[state, sym])] = scale
    accept = np.where(dfa.accepting, scale, -scale).astype(np.float64)
    return ModelParams(q_max=q, trans_logits=trans, accept_logits=accept)


@st.composite
def dfas(draw, max_states: int = 6, max_symbols: int = 3):
    """Arbitrary complete DFA (not necessarily trim or minimal)."""
    n = draw(st.integers(1, max_states))
    p = draw(st.integers(1, max_symbols))
    delta = draw(
        st.lists(
            st.lists(st.integers(0, n - 1), min_size=p, max_size=p),
            min_size=n,
            max_size=n,
        )
    )
    accepting = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return Dfa(n, Alphabet(p), np.array(delta), np.array(accepting))


@st.composite
def traces(draw, alphabet_size: int, max_len: int = 20):
    return draw(st.lists(st.integers(0, alphabet_size - 1), max_size=max_len))
