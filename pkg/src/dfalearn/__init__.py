"""Learning deterministic finite automata from labeled traces.

A stochastic relaxation of the automaton is trained by gradient descent
under a temperature anneal, then snapped back to an exact DFA and minimized.
"""

from dfalearn.automata import Alphabet, Dfa, Pfa

__all__ = ["Alphabet", "Dfa", "Pfa"]
__version__ = "0.1.0"
