"""Pure-Python neighborhood scorer (fallback for the compiled kernel).

Same contract and same float results as the compiled path: Jaccard is an
exact integer intersection count followed by one double division, and the
state/history combination is ``w_state * js + w_hist * jh`` evaluated left to
right.
"""

from __future__ import annotations

import numpy as np


class PythonScorer:
    """Scores a query against all stored token sets with plain set ops."""

    backend = "python"

    def __init__(self, state_weight: float, history_weight: float):
        self.state_weight = state_weight
        self.history_weight = history_weight
        self._rows: list[tuple[frozenset[str], frozenset[str]]] = []

    def __len__(self) -> int:
        return len(self._rows)

    def append(self, state_tokens: frozenset[str], history_tokens: frozenset[str]) -> None:
        self._rows.append((state_tokens, history_tokens))

    def pop_front(self) -> None:
        self._rows.pop(0)

    def score(self, state_tokens: frozenset[str], history_tokens: frozenset[str]) -> np.ndarray:
        ws = self.state_weight
        wh = self.history_weight
        nq_s = len(state_tokens)
        nq_h = len(history_tokens)
        out = np.empty(len(self._rows), dtype=np.float64)
        for i, (es, eh) in enumerate(self._rows):
            if nq_s == 0 and not es:
                js = 1.0
            else:
                inter = len(state_tokens & es)
                js = inter / (nq_s + len(es) - inter)
            if nq_h == 0 and not eh:
                jh = 1.0
            else:
                inter = len(history_tokens & eh)
                jh = inter / (nq_h + len(eh) - inter)
            out[i] = ws * js + wh * jh
        return out
