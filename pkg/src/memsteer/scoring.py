"""Backend selection for neighborhood scoring.

The compiled Cython kernel is used when importable; otherwise (or when the
``MEMSTEER_PURE_PYTHON`` environment variable is set to a non-empty value
other than ``0``) a pure-Python scorer takes over. Both backends return
bit-identical similarity arrays, so retrieval results never depend on which
one is active. ``benchmarks/bench_retrieval.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

from memsteer._scoring_py import PythonScorer

try:
    from memsteer import _scorekernel

    _HAVE_COMPILED = True
except ImportError:  # extension not built on this install
    _scorekernel = None
    _HAVE_COMPILED = False

_GROW = 1024


class CompiledScorer:
    """CSR-packed token ids scored by the Cython kernel."""

    backend = "compiled"

    def __init__(self, state_weight: float, history_weight: float):
        if not _HAVE_COMPILED:
            raise RuntimeError("compiled scoring kernel is not available")
        self.state_weight = state_weight
        self.history_weight = history_weight
        self._ids: dict[str, int] = {}
        self._state_flat = np.empty(_GROW, dtype=np.int64)
        self._hist_flat = np.empty(_GROW, dtype=np.int64)
        self._state_off = np.zeros(_GROW, dtype=np.int64)
        self._hist_off = np.zeros(_GROW, dtype=np.int64)
        self._n = 0
        self._start = 0

    def __len__(self) -> int:
        return self._n - self._start

    def _intern(self, tokens: frozenset[str]) -> np.ndarray:
        ids = self._ids
        out = np.empty(len(tokens), dtype=np.int64)
        for i, tok in enumerate(tokens):
            got = ids.get(tok)
            if got is None:
                got = len(ids)
                ids[tok] = got
            out[i] = got
        out.sort()
        return out

    @staticmethod
    def _push(flat: np.ndarray, end: int, ids: np.ndarray) -> np.ndarray:
        need = end + len(ids)
        if need > len(flat):
            flat = np.resize(flat, max(need, 2 * len(flat)))
        flat[end:need] = ids
        return flat

    def append(self, state_tokens: frozenset[str], history_tokens: frozenset[str]) -> None:
        sid = self._intern(state_tokens)
        hid = self._intern(history_tokens)
        n = self._n
        if n + 2 > len(self._state_off):
            self._state_off = np.resize(self._state_off, 2 * len(self._state_off))
            self._hist_off = np.resize(self._hist_off, 2 * len(self._hist_off))
        self._state_flat = self._push(self._state_flat, int(self._state_off[n]), sid)
        self._hist_flat = self._push(self._hist_flat, int(self._hist_off[n]), hid)
        self._state_off[n + 1] = self._state_off[n] + len(sid)
        self._hist_off[n + 1] = self._hist_off[n] + len(hid)
        self._n = n + 1

    def pop_front(self) -> None:
        if self._start >= self._n:
            raise IndexError("pop from empty scorer")
        self._start += 1
        if self._start > 64 and self._start * 2 > self._n:
            self._compact()

    def _compact(self) -> None:
        lo, hi = self._start, self._n
        s0, s1 = int(self._state_off[lo]), int(self._state_off[hi])
        h0, h1 = int(self._hist_off[lo]), int(self._hist_off[hi])
        self._state_flat = self._state_flat[s0:s1].copy()
        self._hist_flat = self._hist_flat[h0:h1].copy()
        self._state_off = (self._state_off[lo:hi + 1] - s0).copy()
        self._hist_off = (self._hist_off[lo:hi + 1] - h0).copy()
        self._n = hi - lo
        self._start = 0
        # leave room to grow again
        self._state_off = np.resize(self._state_off, max(_GROW, 2 * self._n + 2))
        self._hist_off = np.resize(self._hist_off, max(_GROW, 2 * self._n + 2))
        self._state_off[self._n + 1:] = 0
        self._hist_off[self._n + 1:] = 0

    def score(self, state_tokens: frozenset[str], history_tokens: frozenset[str]) -> np.ndarray:
        qs = self._intern(state_tokens)
        qh = self._intern(history_tokens)
        lo, hi = self._start, self._n
        n_live = hi - lo
        out = np.empty(n_live, dtype=np.float64)
        if n_live:
            _scorekernel.score_csr(
                qs, qh,
                self._state_flat[: int(self._state_off[hi])],
                np.ascontiguousarray(self._state_off[lo:hi + 1]),
                self._hist_flat[: int(self._hist_off[hi])],
                np.ascontiguousarray(self._hist_off[lo:hi + 1]),
                self.state_weight, self.history_weight, out,
            )
        return out


def compiled_available() -> bool:
    return _HAVE_COMPILED


def forced_pure() -> bool:
    return os.environ.get("MEMSTEER_PURE_PYTHON", "") not in ("", "0")


def active_backend() -> str:
    return "compiled" if (_HAVE_COMPILED and not forced_pure()) else "python"


def make_scorer(state_weight: float, history_weight: float, backend: str | None = None):
    """Build a scorer; ``backend`` overrides auto-selection ("python"/"compiled")."""
    chosen = backend or active_backend()
    if chosen == "compiled":
        return CompiledScorer(state_weight, history_weight)
    if chosen == "python":
        return PythonScorer(state_weight, history_weight)
    raise ValueError(f"unknown scoring backend: {chosen!r}")
