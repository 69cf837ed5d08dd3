# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled neighborhood-scoring kernel.

Computes weighted Jaccard similarity between one query and every stored
entry. Token sets are interned to sorted int64 id arrays and entries are laid
out in CSR form (flat id array + offsets), so one scoring pass is a cheap
two-pointer merge per entry.

Must stay numerically bit-identical to memsteer._scoring_py: same integer
intersection counts, same double division, same multiply/add order (the
build disables FP contraction for this reason).
"""


cdef inline double _jaccard_sorted(const long long[::1] q,
                                   const long long[::1] flat,
                                   Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    cdef Py_ssize_t nq = q.shape[0]
    cdef Py_ssize_t ne = hi - lo
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t j = lo
    cdef Py_ssize_t inter = 0
    cdef Py_ssize_t union_
    if nq == 0 and ne == 0:
        return 1.0
    while i < nq and j < hi:
        if q[i] == flat[j]:
            inter += 1
            i += 1
            j += 1
        elif q[i] < flat[j]:
            i += 1
        else:
            j += 1
    union_ = nq + ne - inter
    return <double>inter / <double>union_


def score_csr(const long long[::1] q_state, const long long[::1] q_hist,
              const long long[::1] state_flat, const long long[::1] state_off,
              const long long[::1] hist_flat, const long long[::1] hist_off,
              double w_state, double w_hist, double[::1] out):
    """Fill ``out[i]`` with the weighted state/history Jaccard of entry i."""
    cdef Py_ssize_t n = state_off.shape[0] - 1
    cdef Py_ssize_t i
    cdef double js, jh
    if out.shape[0] != n or hist_off.shape[0] - 1 != n:
        raise ValueError("offset/output arrays disagree on entry count")
    with nogil:
        for i in range(n):
            js = _jaccard_sorted(q_state, state_flat, state_off[i], state_off[i + 1])
            jh = _jaccard_sorted(q_hist, hist_flat, hist_off[i], hist_off[i + 1])
            out[i] = w_state * js + w_hist * jh
