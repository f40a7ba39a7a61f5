"""Pure-Python kernels, used when the compiled extension is unavailable.

Semantics are identical to ``_ckernels.pyx``; tests run both.
"""

import numpy as np

FIRST_MATCH = 0
TRUE_COUNT = 1
TRUE_RATIO = 2


def scan_candidates(pred, real, policy=FIRST_MATCH, param=1.0):
    """Return ``(starts, ends)`` of anomaly candidates.

    ``FIRST_MATCH``: a candidate is a maximal run of mispredictions.
    ``TRUE_COUNT``: a candidate closes once ``int(param)`` consecutive
    correct predictions have been seen. ``TRUE_RATIO``: it closes at the
    first correct prediction that lifts the share of correct predictions
    inside the candidate above ``param``. Closed candidates always end
    right after their last misprediction.
    """
    pred = np.asarray(pred)
    real = np.asarray(real)
    n = len(pred)
    starts, ends = [], []
    need = max(1, int(param)) if policy == TRUE_COUNT else 1
    open_ = False
    start = last_bad = 0
    n_true = n_false = run_true = 0
    for i in range(n):
        bad = pred[i] != real[i]
        if bad:
            if not open_:
                open_ = True
                start = i
                n_true = n_false = 0
            n_false += 1
            run_true = 0
            last_bad = i
            continue
        if not open_:
            continue
        n_true += 1
        run_true += 1
        if policy == FIRST_MATCH:
            close = True
        elif policy == TRUE_COUNT:
            close = run_true >= need
        else:
            close = n_true / (n_true + n_false) > param
        if close:
            starts.append(start)
            ends.append(last_bad + 1)
            open_ = False
    if open_:
        starts.append(start)
        ends.append(last_bad + 1)
    return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)


def lz76(bits):
    """Lempel-Ziv (1976) complexity: number of phrases in the exhaustive parsing."""
    s = [int(b) for b in np.asarray(bits).ravel()]
    n = len(s)
    if n < 2:
        return n
    c, l, i, k, k_max = 1, 1, 0, 1, 1
    while True:
        if s[i + k - 1] == s[l + k - 1]:
            k += 1
            if l + k > n:
                c += 1
                break
        else:
            if k > k_max:
                k_max = k
            i += 1
            if i == l:
                c += 1
                l += k_max
                if l + 1 > n:
                    break
                i, k, k_max = 0, 1, 1
            else:
                k = 1
    return c
