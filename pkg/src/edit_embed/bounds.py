"""Randomized checks of the one-hot and max-pooling deviation bounds.

Every inequality is evaluated in integer arithmetic (pooling bounds are
multiplied through by the pool factor), so a check either holds exactly
or is reported as a violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .onehot import binary_edit_distance, one_hot, restrict_to_char
from .strings import Alphabet, edit_distance
from .tensor import maxpool1d


@dataclass
class BoundReport:
    name: str
    checked: int = 0
    violations: int = 0
    examples: list = field(default_factory=list)

    def record(self, ok: bool, detail) -> None:
        self.checked += 1
        if not ok:
            self.violations += 1
            if len(self.examples) < 5:
                self.examples.append(detail)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.violations == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checked} checks, {self.violations} violations"


def _mutate(rng, seq: np.ndarray, n_symbols: int, max_len: int, edits: int) -> np.ndarray:
    out = list(seq)
    for _ in range(edits):
        op = rng.integers(3)
        if op == 0 and out:
            out[rng.integers(len(out))] = rng.integers(n_symbols)
        elif op == 1 and len(out) < max_len:
            out.insert(rng.integers(len(out) + 1), rng.integers(n_symbols))
        elif out:
            del out[rng.integers(len(out))]
    return np.asarray(out, dtype=np.int64)


def random_pair(rng, n_symbols: int, max_len: int, multiple: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Either two independent sequences or a sequence and a light mutation of it.

    With ``multiple`` > 1 both lengths are positive multiples of it.
    """
    if multiple > 1:
        m = multiple * rng.integers(1, max_len // multiple + 1)
        n = multiple * rng.integers(1, max_len // multiple + 1)
        density = rng.uniform(0.05, 0.95)
        x = (rng.random(m) < density).astype(np.int64)
        if rng.random() < 0.5:
            y = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(np.int64)
        else:
            # Flip a few bits of x, then fix up the length.
            y = x.copy()
            flips = rng.integers(0, m, size=rng.integers(0, 6))
            y[flips] ^= 1
            y = np.resize(y, n) if n != m else y
        return x, y
    x = rng.integers(0, n_symbols, size=rng.integers(0, max_len + 1))
    if rng.random() < 0.5:
        y = rng.integers(0, n_symbols, size=rng.integers(0, max_len + 1))
    else:
        y = _mutate(rng, x, n_symbols, max_len, int(rng.integers(0, 8)))
    return x, y


def check_one_hot_bounds(n_pairs: int = 10_000, seed: int = 0, sizes=(2, 3, 4, 8), max_len: int = 64):
    """Binary edit distance of one-hot rows vs. the true edit distance.

    Returns reports for the full-alphabet bound, the support-restricted
    bound, and the restriction identity used to derive the lower bound.
    """
    rng = np.random.default_rng(seed)
    full = BoundReport("one-hot bound (full alphabet)")
    tight = BoundReport("one-hot bound (support alphabet)")
    ident = BoundReport("restriction identity")
    for _ in range(n_pairs):
        D = int(rng.choice(sizes))
        alphabet = Alphabet(tuple(range(97, 97 + D)), reserve_unknown=False)
        xo, yo = random_pair(rng, D, max_len)
        sx, sy = alphabet.decode(xo), alphabet.decode(yo)
        M, N = len(sx), len(sy)
        L = max(M, N, 1)
        delta = edit_distance(sx, sy)
        X, Y = one_hot(sx, alphabet, L), one_hot(sy, alphabet, L)
        binary = binary_edit_distance(X, Y)
        lo, hi = D * delta - (D - 1) * (M + N), D * delta
        full.record(lo <= binary <= hi, (sx, sy, delta, binary))

        # Rows for symbols in neither string are zero and contribute nothing.
        support = sorted(set(sx) | set(sy))
        if support:
            sub = Alphabet(tuple(support), reserve_unknown=False)
            binary_sub = binary_edit_distance(one_hot(sx, sub, L), one_hot(sy, sub, L))
            Ds = len(support)
            ok = Ds * delta - (Ds - 1) * (M + N) <= binary_sub <= Ds * delta
            tight.record(ok, (sx, sy, delta, binary_sub))

        c = alphabet.chars[int(rng.integers(D))]
        restricted, count = restrict_to_char(sx, c)
        ident.record(edit_distance(sx, restricted) == M - count, (sx, c))
    return [full, tight, ident]


def boolean_pool(x: np.ndarray, factor: int) -> np.ndarray:
    return maxpool1d(np.asarray(x, dtype=np.float64)[None], factor)[0][0].astype(np.int64)


def check_pooling_bounds(n_pairs: int = 10_000, seed: int = 0, factors=(2, 3, 4), max_len: int = 64):
    """Max-pooling deviation bounds on binary vectors of divisible length.

    Returns reports for the two-sided bound and for the replication
    inequality edit(A(x), A(y)) <= K * edit(P(x), P(y)).
    """
    rng = np.random.default_rng(seed)
    pool = BoundReport("max-pooling bound")
    repl = BoundReport("replication inequality")
    for _ in range(n_pairs):
        K = int(rng.choice(factors))
        x, y = random_pair(rng, 2, max_len, multiple=K)
        M, N = len(x), len(y)
        px, py = boolean_pool(x, K), boolean_pool(y, K)
        delta = edit_distance(x, y)
        delta_p = edit_distance(px, py)
        ones = int(px.sum() + py.sum())
        # All sides scaled by K to stay in integers.
        lower = max(K * delta - (K - 1) * (M + N), delta - (K - 1) * ones)
        upper = K * delta + (K - 1) * (M + N)
        pool.record(lower <= K * delta_p <= upper, (x, y, K, delta, delta_p))
        ax, ay = np.repeat(px, K), np.repeat(py, K)
        repl.record(edit_distance(ax, ay) <= K * delta_p, (x, y, K))
    return [pool, repl]
