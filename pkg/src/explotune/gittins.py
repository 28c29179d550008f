"""Finite-horizon Gittins indices for Bernoulli arms with Beta posteriors.

The index of a Beta(a, b) arm with r steps remaining is the per-step
retirement reward lambda at which optimally playing the arm (with the option
to retire at any later step) exactly breaks even against retiring now. It is
computed by bisection on lambda around a backward recursion over the Beta
posterior tree of depth r, and memoized.
"""

from __future__ import annotations

import numpy as np

from .policies import argmax_random_tie

BISECTION_TOL = 1e-7
MEMO_HORIZON_CAP = 64


def _continuation_value(a: int, b: int, remaining: int, lam: float) -> float:
    """Value of pulling now and continuing optimally, under retirement
    reward lam per remaining step."""
    # V starts as the terminal zero values over the deepest posterior level.
    V = np.zeros(remaining + 1)
    cont_root = 0.0
    for rem in range(1, remaining + 1):
        level = remaining - rem
        i = np.arange(level + 1)
        ai = a + i
        bi = b + (level - i)
        p = ai / (ai + bi)
        cont = p * (1.0 + V[1:level + 2]) + (1.0 - p) * V[:level + 1]
        if level == 0:
            cont_root = float(cont[0])
        V = np.maximum(lam * rem, cont)
    return cont_root


class GittinsTable:
    """Lazy memo of index values keyed by (a, b, remaining).

    Entries with remaining above the horizon cap are computed but never
    stored: duplicate computation is idempotent, so concurrent fills of the
    same key are harmless.
    """

    def __init__(self, horizon_cap: int = MEMO_HORIZON_CAP):
        self._memo: dict[tuple[int, int, int], float] = {}
        self.horizon_cap = horizon_cap

    def index(self, a: int, b: int, remaining: int) -> float:
        if a < 1 or b < 1 or a != int(a) or b != int(b):
            raise ValueError(f"counts must be integers >= 1, got ({a}, {b})")
        if remaining < 1:
            raise ValueError(f"remaining steps must be >= 1, got {remaining}")
        a, b, remaining = int(a), int(b), int(remaining)
        if remaining == 1:
            # One step left: playing once earns the posterior mean.
            return a / (a + b)
        key = (a, b, remaining)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        lo, hi = 0.0, 1.0
        while hi - lo > BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            if _continuation_value(a, b, remaining, mid) > mid * remaining:
                lo = mid
            else:
                hi = mid
        value = 0.5 * (lo + hi)
        if remaining <= self.horizon_cap:
            self._memo[key] = value
        return value


_DEFAULT_TABLE = GittinsTable()


def gittins_index(a: int, b: int, remaining: int,
                  table: GittinsTable | None = None) -> float:
    """Finite-horizon Gittins index of a Beta(a, b) arm."""
    return (table or _DEFAULT_TABLE).index(a, b, remaining)


def gittins_select(posterior, t: int, T: int, rng: np.random.Generator,
                   table: GittinsTable | None = None) -> int:
    """Arm with the largest index given T - t + 1 steps remaining."""
    if t > T:
        raise ValueError(f"step {t} beyond horizon {T}")
    remaining = T - t + 1
    tab = table or _DEFAULT_TABLE
    indices = [tab.index(int(round(ai)), int(round(bi)), remaining)
               for ai, bi in zip(posterior.a, posterior.b)]
    return argmax_random_tie(indices, rng)
