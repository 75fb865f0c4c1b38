"""How many message bits per token the constraint admits.

For token distributions uniform on the two-point class (every step the
model is a fair coin over some token pair), the best achievable rate has
a closed form, and small alphabets are cheap enough to verify it by
enumerating every deterministic encoder table directly. An encoder table
assigns, for each letter w of an auxiliary alphabet and each token pair,
which of the two tokens is emitted; the unchanged-marginal constraint
forces every pair's column to split evenly over the letters, and the rate
of a table is the mutual information between the letter and the emitted
token. Logs are base 2 throughout; 0*log(0) counts as 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class TwoPointClass:
    """Uniform-over-pairs family of fair two-token distributions."""

    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ParameterError("N must be >= 2")

    @property
    def n_pairs(self) -> int:
        return self.N * (self.N - 1) // 2

    def pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.N), 2))


@dataclass(frozen=True)
class EncoderTable:
    """cells[w][col] is the token emitted for letter w and the col-th pair; weights sum to 1."""

    N: int
    pairs: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    cells: np.ndarray  # (len(weights), len(pairs)) token ids

    def __post_init__(self):
        self.cells.setflags(write=False)

    def row_counts(self) -> np.ndarray:
        """Per-letter histogram of emitted tokens; shape (|W|, N)."""
        out = np.zeros((self.cells.shape[0], self.N), dtype=np.int64)
        for w in range(self.cells.shape[0]):
            np.add.at(out[w], self.cells[w], 1)
        return out

    def is_distortion_free(self) -> bool:
        """Each pair's column must give each of its two tokens half the letter weight."""
        for col, (i, j) in enumerate(self.pairs):
            wi = sum(w for w, cell in zip(self.weights, self.cells[:, col]) if cell == i)
            wj = sum(w for w, cell in zip(self.weights, self.cells[:, col]) if cell == j)
            valid = all(cell in (i, j) for cell in self.cells[:, col])
            if not valid or abs(wi - 0.5) > 1e-12 or abs(wj - 0.5) > 1e-12:
                return False
        return True


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def table_mutual_information(table: EncoderTable) -> float:
    """I(letter; token) in bits, with the token marginal fixed at uniform 1/N."""
    rows = table.row_counts()
    h_cond = sum(
        w * _entropy_bits(counts) for w, counts in zip(table.weights, rows)
    )
    return math.log2(table.N) - h_cond


def capacity_closed_form(N: int) -> float:
    """Best bits/token over the two-point class: log N + sum_t (t/C) log (t/C), C = C(N,2)."""
    if N < 2:
        raise ParameterError("N must be >= 2")
    n_pairs = N * (N - 1) // 2
    t = np.arange(1, N, dtype=np.float64)
    s = t / n_pairs
    return float(math.log2(N) + (s * np.log2(s)).sum())


def capacity_limit() -> float:
    """Large-N limit of the two-point capacity: 1 - (1/2) log2 e bits/token."""
    return 1.0 - 0.5 * math.log2(math.e)


def optimal_construction(N: int) -> EncoderTable:
    """Two-letter optimum: one letter always emits the smaller token of the pair,
    the other the larger, each with weight 1/2."""
    cls = TwoPointClass(N)
    pairs = tuple(cls.pairs())
    lo = np.array([min(p) for p in pairs], dtype=np.int64)
    hi = np.array([max(p) for p in pairs], dtype=np.int64)
    return EncoderTable(
        N=N, pairs=pairs, weights=(0.5, 0.5), cells=np.stack([lo, hi])
    )


@dataclass(frozen=True)
class BruteForceResult:
    bits: float
    table: EncoderTable
    skipped_letter_counts: tuple[int, ...]
    tables_examined: int


def brute_force_capacity(N: int, max_W_letters: int = 4) -> BruteForceResult:
    """Enumerate every feasible uniform-letter encoder table and maximize I(W;X).

    Only even letter counts are feasible (each pair column must split exactly
    in half); odd counts are skipped and reported. Enumeration is exhaustive,
    so N is capped at 5 to keep the table count sane.
    """
    if N > 5:
        raise ParameterError("brute force enumeration is capped at N <= 5")
    cls = TwoPointClass(N)
    pairs = tuple(cls.pairs())
    n_pairs = cls.n_pairs
    best_bits = -1.0
    best_table = None
    skipped = []
    examined = 0
    for d in range(1, max_W_letters + 1):
        if d % 2 == 1:
            skipped.append(d)
            continue
        half = d // 2
        column_choices = list(itertools.combinations(range(d), half))
        count = len(column_choices) ** n_pairs
        if count > 5_000_000:
            raise ParameterError(
                f"enumeration of |W|={d} needs {count} tables; reduce max_W_letters"
            )
        weights = tuple([1.0 / d] * d)
        log2N = math.log2(N)
        for assignment in itertools.product(column_choices, repeat=n_pairs):
            examined += 1
            counts = np.zeros((d, N), dtype=np.int64)
            for col, (i, j) in enumerate(pairs):
                low_rows = assignment[col]
                for w in range(d):
                    counts[w, i if w in low_rows else j] += 1
            h_cond = sum(_entropy_bits(counts[w]) for w in range(d)) / d
            bits = log2N - h_cond
            if bits > best_bits + 1e-15:
                best_bits = bits
                cells = np.zeros((d, n_pairs), dtype=np.int64)
                for col, (i, j) in enumerate(pairs):
                    for w in range(d):
                        cells[w, col] = i if w in assignment[col] else j
                best_table = EncoderTable(N=N, pairs=pairs, weights=weights, cells=cells)
    if best_table is None:
        raise ParameterError("no feasible letter count <= max_W_letters (need an even one)")
    return BruteForceResult(
        bits=best_bits,
        table=best_table,
        skipped_letter_counts=tuple(skipped),
        tables_examined=examined,
    )


def random_feasible_table(N: int, d: int, rng: np.random.Generator) -> EncoderTable:
    """Random table satisfying the even-split column constraint (d must be even)."""
    if d % 2 != 0:
        raise ParameterError("letter count must be even")
    cls = TwoPointClass(N)
    pairs = tuple(cls.pairs())
    cells = np.zeros((d, cls.n_pairs), dtype=np.int64)
    for col, (i, j) in enumerate(pairs):
        rows_i = rng.permutation(d)[: d // 2]
        cells[:, col] = j
        cells[rows_i, col] = i
    return EncoderTable(N=N, pairs=pairs, weights=tuple([1.0 / d] * d), cells=cells)
