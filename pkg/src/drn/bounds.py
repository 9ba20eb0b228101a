"""Generalization bounds for dual learning over finite loss tables.

A :class:`LossTable` holds the composite loss l1(P(x_i), y_i) + l2(D(P(x_i)), x_i)
for each hypothesis pair (row) and sample (column), all in [0, M].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAX_EXHAUSTIVE_M = 20
_CHUNK = 1 << 14


@dataclass
class LossTable:
    losses: np.ndarray  # (hypotheses, m)
    bound: float        # M

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.losses, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError(f"loss table needs at least one row and one sample, got shape {arr.shape}")
        if self.bound <= 0:
            raise ContractError(f"M must be positive, got {self.bound}")
        if arr.min() < 0 or arr.max() > self.bound:
            raise ContractError(f"loss entries must lie in [0, {self.bound}]")
        self.losses = arr

    @property
    def m(self) -> int:
        return self.losses.shape[1]

    @property
    def hypotheses(self) -> int:
        return self.losses.shape[0]

    @classmethod
    def read(cls, path) -> "LossTable":
        """Text format: first line ``m M``, then one whitespace-separated row per hypothesis."""
        lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise FormatError(f"{path}: empty loss table")
        head = lines[0].split()
        if len(head) != 2:
            raise FormatError(f"{path}: first line must be 'm M', got {lines[0]!r}")
        try:
            m, bound = int(head[0]), float(head[1])
            rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        for k, row in enumerate(rows, start=1):
            if len(row) != m:
                raise FormatError(f"{path}: row {k} has {len(row)} values, expected m={m}")
        if not rows:
            raise FormatError(f"{path}: no hypothesis rows")
        return cls(np.array(rows), bound)

    def write(self, path) -> None:
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in self.losses)
        Path(path).write_text(f"{self.m} {self.bound!r}\n{body}\n")


def empirical_error(row) -> float:
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size == 0:
        raise ContractError("empirical_error of an empty row")
    return float(row.mean())


def _check_domain(M: float, m: int, delta: float) -> None:
    if M <= 0:
        raise ContractError(f"M must be positive, got {M}")
    if m < 1:
        raise ContractError(f"m must be >= 1, got {m}")
    if not 0 < delta <= 1:
        raise ContractError(f"delta must be in (0, 1], got {delta}")


def bound_finite(card_h: int, M: float, m: int, delta: float) -> float:
    """Deviation term M * sqrt((ln|H| + ln(1/delta)) / 2m) for a finite hypothesis set."""
    if card_h < 1:
        raise ContractError(f"|H| must be >= 1, got {card_h}")
    _check_domain(M, m, delta)
    return M * math.sqrt((math.log(card_h) + math.log(1.0 / delta)) / (2 * m))


def bound_rademacher(emp_error: float, rademacher: float, M: float, m: int, delta: float,
                     variant: str = "population") -> float:
    """Upper bound on the expected loss from the empirical loss and a Rademacher complexity.

    ``population`` uses the expected complexity (confidence term M*...),
    ``empirical`` the sample-based one (3M*...).
    """
    if rademacher < 0:
        raise ContractError(f"Rademacher complexity must be >= 0, got {rademacher}")
    _check_domain(M, m, delta)
    conf = math.sqrt(math.log(1.0 / delta) / (2 * m))
    if variant == "population":
        return emp_error + 2 * rademacher + M * conf
    if variant == "empirical":
        return emp_error + 2 * rademacher + 3 * M * conf
    raise ContractError(f"variant must be 'population' or 'empirical', got {variant!r}")


def _sup_means(table: np.ndarray, signs: np.ndarray) -> np.ndarray:
    # sup over hypotheses of (1/m) sum_i sigma_i * loss_i, one value per sign vector
    return (signs @ table.T).max(axis=1) / table.shape[1]


def rademacher_exhaustive(table: LossTable) -> float:
    m = table.m
    if m > MAX_EXHAUSTIVE_M:
        raise MemoryError(f"exhaustive enumeration needs 2^{m} sign vectors; limit is m <= {MAX_EXHAUSTIVE_M}")
    total = 2 ** m
    bits = np.arange(m, dtype=np.int64)
    partial = []
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        signs = np.where((codes[:, None] >> bits) & 1, 1.0, -1.0)
        partial.append(float(_sup_means(table.losses, signs).sum()))
    return math.fsum(partial) / total


def rademacher_monte_carlo(table: LossTable, n_draws: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate and its standard error."""
    if n_draws < 1:
        raise ContractError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    vals = []
    left = n_draws
    while left:
        k = min(left, _CHUNK)
        signs = rng.choice(np.array([-1.0, 1.0]), size=(k, table.m))
        vals.append(_sup_means(table.losses, signs))
        left -= k
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else math.inf
    return float(v.mean()), se


def empirical_rademacher(table: LossTable, mode: str = "exhaustive", n_draws: int = 100_000,
                         seed: int = 0) -> float:
    """Expected (over random signs) supremum of sign-weighted mean losses."""
    if mode == "exhaustive":
        return rademacher_exhaustive(table)
    if mode == "monte_carlo":
        return rademacher_monte_carlo(table, n_draws, seed)[0]
    raise ContractError(f"mode must be 'exhaustive' or 'monte_carlo', got {mode!r}")


@dataclass
class BoundsSummary:
    errors: list[float]
    rademacher: float
    population: list[float]
    empirical: list[float]
    delta: float

    def text(self) -> str:
        lines = [f"R_hat\t{self.rademacher:.10g}", "row\tE_hat\tbound_population\tbound_empirical"]
        for k, (e, p, q) in enumerate(zip(self.errors, self.population, self.empirical)):
            lines.append(f"{k}\t{e:.10g}\t{p:.10g}\t{q:.10g}")
        return "\n".join(lines) + "\n"


def summarize(table: LossTable, delta: float, mode: str = "exhaustive", n_draws: int = 100_000,
              seed: int = 0) -> BoundsSummary:
    """Per-row empirical error and both complexity bounds, using R_hat for the whole table.

    The population variant is evaluated with the empirical estimate in
    place of its expectation.
    """
    if mode == "exhaustive" and table.m > MAX_EXHAUSTIVE_M:
        mode = "monte_carlo"
    r_hat = max(0.0, empirical_rademacher(table, mode, n_draws, seed))
    errors = [empirical_error(row) for row in table.losses]
    pop = [bound_rademacher(e, r_hat, table.bound, table.m, delta, "population") for e in errors]
    emp = [bound_rademacher(e, r_hat, table.bound, table.m, delta, "empirical") for e in errors]
    return BoundsSummary(errors, r_hat, pop, emp, delta)


def dual_vs_supervised(primal: np.ndarray, dual: np.ndarray, bound: float,
                       mode: str = "exhaustive", n_draws: int = 100_000, seed: int = 0) -> dict:
    """Complexity of a primal-only table against the composite product table.

    ``primal`` is (|P|, m) of l1 values, ``dual`` is (|P|, |D|, m) of l2
    values for each pairing. Returns both estimates; no ordering is implied.
    """
    primal = np.asarray(primal, dtype=np.float64)
    dual = np.asarray(dual, dtype=np.float64)
    sl = LossTable(primal, bound)
    composite = (primal[:, None, :] + dual).reshape(-1, primal.shape[1])
    dl = LossTable(composite, max(bound, float(composite.max())))
    return {
        "supervised": empirical_rademacher(sl, mode, n_draws, seed),
        "dual": empirical_rademacher(dl, mode, n_draws, seed),
    }
