"""
reports.py - pvlab
Report records shared by the oracles and the predictor experiments, and their
CSV serialization (12 significant digits so reruns diff cleanly).
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

CSV_DIGITS = 12

ORACLE_COLUMNS = ["chain_kind", "T", "d", "context_set", "L_star", "gap_to_prev", "equality_flag"]
EVAL_COLUMNS = [
    "chain_kind", "T", "d", "k", "n_train", "n_test", "mse", "oracle_lstar",
    "psnr_db", "mean_gap", "cov_frobenius_gap", "teacher_forced", "seed",
]


def fmt(value) -> str:
    """Stable text form of one CSV cell."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{CSV_DIGITS}g}"
    return str(value)


def context_label(T: int, context) -> str:
    """Frame indices as offsets from T, e.g. (4, 3) with T=5 -> 'T-1|T-2'."""
    return "|".join(f"T-{T - i}" for i in context)


def write_csv(path, columns: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


@dataclass
class OracleReport:
    chain_kind: str
    T: int
    d: int
    context_sets: list
    errors: list
    gaps: list = field(default_factory=list)
    equality_flags: list = field(default_factory=list)
    identity_gaps: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    monotone_tol: float = 1e-9
    identity_tol: float = 1e-9

    @property
    def monotone(self) -> bool:
        return all(g >= -self.monotone_tol for g in self.gaps)

    @property
    def identity_holds(self) -> bool:
        return all(abs(g - v) <= self.identity_tol for g, v in zip(self.gaps, self.identity_gaps))

    def violations(self) -> list[str]:
        problems = []
        for i, g in enumerate(self.gaps, start=1):
            label = context_label(self.T, self.context_sets[i])
            if g < -self.monotone_tol:
                problems.append(f"{self.chain_kind} row {i} ({label}): L* increased by {-g:.3e}")
            if i <= len(self.identity_gaps) and abs(g - self.identity_gaps[i - 1]) > self.identity_tol:
                problems.append(
                    f"{self.chain_kind} row {i} ({label}): gap {g:.3e} != "
                    f"total-variance value {self.identity_gaps[i - 1]:.3e}"
                )
        return problems

    def rows(self) -> list[list]:
        out = []
        for i, (ctx, err) in enumerate(zip(self.context_sets, self.errors)):
            gap = self.gaps[i - 1] if i > 0 else None
            flag = self.equality_flags[i - 1] if i > 0 else None
            out.append([self.chain_kind, self.T, self.d, context_label(self.T, ctx), err, gap, flag])
        return out


@dataclass
class EvalReport:
    chain_kind: str
    T: int
    d: int
    k: int
    n_train: int
    n_test: int
    mse: float
    psnr_db: float
    oracle_lstar: float | None = None
    mean_gap: float | None = None
    cov_frobenius_gap: float | None = None
    teacher_forced: bool | None = None
    seed: int | None = None
    std_err: float | None = None     # standard error of the MSE estimate

    def row(self) -> list:
        return [
            self.chain_kind, self.T, self.d, self.k, self.n_train, self.n_test, self.mse,
            self.oracle_lstar, self.psnr_db, self.mean_gap, self.cov_frobenius_gap,
            self.teacher_forced, self.seed,
        ]


def write_oracle_reports(path, reports: list[OracleReport]) -> Path:
    return write_csv(path, ORACLE_COLUMNS, [row for r in reports for row in r.rows()])


def write_eval_reports(path, reports: list[EvalReport]) -> Path:
    return write_csv(path, EVAL_COLUMNS, [r.row() for r in reports])
