"""Monte Carlo driver for the size/power study plus concentration analyses.

Grid cells run independently; each replication derives its stream from the
cell seed and the replication index, so results are identical no matter how
many workers are used. Emitted tables mirror the study layout: tests as
columns, model/K/S as rows, degenerate cells printed as NaN.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AREUnavailable, DegenerateConcentration, ShapeError
from .inference import moments, run_tests_from_moments
from .simgen import Alternative, SimSpec, ZModel, generate

DEFAULT_TESTS = ("wald", "cq", "gs")


@dataclass
class CellResult:
    """Rejection tally for one (cell, test) pair."""

    model: str
    K: int
    S: int
    rho: float
    alternative: str
    test: str
    rejections: int
    replications: int
    degenerate_count: int

    @property
    def rejection_rate(self) -> float | None:
        if self.degenerate_count == self.replications:
            return None
        return self.rejections / self.replications

    @property
    def standard_error(self) -> float | None:
        p = self.rejection_rate
        if p is None:
            return None
        return math.sqrt(p * (1.0 - p) / self.replications)


@dataclass
class GridResult:
    cells: list[CellResult]
    alpha: float
    seed: int

    def rate(self, test: str, model, K, S, rho, alternative="null") -> float | None:
        for c in self.cells:
            if (
                c.test == test
                and c.model == str(ZModel(model).value)
                and c.K == K
                and c.S == S
                and c.rho == rho
                and c.alternative == str(Alternative(alternative).value)
            ):
                return c.rejection_rate
        raise KeyError(f"no cell ({test}, {model}, K={K}, S={S}, rho={rho}, {alternative})")

    def column(self, test: str, rho: float | None = None) -> list[float | None]:
        """Rejection rates for one test, in cell order, optionally one rho."""
        return [
            c.rejection_rate
            for c in self.cells
            if c.test == test and (rho is None or c.rho == rho)
        ]


def grid_specs(
    models,
    ks,
    ss,
    rhos,
    alternative,
    replications: int,
    master_seed: int,
    alpha: float = 0.05,
    sigma2: float = 4.0,
) -> list[SimSpec]:
    """Build the cell list with per-cell seeds derived from the master seed."""
    specs = []
    cell_index = 0
    for model in models:
        for K in ks:
            for S in ss:
                for rho in rhos:
                    seed = int(
                        np.random.SeedSequence(
                            entropy=master_seed, spawn_key=(cell_index,)
                        ).generate_state(1, np.uint64)[0]
                    )
                    specs.append(
                        SimSpec(
                            model=ZModel(model),
                            K=K,
                            S=S,
                            rho=rho,
                            alternative=Alternative(alternative),
                            replications=replications,
                            seed=seed,
                            alpha=alpha,
                            sigma2=sigma2,
                        )
                    )
                    cell_index += 1
    return specs


def _run_cell(spec: SimSpec, tests) -> list[CellResult]:
    rejections = {t: 0 for t in tests}
    degenerate = {t: 0 for t in tests}
    for r in range(spec.replications):
        phi = generate(spec, r).phi
        m = moments(phi)
        for rep in run_tests_from_moments(m, spec.alpha, tests):
            if rep.degenerate is not None:
                degenerate[rep.test] += 1
            elif rep.reject:
                rejections[rep.test] += 1
    return [
        CellResult(
            model=spec.model.value,
            K=spec.K,
            S=spec.S,
            rho=spec.rho,
            alternative=spec.alternative.value,
            test=t,
            rejections=rejections[t],
            replications=spec.replications,
            degenerate_count=degenerate[t],
        )
        for t in tests
    ]


def _run_grid(specs, tests, alpha: float, seed: int, threads: int | None) -> GridResult:
    if threads is None or threads <= 1 or len(specs) == 1:
        per_cell = [_run_cell(spec, tests) for spec in specs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_cell = list(pool.map(lambda s: _run_cell(s, tests), specs))
    cells = [c for chunk in per_cell for c in chunk]
    return GridResult(cells=cells, alpha=alpha, seed=seed)


def run_size_grid(specs, tests=DEFAULT_TESTS, threads: int | None = None, master_seed: int = 0) -> GridResult:
    """Empirical size per cell and test; degenerate runs are tallied, not rejected."""
    for spec in specs:
        if spec.alternative is not Alternative.NULL:
            raise ValueError("size grid requires alternative = null for every cell")
    alpha = specs[0].alpha if specs else 0.05
    return _run_grid(specs, tests, alpha, master_seed, threads)


def run_power_grid(specs, tests=DEFAULT_TESTS, threads: int | None = None, master_seed: int = 0) -> GridResult:
    """Empirical power under sparse or dense mean shifts."""
    for spec in specs:
        if spec.alternative is Alternative.NULL:
            raise ValueError("power grid requires a sparse or dense alternative")
    alpha = specs[0].alpha if specs else 0.05
    return _run_grid(specs, tests, alpha, master_seed, threads)


def are_metric(empirical_sizes, alpha: float) -> float:
    """Average relative error of empirical sizes, in percent of alpha.

    Degenerate (None) entries are dropped; an empty remainder is an error.
    """
    sizes = [s for s in empirical_sizes if s is not None]
    if not sizes:
        raise AREUnavailable("no non-degenerate empirical sizes")
    return 100.0 * float(np.mean(np.abs(np.asarray(sizes) - alpha))) / alpha


# --------------------------------------------------------------------------
# concentration and correlation analyses


@dataclass
class ConcentrationReport:
    lorenz: np.ndarray  # (K+1) x 2 points from (0,0) to (1,1)
    gini: float
    corr_det: float | None = None


def lorenz_gini(mean_abs_values) -> ConcentrationReport:
    """Lorenz curve and trapezoid Gini of nonnegative importance values.

    Values are sorted ascending and normalized by their sum; the curve is
    piecewise linear through the cumulative shares at j/K.
    """
    v = np.asarray(mean_abs_values, dtype=float).ravel()
    if v.size == 0 or (v < 0).any():
        raise ValueError("need a nonempty vector of nonnegative values")
    total = v.sum()
    if total <= 0:
        raise DegenerateConcentration("all values are zero")
    shares = np.sort(v) / total
    y = np.concatenate([[0.0], np.cumsum(shares)])
    y[-1] = 1.0  # exact endpoint despite rounding
    x = np.linspace(0.0, 1.0, v.size + 1)
    area = float(np.trapezoid(y, x))
    points = np.column_stack([x, y])
    return ConcentrationReport(lorenz=points, gini=1.0 - 2.0 * area)


def corr_determinant(columns, names=None) -> float:
    """Determinant of the Pearson correlation matrix of the columns."""
    m = np.atleast_2d(np.asarray(columns, dtype=float))
    S, K = m.shape
    if K > S:
        raise ShapeError(f"need at least as many rows as columns (S={S}, K={K})")
    sd = m.std(axis=0)
    bad = np.nonzero(sd == 0)[0]
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise DegenerateConcentration(f"zero variance in {label}")
    corr = np.corrcoef(m, rowvar=False)
    if K == 1:
        return 1.0
    return float(np.linalg.det(corr))


# --------------------------------------------------------------------------
# table emission


def _fmt_rate(rate: float | None) -> str:
    return "NaN" if rate is None else f"{100.0 * rate:.2f}"


def _best_flags(cells: list[CellResult], alpha: float) -> dict[int, bool]:
    """Mark, per (model,K,S,rho,alternative) row-block, the best test:
    size closest to alpha, or highest power."""
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(cells):
        groups.setdefault((c.model, c.K, c.S, c.rho, c.alternative), []).append(i)
    flags = {i: False for i in range(len(cells))}
    for key, idxs in groups.items():
        rated = [(i, cells[i].rejection_rate) for i in idxs if cells[i].rejection_rate is not None]
        if not rated:
            continue
        is_size = cells[idxs[0]].alternative == Alternative.NULL.value
        if is_size:
            best = min(rated, key=lambda t: abs(t[1] - alpha))[0]
        else:
            best = max(rated, key=lambda t: t[1])[0]
        flags[best] = True
    return flags


def write_grid_csv(result: GridResult, path) -> None:
    flags = _best_flags(result.cells, result.alpha)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "model", "K", "S", "rho", "alternative", "test",
                "rejections", "replications", "degenerate_count",
                "rejection_rate", "se", "best", "alpha", "seed",
            ]
        )
        for i, c in enumerate(result.cells):
            rate = c.rejection_rate
            se = c.standard_error
            w.writerow(
                [
                    c.model, c.K, c.S, repr(c.rho), c.alternative, c.test,
                    c.rejections, c.replications, c.degenerate_count,
                    "NaN" if rate is None else repr(rate),
                    "NaN" if se is None else repr(se),
                    int(flags[i]), repr(result.alpha), result.seed,
                ]
            )


def read_grid_csv(path) -> GridResult:
    cells = []
    alpha = 0.05
    seed = 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells.append(
                CellResult(
                    model=row["model"],
                    K=int(row["K"]),
                    S=int(row["S"]),
                    rho=float(row["rho"]),
                    alternative=row["alternative"],
                    test=row["test"],
                    rejections=int(row["rejections"]),
                    replications=int(row["replications"]),
                    degenerate_count=int(row["degenerate_count"]),
                )
            )
            alpha = float(row["alpha"])
            seed = int(row["seed"])
    return GridResult(cells=cells, alpha=alpha, seed=seed)


def write_are_csv(result: GridResult, path, tests=DEFAULT_TESTS) -> None:
    """ARE per (test, rho). Columns with any degenerate cell print NaN,
    matching the reference layout's treatment of the Wald column."""
    rhos = sorted({c.rho for c in result.cells})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test", "rho", "are", "n_cells"])
        for test in tests:
            for rho in rhos:
                col = [c for c in result.cells if c.test == test and c.rho == rho]
                rates = [c.rejection_rate for c in col]
                if any(r is None for r in rates) or not rates:
                    w.writerow([test, repr(rho), "NaN", len(col)])
                else:
                    w.writerow(
                        [test, repr(rho), repr(are_metric(rates, result.alpha)), len(col)]
                    )


def format_grid_table(result: GridResult, tests=DEFAULT_TESTS) -> str:
    """Aligned-text rendering: model/K/S rows, rho or alternative column
    blocks, one column per test, '*' on the best cell of each block."""
    cells = result.cells
    flags = _best_flags(cells, result.alpha)
    is_size = all(c.alternative == Alternative.NULL.value for c in cells)
    block_key = (lambda c: c.rho) if is_size else (lambda c: c.alternative)
    blocks = sorted({block_key(c) for c in cells}, key=str)
    rows = []
    seen = set()
    for c in cells:
        key = (c.model, c.K, c.S)
        if key not in seen:
            seen.add(key)
            rows.append(key)
    lookup = {}
    for i, c in enumerate(cells):
        lookup[(c.model, c.K, c.S, block_key(c), c.test)] = (c.rejection_rate, flags[i])

    width = 9
    title = "Empirical size (%)" if is_size else "Empirical power (%)"
    lines = [f"{title}  alpha={100 * result.alpha:g}%"]
    head1 = f"{'model':<10} {'K':>5} {'S':>5}"
    head2 = " " * len(head1)
    for b in blocks:
        label = f"rho={b:g}" if is_size else str(b)
        span = width * len(tests)
        head1 += " | " + f"{label:^{span}}"
        head2 += " | " + "".join(f"{t:^{width}}" for t in tests)
    lines += [head1, head2, "-" * len(head2)]
    for model, K, S in rows:
        line = f"{model:<10} {K:>5} {S:>5}"
        for b in blocks:
            part = ""
            for t in tests:
                rate, best = lookup.get((model, K, S, b, t), (None, False))
                cell = _fmt_rate(rate) + ("*" if best else "")
                part += f"{cell:^{width}}"
            line += " | " + part
        lines.append(line)
    if is_size:
        are_line = f"{'ARE':<10} {'':>5} {'':>5}"
        for b in blocks:
            part = ""
            for t in tests:
                col = [c.rejection_rate for c in cells if c.test == t and block_key(c) == b]
                if any(r is None for r in col) or not col:
                    cell = "NaN"
                else:
                    cell = f"{are_metric(col, result.alpha):.2f}"
                part += f"{cell:^{width}}"
            are_line += " | " + part
        lines += ["-" * len(head2), are_line]
    return "\n".join(lines) + "\n"


def emit_tables(result: GridResult, out_dir, tests=DEFAULT_TESTS) -> list[str]:
    """Write CSV + aligned-text tables (and are.csv for size grids)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    is_size = all(c.alternative == Alternative.NULL.value for c in result.cells)
    stem = "size_table" if is_size else "power_table"
    written = []
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    write_grid_csv(result, csv_path)
    written.append(csv_path)
    txt_path = os.path.join(out_dir, f"{stem}.txt")
    with open(txt_path, "w") as fh:
        fh.write(format_grid_table(result, tests))
    written.append(txt_path)
    if is_size:
        are_path = os.path.join(out_dir, "are.csv")
        write_are_csv(result, are_path, tests)
        written.append(are_path)
    return written
