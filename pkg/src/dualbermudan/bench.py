"""Benchmark grids for the basket put and the max-call, with published reference bounds.

Reference numbers are annotations for the reports; nothing here judges a run.
"""
from __future__ import annotations

import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .config import BasisConfig, ModelConfig, RunConfig, SamplingConfig
from .report import CellReport, Reference, run_cell

__all__ = ["BenchCell", "TABLES", "bench_cells", "filter_cells", "run_bench", "WORKERS_ENV"]

WORKERS_ENV = "DUALBERMUDAN_WORKERS"

# Basket put on five assets: r = 0.05, no dividend, sigma = 0.2, K = 100, T = 3.
# Lower/upper (standard error) from the original study, 300000 lower and 100000
# upper paths; intervals are earlier published bounds. The last field is the number
# of decimals each value was printed with.
BASKET_PUT_REFERENCE = {
    (3, 90): Reference(10.000, 0.000, 10.000, 0.000, (10.000, 10.004)),
    (3, 100): Reference(2.164, 0.007, 2.172, 0.001, (2.154, 2.164)),
    (3, 110): Reference(0.539, 0.004, 0.551, 0.001, (0.535, 0.540)),
    (6, 90): Reference(10.000, 0.000, 10.000, 0.000, (10.000, 10.000)),
    (6, 100): Reference(2.407, 0.006, 2.432, 0.001, (2.359, 2.412)),
    (6, 110): Reference(0.573, 0.003, 0.609, 0.001, (0.569, 0.580)),
    (9, 90): Reference(10.000, 0.0000, 10.008, 0.0003, (10.000, 10.005)),
    (9, 100): Reference(2.475, 0.0063, 2.522, 0.0013, (2.385, 2.502)),
    (9, 110): Reference(0.5915, 0.0034, 0.6353, 0.0009, (0.577, 0.600), (4, 4)),
}

# Max-call: as above but dividend yield 0.1, D in {2, 5}, nine exercise dates.
MAX_CALL_REFERENCE = {
    (2, 90): Reference(8.0556, 0.0219, 8.15655, 0.0034, (8.053, 8.082), (4, 5)),
    (2, 100): Reference(13.8850, 0.0276, 14.0293, 0.0044, (13.892, 13.934), (4, 4)),
    (2, 110): Reference(21.3671, 0.0319, 21.5319, 0.0048, (21.316, 21.359), (4, 4)),
    (5, 90): Reference(16.5973, 0.0296, 16.7963, 0.0058, (16.602, 16.655), (4, 4)),
    (5, 100): Reference(26.1325, 0.0356, 26.3803, 0.0072, (26.109, 26.292), (4, 4)),
    (5, 110): Reference(36.7348, 0.0403, 37.0856, 0.0082, (36.704, 36.832), (4, 4)),
}

MAX_CALL_EXERCISE_DATES = 9
TABLES = ("basket_put", "max_call")


@dataclass(frozen=True)
class BenchCell:
    table: str
    index: int
    params: dict
    config: RunConfig
    reference: Reference

    @property
    def label(self) -> str:
        return f"{self.table} " + ",".join(f"{k}={v}" for k, v in self.params.items())


def _model(table, dim, x0, J):
    if table == "basket_put":
        return ModelConfig("basket_put", 5, 0.05, 0.0, 0.2, 100.0, (float(x0),) * 5, 3.0, J, 0.01)
    return ModelConfig("max_call", dim, 0.05, 0.1, 0.2, 100.0, (float(x0),) * dim, 3.0, J, 0.01)


def bench_cells(
    table: str,
    seed: int = 2024,
    paths_scale: float = 1.0,
    n_train: int = 1000,
    n_lower: int | None = None,
    n_upper: int | None = None,
    basis: BasisConfig | None = None,
) -> list:
    """All cells of a table in the published order (rows by ``J`` or ``D``, then ``x0``)."""
    if table not in TABLES:
        raise ValueError(f"unknown table {table!r}; expected one of {TABLES}")
    if not paths_scale > 0:
        raise ValueError("paths_scale must be positive")
    basis = basis or BasisConfig()
    refs = BASKET_PUT_REFERENCE if table == "basket_put" else MAX_CALL_REFERENCE
    cells = []
    for index, ((row, x0), ref) in enumerate(refs.items()):
        if table == "basket_put":
            params = {"J": row, "x0": x0}
            model = _model(table, 5, x0, row)
        else:
            params = {"D": row, "x0": x0}
            model = _model(table, row, x0, MAX_CALL_EXERCISE_DATES)
        sampling = SamplingConfig(
            n_train=n_train,
            n_lower=n_lower or max(2, round(ref.n_lower * paths_scale)),
            n_upper=n_upper or max(2, round(ref.n_upper * paths_scale)),
            seed=seed,
        )
        cells.append(BenchCell(table, index, params, RunConfig(model, basis, sampling), ref))
    return cells


_FILTER_RE = re.compile(r"^\s*(\w+)\s*=\s*([\d.]+)\s*$")


def filter_cells(cells, expression: str | None):
    """Keep cells matching every ``key=value`` term of a comma-separated filter."""
    if not expression:
        return list(cells)
    terms = []
    for part in expression.split(","):
        match = _FILTER_RE.match(part)
        if not match:
            raise ValueError(f"bad cell filter term {part!r}; expected key=value")
        terms.append((match.group(1), float(match.group(2))))
    out = []
    for cell in cells:
        keep = True
        for key, value in terms:
            if key not in cell.params:
                raise ValueError(f"filter key {key!r} not in {sorted(cell.params)}")
            keep &= float(cell.params[key]) == value
        if keep:
            out.append(cell)
    return out


def _run(cell: BenchCell) -> CellReport:
    return run_cell(cell.config, cell.index, cell.label, cell.reference)


def run_bench(cells, workers: int | None = None) -> list:
    """Run cells, in parallel processes when ``workers > 1``; output order is cell order."""
    cells = list(cells)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers <= 1 or len(cells) <= 1:
        return [_run(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(_run, cells))


def with_sampling(cell: BenchCell, **changes) -> BenchCell:
    cfg = cell.config
    return replace(cell, config=replace(cfg, sampling=replace(cfg.sampling, **changes)))
