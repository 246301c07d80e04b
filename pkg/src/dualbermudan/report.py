"""Running a configured pricing and formatting its results."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

from . import __version__
from .config import RunConfig
from .engine import BoundEstimate, DualMartingaleEstimator, VarianceDiagnostics
from .stochastic import make_stream, simulate_gbm, simulate_gbm_blocks

__all__ = ["Reference", "CellReport", "run_cell", "stream_ids", "format_reports", "CSV_FIELDS"]

STREAMS_PER_CELL = 4


def stream_ids(cell_index: int) -> dict:
    """Disjoint stream ids of one cell: training, lower-bound and upper-bound paths."""
    base = STREAMS_PER_CELL * int(cell_index)
    return {"train": base, "lower": base + 1, "upper": base + 2}


@dataclass(frozen=True)
class Reference:
    """Published bounds of a benchmark cell, used for annotation only.

    ``digits`` records how many decimals the lower and upper values were printed with.
    """

    lower: float
    lower_se: float
    upper: float
    upper_se: float
    interval: tuple
    digits: tuple = (3, 3)
    n_lower: int = 300_000
    n_upper: int = 100_000

    def rounding(self, kind: str) -> float:
        """Half a unit in the last printed decimal of the lower or upper value."""
        return 0.5 * 10.0 ** -self.digits[0 if kind == "lower" else 1]


@dataclass
class CellReport:
    label: str
    config: RunConfig
    lower: BoundEstimate
    upper: BoundEstimate
    diagnostics: VarianceDiagnostics
    timings: dict = field(default_factory=dict)
    reference: Reference | None = None
    cell_index: int = 0

    def numeric_record(self) -> dict:
        """Everything except wall-clock timings; identical across reruns."""
        rec = {
            "label": self.label,
            "cell_index": self.cell_index,
            "config_hash": self.config.config_hash,
            "config": self.config.canonical(),
            "library_version": __version__,
            "lower": _bound_dict(self.lower),
            "upper": _bound_dict(self.upper),
            "diagnostics": self.diagnostics.to_dict(),
        }
        if self.reference is not None:
            ref = self.reference
            rec["reference"] = {
                "lower": ref.lower,
                "lower_se": ref.lower_se,
                "upper": ref.upper,
                "upper_se": ref.upper_se,
                "interval": list(ref.interval),
            }
        return rec

    def record(self) -> dict:
        rec = self.numeric_record()
        rec["timings"] = dict(self.timings)
        return rec


def _bound_dict(b: BoundEstimate) -> dict:
    return {"estimate": b.estimate, "stderr": b.stderr, "n_samples": b.n_samples, "seed": b.seed, "stream_id": b.stream_id}


def run_cell(config: RunConfig, cell_index: int = 0, label: str = "", reference: Reference | None = None) -> CellReport:
    """Train on ``n_train`` paths, then estimate both bounds on independent fresh paths."""
    model = config.model.gbm()
    grid = config.model.grid()
    s = config.sampling
    ids = stream_ids(cell_index)
    timings = {}

    start = time.perf_counter()
    train = simulate_gbm(model, grid, s.n_train, make_stream(s.seed, ids["train"]))
    timings["simulate"] = time.perf_counter() - start

    start = time.perf_counter()
    est = DualMartingaleEstimator(
        model,
        grid,
        degree=config.basis.degree,
        cross_terms=config.basis.cross_terms,
        ridge=config.basis.ridge,
        standardize=config.basis.standardize,
        exercise_policy=config.basis.exercise_policy,
    ).fit(train)
    timings["train"] = time.perf_counter() - start

    start = time.perf_counter()
    lower = est.lower_bound(simulate_gbm_blocks(model, grid, s.n_lower, make_stream(s.seed, ids["lower"]), s.block_size))
    timings["lower"] = time.perf_counter() - start

    start = time.perf_counter()
    upper = est.upper_bound(simulate_gbm_blocks(model, grid, s.n_upper, make_stream(s.seed, ids["upper"]), s.block_size))
    timings["upper"] = time.perf_counter() - start

    return CellReport(label or config.model.payoff, config, lower, upper, est.diagnostics_, timings, reference, cell_index)


# --------------------------------------------------------------------------- formatting

CSV_FIELDS = [
    "label",
    "config_hash",
    "seed",
    "lower",
    "lower_se",
    "n_lower",
    "upper",
    "upper_se",
    "n_upper",
    "theta0_variance",
    "flagged_dates",
    "ref_lower",
    "ref_lower_se",
    "ref_upper",
    "ref_upper_se",
    "ref_interval",
]


def _csv_row(rep: CellReport) -> dict:
    ref = rep.reference
    return {
        "label": rep.label,
        "config_hash": rep.config.config_hash,
        "seed": rep.config.sampling.seed,
        "lower": repr(rep.lower.estimate),
        "lower_se": repr(rep.lower.stderr),
        "n_lower": rep.lower.n_samples,
        "upper": repr(rep.upper.estimate),
        "upper_se": repr(rep.upper.stderr),
        "n_upper": rep.upper.n_samples,
        "theta0_variance": repr(rep.diagnostics.theta0_variance),
        "flagged_dates": " ".join(map(str, rep.diagnostics.flagged_dates)),
        "ref_lower": "" if ref is None else ref.lower,
        "ref_lower_se": "" if ref is None else ref.lower_se,
        "ref_upper": "" if ref is None else ref.upper,
        "ref_upper_se": "" if ref is None else ref.upper_se,
        "ref_interval": "" if ref is None else f"[{ref.interval[0]}, {ref.interval[1]}]",
    }


def _fmt(b: BoundEstimate) -> str:
    return f"{b.estimate:.4f} ({b.stderr:.4f})"


def _table(reports) -> str:
    header = f"{'cell':<18}{'lower (se)':>22}{'upper (se)':>22}{'reference low / up':>30}{'interval':>20}{'seconds':>10}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        ref = rep.reference
        ref_txt = "" if ref is None else f"{ref.lower:.4f} / {ref.upper:.4f}"
        interval = "" if ref is None else f"[{ref.interval[0]}, {ref.interval[1]}]"
        secs = sum(rep.timings.values())
        lines.append(f"{rep.label:<18}{_fmt(rep.lower):>22}{_fmt(rep.upper):>22}{ref_txt:>30}{interval:>20}{secs:>10.1f}")
        flagged = rep.diagnostics.flagged_dates
        if flagged:
            lines.append(f"  warning: fitted increments not mean-zero at dates {flagged}")
    return "\n".join(lines) + "\n"


def format_reports(reports, fmt: str, timings: bool = True) -> str:
    """Render reports as ``table``, ``csv`` or ``records`` (one JSON object per line).

    CSV never contains timings; records contain them unless ``timings=False``.
    """
    reports = list(reports)
    if fmt == "table":
        return _table(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            writer.writerow(_csv_row(rep))
        return buf.getvalue()
    if fmt == "records":
        out = []
        for rep in reports:
            rec = rep.record() if timings else rep.numeric_record()
            out.append(json.dumps(_finite(rec), sort_keys=True))
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj
