"""Mean-divergence metrics, the cross-divergence matrix and rating-shape statistics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import Sample
from .divergence import MD_COLUMNS, DivergenceKind, divergence
from .histogram import ScoreHistogram, distribution_stats
from .predictor import PredictorConfig, predict
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


def _as_rows(hists) -> np.ndarray:
    return np.stack([np.asarray(h, dtype=np.float64) for h in hists])


def per_sample_divergence(preds, truths, kind) -> np.ndarray:
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} ground truths")
    if len(preds) == 0:
        raise ValueError("mean divergence over an empty set")
    return np.atleast_1d(divergence(kind, _as_rows(truths), _as_rows(preds)))


def mean_divergence(preds, truths, kind) -> float:
    """(1/n) * sum of l(truth_i, pred_i); the sum is exactly rounded (order-free)."""
    values = per_sample_divergence(preds, truths, kind)
    return math.fsum(values.tolist()) / values.size


@dataclass
class MDReport:
    values: dict[DivergenceKind, float]
    n: int

    def row(self, columns=MD_COLUMNS) -> list[float]:
        return [self.values[k] for k in columns]


def md_report(preds, truths, kinds=MD_COLUMNS) -> MDReport:
    kinds = [DivergenceKind.parse(k) for k in kinds]
    return MDReport({k: mean_divergence(preds, truths, k) for k in kinds}, len(truths))


# ---------------------------------------------------------------------------
# training regimes


@dataclass(frozen=True)
class Regime:
    kind: DivergenceKind
    mode: str = "none"
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DivergenceKind.parse(self.kind))
        mode = {"count": "rating_count", "rs": "kurtosis"}.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if mode not in ("none", "kurtosis", "rating_count", "blend"):
            raise ValueError(f"unknown reliability mode {self.mode!r}")

    @property
    def label(self) -> str:
        name = self.kind.label
        if self.mode == "none":
            return name
        if self.mode == "kurtosis":
            return f"RS-{name}"
        if self.mode == "rating_count":
            return f"RC-{name}"
        return f"RS-{name} (lambda={self.lam:g})"


def parse_regimes(specs: Sequence[str]) -> list[Regime]:
    """Parse ``kind[:mode[:lam,lam,...]]`` items; ``all`` expands to every kind, plain and RS.

    Items may also be separated by ``;`` inside one string.
    """
    out: list[Regime] = []
    for spec in specs:
        for item in filter(None, (s.strip() for s in spec.split(";"))):
            if item == "all":
                for kind in DivergenceKind:
                    out += [Regime(kind), Regime(kind, "kurtosis")]
                continue
            parts = item.split(":")
            if len(parts) > 3:
                raise ValueError(f"bad regime {item!r}")
            kind = DivergenceKind.parse(parts[0])
            mode = parts[1] if len(parts) > 1 else "none"
            if len(parts) == 3:
                if mode != "blend":
                    raise ValueError(f"lambda values only apply to blend regimes: {item!r}")
                out += [Regime(kind, "blend", float(lam)) for lam in parts[2].split(",") if lam]
            else:
                if mode == "blend":
                    raise ValueError(f"blend regime needs lambda values: {item!r}")
                out.append(Regime(kind, mode))
    if not out:
        raise ValueError("no regimes given")
    return out


@dataclass
class MDMatrix:
    labels: list[str]
    columns: tuple[DivergenceKind, ...]
    cells: np.ndarray
    predictions: list[np.ndarray | None] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def to_tsv(self) -> str:
        lines = ["\t".join(["loss"] + [c.name for c in self.columns])]
        for label, row in zip(self.labels, self.cells):
            if label in self.failures:
                lines.append("\t".join([label] + ["failed"] * len(self.columns)))
            else:
                lines.append("\t".join([label] + [f"{v:.6f}" for v in row]))
        return "\n".join(lines) + "\n"


def _run_regime(args):
    regime, train_set, test_features, cfg, predictor = args
    run_cfg = TrainConfig(**{
        **cfg.to_dict(),
        "loss_kind": regime.kind,
        "reliability_mode": regime.mode,
        "lam": regime.lam,
    })
    report = train(train_set, run_cfg, predictor=predictor)
    return predict(report.params, test_features)


def md_matrix(
    train_set: Sequence[Sample],
    test_set: Sequence[Sample],
    regimes: Sequence[Regime],
    cfg: TrainConfig,
    predictor: PredictorConfig | None = None,
    jobs: int = 1,
) -> MDMatrix:
    """Train one model per regime and score it on every evaluation divergence.

    Each run seeds itself from ``cfg.seed``. A regime whose training fails is
    reported in ``failures`` with a NaN row.
    """
    if not train_set or not test_set:
        raise ValueError("train and test sets must be nonempty")
    if not regimes:
        raise ValueError("no regimes given")
    test_features = np.stack([s.features for s in test_set])
    truths = [s.target for s in test_set]
    jobs_args = [(r, list(train_set), test_features, cfg, predictor) for r in regimes]

    preds: list[np.ndarray | None] = []
    failures: dict[str, str] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_regime, a) for a in jobs_args]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded per row
                    outcomes.append(exc)
    else:
        outcomes = []
        for a in jobs_args:
            try:
                outcomes.append(_run_regime(a))
            except Exception as exc:  # noqa: BLE001 - recorded per row
                outcomes.append(exc)

    cells = np.full((len(regimes), len(MD_COLUMNS)), np.nan)
    for i, (regime, out) in enumerate(zip(regimes, outcomes)):
        if isinstance(out, Exception):
            log.error("regime %s failed: %s", regime.label, out)
            failures[regime.label] = str(out)
            preds.append(None)
            continue
        preds.append(out)
        cells[i] = md_report(list(out), truths).row()
    return MDMatrix([r.label for r in regimes], MD_COLUMNS, cells, preds, failures)


# ---------------------------------------------------------------------------
# subjectiveness statistics


@dataclass
class BoxSummary:
    """Tukey boxplot: whiskers at the most extreme points within 1.5 IQR."""

    count: int
    lower_whisker: float
    q1: float
    median: float
    q3: float
    upper_whisker: float
    outliers: list[float]


def box_summary(values: Sequence[float]) -> BoxSummary:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("box summary of an empty group")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = v[(v < lo_fence) | (v > hi_fence)]
    return BoxSummary(
        int(v.size),
        float(min(inside.min(), q1)),
        float(q1),
        float(med),
        float(q3),
        float(max(inside.max(), q3)),
        outliers.tolist(),
    )


@dataclass
class SubjectivenessReport:
    mean_edges: np.ndarray
    std_edges: np.ndarray
    grid: np.ndarray  # counts, rows = mean bins, cols = std bins
    skewness_by_mean: dict[int, BoxSummary]
    kurtosis_by_mean: dict[int, BoxSummary]
    skew_edges: np.ndarray
    mean_by_skew: dict[int, BoxSummary]
    median_by_skew: dict[int, BoxSummary]
    n_valid: int
    n_degenerate: int

    def bin_label(self, edges: np.ndarray, i: int) -> str:
        return f"[{edges[i]:g},{edges[i + 1]:g})"


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, edges.size - 2)


def _edges(lo: float, hi: float, width: float) -> np.ndarray:
    start = math.floor(lo / width) * width
    # values equal to ``hi`` fall in the last bin (see _bin_index)
    n = max(1, math.ceil((hi - start) / width - 1e-12))
    return start + width * np.arange(n + 1)


def subjectiveness_report(
    hists: Sequence[ScoreHistogram],
    mean_bin_width: float = 1.0,
    std_bin_width: float = 0.25,
    skew_bin_width: float = 0.5,
) -> SubjectivenessReport:
    """Plot-ready statistics of a population of rating histograms.

    Zero-variance histograms are counted in ``n_degenerate`` and left out.
    """
    if len(hists) == 0:
        raise ValueError("empty population")
    stats = [distribution_stats(h) for h in hists]
    valid = [s for s in stats if not s.degenerate]
    n_degenerate = len(stats) - len(valid)
    if not valid:
        raise ValueError("every histogram is degenerate")

    scale = hists[0].scale
    mean = np.array([s.mean for s in valid])
    std = np.array([s.std for s in valid])
    skew = np.array([s.skewness for s in valid])
    kurt = np.array([s.kurtosis for s in valid])
    median = np.array([s.median for s in valid])

    mean_edges = _edges(scale.level_values[0], scale.level_values[-1], mean_bin_width)
    std_edges = _edges(0.0, max(float(std.max()), std_bin_width), std_bin_width)
    skew_edges = _edges(float(skew.min()), float(skew.max()), skew_bin_width)

    mi = _bin_index(mean, mean_edges)
    si = _bin_index(std, std_edges)
    ki = _bin_index(skew, skew_edges)
    grid = np.zeros((mean_edges.size - 1, std_edges.size - 1), dtype=int)
    np.add.at(grid, (mi, si), 1)

    def grouped(index, values, n_bins):
        return {b: box_summary(values[index == b]) for b in range(n_bins) if np.any(index == b)}

    return SubjectivenessReport(
        mean_edges=mean_edges,
        std_edges=std_edges,
        grid=grid,
        skewness_by_mean=grouped(mi, skew, mean_edges.size - 1),
        kurtosis_by_mean=grouped(mi, kurt, mean_edges.size - 1),
        skew_edges=skew_edges,
        mean_by_skew=grouped(ki, mean, skew_edges.size - 1),
        median_by_skew=grouped(ki, median, skew_edges.size - 1),
        n_valid=len(valid),
        n_degenerate=n_degenerate,
    )


def _box_rows(report, groups: dict[int, BoxSummary], edges, key: str) -> list[str]:
    rows = [f"{key}\tcount\tlower_whisker\tq1\tmedian\tq3\tupper_whisker\toutliers"]
    for b, s in sorted(groups.items()):
        out = ",".join(f"{v:.6g}" for v in s.outliers)
        rows.append(
            f"{report.bin_label(edges, b)}\t{s.count}\t{s.lower_whisker:.6g}\t{s.q1:.6g}\t"
            f"{s.median:.6g}\t{s.q3:.6g}\t{s.upper_whisker:.6g}\t{out}"
        )
    return rows


def report_tables(report: SubjectivenessReport) -> dict[str, str]:
    """Tab-separated tables keyed by file stem."""
    grid_rows = ["mean\\std\t" + "\t".join(
        report.bin_label(report.std_edges, j) for j in range(report.std_edges.size - 1)
    )]
    for i, row in enumerate(report.grid):
        grid_rows.append(report.bin_label(report.mean_edges, i) + "\t" + "\t".join(map(str, row)))
    return {
        "mean_std_grid": "\n".join(grid_rows) + "\n",
        "skewness_by_mean": "\n".join(
            _box_rows(report, report.skewness_by_mean, report.mean_edges, "mean_bin")) + "\n",
        "kurtosis_by_mean": "\n".join(
            _box_rows(report, report.kurtosis_by_mean, report.mean_edges, "mean_bin")) + "\n",
        "mean_by_skewness": "\n".join(
            _box_rows(report, report.mean_by_skew, report.skew_edges, "skew_bin")) + "\n",
        "median_by_skewness": "\n".join(
            _box_rows(report, report.median_by_skew, report.skew_edges, "skew_bin")) + "\n",
        "summary": f"valid\t{report.n_valid}\ndegenerate\t{report.n_degenerate}\n",
    }
