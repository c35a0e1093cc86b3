"""Fairness audit over model scores.

The report slices scores by each sensitive attribute (race, gender,
age group), computes per-group discrimination/calibration/error-rate
metrics at the operating threshold, and summarizes cross-group
disparity three ways: coefficient of variation of false-negative
rates, mean pairwise earth mover's distance between group score
distributions within each label stratum, and the demographic-parity
gap (spread of alarm rates). ``alignment`` is the mean of the two
stratum EMD values; it is the quantity adversarial training is meant
to shrink and the quantity model selection minimizes.

Score histograms use 50 fixed-width bins on [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import UndefinedMetricError, ValidationError
from .metrics import (
    ConfusionAtThreshold,
    auc_prc,
    auc_roc,
    brier_score,
    coefficient_of_variation,
    confusion_at,
    logger,
    mean_pairwise_emd,
)
from .records import AGE_BIN_LABELS, GENDERS, RACES

N_HISTOGRAM_BINS = 50

GROUP_LABELS = {
    "race": RACES,
    "gender": GENDERS,
    "age": AGE_BIN_LABELS,
}


@dataclass
class GroupMetrics:
    attribute: str
    group: int
    label: str
    n: int
    n_pos: int
    auc: Optional[float]
    brier: float
    confusion: ConfusionAtThreshold


@dataclass
class AttributeReport:
    attribute: str
    groups: list[GroupMetrics]
    cv_fnr: Optional[float]
    cv_fpr: Optional[float]
    emd_y0: Optional[float]
    emd_y1: Optional[float]
    alignment: Optional[float]
    dp_gap: Optional[float]
    # (group id, label value) -> counts over the 50 fixed bins
    histograms: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


@dataclass
class FairnessReport:
    threshold: float
    n: int
    n_pos: int
    auc: Optional[float]
    auc_pr: Optional[float]
    brier: float
    confusion: ConfusionAtThreshold
    attributes: list[AttributeReport]

    def attribute(self, name: str) -> AttributeReport:
        for a in self.attributes:
            if a.attribute == name:
                return a
        raise ValidationError(f"attribute: no report for {name!r}")


def _safe_auc(y: np.ndarray, s: np.ndarray) -> Optional[float]:
    try:
        return auc_roc(y, s)
    except UndefinedMetricError:
        return None


def score_histogram(scores: np.ndarray) -> np.ndarray:
    """Counts over 50 equal bins of [0, 1]; scores at 1.0 land in the last."""
    edges = np.linspace(0.0, 1.0, N_HISTOGRAM_BINS + 1)
    counts, _ = np.histogram(np.clip(scores, 0.0, 1.0), bins=edges)
    return counts.astype(np.int64)


def alignment_score(
    scores: np.ndarray, y: np.ndarray, group_ids: np.ndarray, n_groups: int
) -> Optional[float]:
    """Mean of the label-stratified mean-pairwise EMDs for one attribute."""
    strata = []
    for label in (0, 1):
        samples = [
            scores[(group_ids == g) & (y == label)] for g in range(n_groups)
        ]
        strata.append(mean_pairwise_emd(samples))
    if any(v is None for v in strata):
        return None
    return 0.5 * (strata[0] + strata[1])


def fairness_report(
    scores,
    y_true,
    groups: dict[str, np.ndarray],
    threshold: float,
) -> FairnessReport:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise ValidationError("scores and labels must have the same length")
    attributes: list[AttributeReport] = []
    for attr, labels in GROUP_LABELS.items():
        if attr not in groups:
            continue
        gid = np.asarray(groups[attr], dtype=np.int64).ravel()
        if gid.shape != y.shape:
            raise ValidationError(f"groups[{attr!r}] length mismatch")
        group_rows: list[GroupMetrics] = []
        fnrs: list[Optional[float]] = []
        fprs: list[Optional[float]] = []
        rates: list[float] = []
        hists: dict[tuple[int, int], np.ndarray] = {}
        emd_samples = {0: [], 1: []}
        for g, label in enumerate(labels):
            mask = gid == g
            for stratum in (0, 1):
                sub = s[mask & (y == stratum)]
                hists[(g, stratum)] = score_histogram(sub)
                emd_samples[stratum].append(sub)
            if not mask.any():
                logger.warning("fairness_report: empty group %s=%s", attr, label)
                continue
            sg = s[mask]
            yg = y[mask]
            conf = confusion_at(yg, sg, threshold)
            group_rows.append(
                GroupMetrics(
                    attribute=attr,
                    group=g,
                    label=label,
                    n=int(mask.sum()),
                    n_pos=int(yg.sum()),
                    auc=_safe_auc(yg, sg),
                    brier=brier_score(yg, sg),
                    confusion=conf,
                )
            )
            fnrs.append(conf.fnr)
            fprs.append(conf.fpr)
            rates.append(conf.positive_rate)

        def safe_cv(values: list[Optional[float]]) -> Optional[float]:
            try:
                return coefficient_of_variation(values)
            except UndefinedMetricError:
                return None

        emd_y0 = mean_pairwise_emd(emd_samples[0])
        emd_y1 = mean_pairwise_emd(emd_samples[1])
        alignment = (
            0.5 * (emd_y0 + emd_y1)
            if emd_y0 is not None and emd_y1 is not None
            else None
        )
        attributes.append(
            AttributeReport(
                attribute=attr,
                groups=group_rows,
                cv_fnr=safe_cv(fnrs) if fnrs else None,
                cv_fpr=safe_cv(fprs) if fprs else None,
                emd_y0=emd_y0,
                emd_y1=emd_y1,
                alignment=alignment,
                dp_gap=(max(rates) - min(rates)) if rates else None,
                histograms=hists,
            )
        )

    overall_conf = confusion_at(y, s, threshold)
    try:
        overall_pr = auc_prc(y, s)
    except UndefinedMetricError:
        overall_pr = None
    return FairnessReport(
        threshold=threshold,
        n=len(y),
        n_pos=int(y.sum()),
        auc=_safe_auc(y, s),
        auc_pr=overall_pr,
        brier=brier_score(y, s),
        confusion=overall_conf,
        attributes=attributes,
    )


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "NA" if value is None else f"{value:.{digits}f}"


def _raw(value: Optional[float]) -> str:
    return "NA" if value is None else repr(float(value))


def report_to_text(report: FairnessReport) -> str:
    lines = []
    lines.append(f"threshold: {report.threshold}")
    lines.append(
        f"overall: n={report.n} positives={report.n_pos} "
        f"auc={_fmt(report.auc)} auc_pr={_fmt(report.auc_pr)} "
        f"brier={_fmt(report.brier, 5)}"
    )
    c = report.confusion
    lines.append(
        f"overall rates: tpr={_fmt(c.tpr)} fnr={_fmt(c.fnr)} "
        f"fpr={_fmt(c.fpr)} ppv={_fmt(c.ppv)} alarm={_fmt(c.positive_rate)}"
    )
    for attr in report.attributes:
        lines.append("")
        lines.append(
            f"[{attr.attribute}] cv_fnr={_fmt(attr.cv_fnr)} "
            f"cv_fpr={_fmt(attr.cv_fpr)} emd_y0={_fmt(attr.emd_y0, 6)} "
            f"emd_y1={_fmt(attr.emd_y1, 6)} "
            f"alignment={_fmt(attr.alignment, 6)} dp_gap={_fmt(attr.dp_gap)}"
        )
        header = (
            f"  {'group':<10}{'n':>6} {'pos':>6}"
            f"{'auc':>9}{'brier':>9}{'tpr':>8}{'fnr':>8}"
            f"{'fpr':>8}{'ppv':>8}{'alarm':>8}"
        )
        lines.append(header)
        for g in attr.groups:
            gc = g.confusion
            lines.append(
                f"  {g.label:<10}{g.n:>6} {g.n_pos:>6}"
                f"{_fmt(g.auc):>9}{_fmt(g.brier, 5):>9}{_fmt(gc.tpr):>8}"
                f"{_fmt(gc.fnr):>8}{_fmt(gc.fpr):>8}{_fmt(gc.ppv):>8}"
                f"{_fmt(gc.positive_rate):>8}"
            )
    lines.append("")
    return "\n".join(lines)


def write_report_files(out_dir: Path | str, report: FairnessReport):
    """report.txt plus three CSVs with full-precision values."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "report.txt").write_text(report_to_text(report), encoding="utf-8")

    with open(out / "group_metrics.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "attribute", "group", "label", "n", "n_pos", "auc", "brier",
                "tp", "fp", "tn", "fn", "tpr", "fnr", "fpr", "tnr", "ppv",
                "positive_rate",
            ]
        )
        for attr in report.attributes:
            for g in attr.groups:
                c = g.confusion
                w.writerow(
                    [
                        attr.attribute, g.group, g.label, g.n, g.n_pos,
                        _raw(g.auc), _raw(g.brier), c.tp, c.fp, c.tn, c.fn,
                        _raw(c.tpr), _raw(c.fnr), _raw(c.fpr), _raw(c.tnr),
                        _raw(c.ppv), _raw(c.positive_rate),
                    ]
                )

    with open(out / "attribute_metrics.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["attribute", "cv_fnr", "cv_fpr", "emd_y0", "emd_y1",
             "alignment", "dp_gap"]
        )
        for attr in report.attributes:
            w.writerow(
                [
                    attr.attribute, _raw(attr.cv_fnr), _raw(attr.cv_fpr),
                    _raw(attr.emd_y0), _raw(attr.emd_y1),
                    _raw(attr.alignment), _raw(attr.dp_gap),
                ]
            )

    edges = np.linspace(0.0, 1.0, N_HISTOGRAM_BINS + 1)
    for attr in report.attributes:
        name = f"histogram_{attr.attribute}.csv"
        with open(out / name, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["group", "y", "bin_left", "bin_right", "count"])
            for (g, stratum), counts in sorted(attr.histograms.items()):
                for i, count in enumerate(counts):
                    w.writerow(
                        [
                            g, stratum,
                            repr(float(edges[i])), repr(float(edges[i + 1])),
                            int(count),
                        ]
                    )

    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["n", "n_pos", "threshold", "auc", "auc_pr", "brier",
             "tpr", "fnr", "fpr", "ppv", "positive_rate"]
        )
        c = report.confusion
        w.writerow(
            [
                report.n, report.n_pos, repr(report.threshold),
                _raw(report.auc), _raw(report.auc_pr), _raw(report.brier),
                _raw(c.tpr), _raw(c.fnr), _raw(c.fpr), _raw(c.ppv),
                _raw(c.positive_rate),
            ]
        )
