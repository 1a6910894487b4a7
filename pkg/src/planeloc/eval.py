"""Test-time plane metrics, aggregation and comparison tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .geometry import Plane, dihedral_angle, origin_distance_diff, slice_volume, ssim
from .phantom import PhantomCase

METRICS = ("ang", "dis", "ssim")
METRIC_TITLES = {"ang": "Ang (deg)", "dis": "Dis (vox)", "ssim": "SSIM", "sad": "SAD"}


class EmptyInputError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


def evaluate_case(pred: Sequence[Plane], case: PhantomCase, size: int = 64) -> list[dict]:
    """Per plane: Ang, Dis, SSIM between pred and gt slices, and SAD = Ang + Dis."""
    out = []
    for p, g in zip(pred, case.gt_planes):
        ang = dihedral_angle(p, g)
        dis = origin_distance_diff(p, g)
        s = ssim(slice_volume(case.volume, p, size), slice_volume(case.volume, g, size))
        out.append(dict(ang=ang, dis=dis, ssim=s, sad=ang + dis))
    return out


@dataclass
class MetricsReport:
    label: str
    mean: dict[str, np.ndarray]        # metric -> (planes,)
    std: dict[str, np.ndarray]
    avg_mean: dict[str, float]
    avg_std: dict[str, float]
    records: list = field(repr=False)

    @property
    def n_cases(self) -> int:
        return len(self.records)


def aggregate(records: Sequence[Sequence[dict]], label: str = "") -> MetricsReport:
    """Population mean/std per plane; the Avg row pools all (case, plane) values."""
    if len(records) == 0:
        raise EmptyInputError("no records to aggregate")
    metrics = [m for m in ("ang", "dis", "ssim", "sad") if m in records[0][0]]
    mean, std, am, asd = {}, {}, {}, {}
    for m in metrics:
        vals = np.array([[r[m] for r in case] for case in records], dtype=np.float64)
        mean[m] = vals.mean(axis=0)
        std[m] = vals.std(axis=0)
        am[m] = float(vals.mean())
        asd[m] = float(vals.std())
    return MetricsReport(label, mean, std, am, asd, [list(c) for c in records])


def paired_ttest(a, b, return_flag: bool = False):
    """Two-sided paired t-test p-value.

    With zero variance of the differences, p = 1 when all differences are
    zero and p = 0 otherwise; ``return_flag`` also reports that case.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"{a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    mean = d.mean()
    degenerate = sd == 0 or sd <= 1e-14 * max(1.0, abs(mean))
    if degenerate:
        p = 1.0 if np.all(d == 0) else 0.0
    else:
        t = mean / (sd / np.sqrt(n))
        p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return (p, degenerate) if return_flag else p


# -- reports ---------------------------------------------------------------

def write_report_csv(path, reports: Sequence[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "metric", "plane", "mean", "std", "n_cases"])
        for r in reports:
            for m in r.mean:
                for k in range(len(r.mean[m])):
                    w.writerow([r.label, m, k + 1, repr(float(r.mean[m][k])), repr(float(r.std[m][k])), r.n_cases])
                w.writerow([r.label, m, "Avg", repr(r.avg_mean[m]), repr(r.avg_std[m]), r.n_cases])


def format_table(reports: Sequence[MetricsReport], metrics=("ang", "dis", "ssim")) -> str:
    """Plain-text table, one block per metric, rows = variants, columns = planes + Avg."""
    lines = []
    n_planes = len(next(iter(reports[0].mean.values())))
    head = ["Variant"] + [f"Plane {k + 1}" for k in range(n_planes)] + ["Avg"]
    for m in metrics:
        rows = [head]
        for r in reports:
            fmt = "{:.3f}±{:.3f}" if m == "ssim" else "{:.2f}±{:.2f}"
            cells = [fmt.format(r.mean[m][k], r.std[m][k]) for k in range(n_planes)]
            rows.append([r.label] + cells + [fmt.format(r.avg_mean[m], r.avg_std[m])])
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        lines.append(METRIC_TITLES[m])
        for row in rows:
            lines.append("  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip())
        lines.append("")
    lines.append("mean ± std over test cases; std is the population standard deviation")
    return "\n".join(lines) + "\n"


def write_report_text(path, reports: Sequence[MetricsReport]) -> None:
    Path(path).write_text(format_table(reports))


def parameter_count(module) -> int:
    return int(sum(p.numel() for p in module.parameters()))
