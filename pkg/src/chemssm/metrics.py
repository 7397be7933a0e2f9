"""Percent relative-L2 error over time, per sample and variable.

The base entry for sample j and variable i is

    100 * ||pred - truth||_2 / ||truth||_2

with norms taken along the time axis.  The clipped variant floors each
denominator at eps_i = 1e-3 times the sample-mean truth norm of variable i,
which tames near-zero trace species without changing well-scaled entries.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = ["ErrorReport", "rel_l2", "aggregate", "write_report_json", "write_report_csv"]


@dataclass
class ErrorReport:
    per_sample: np.ndarray            # [samples, vars], percent
    variables: list[str] | None = None
    clipped: bool = False
    eps: np.ndarray | None = None     # [vars], denominators floor when clipped

    @property
    def per_variable(self) -> np.ndarray:
        return self.per_sample.mean(axis=0)

    @property
    def overall(self) -> float:
        return float(self.per_variable.mean())


def rel_l2(pred: np.ndarray, truth: np.ndarray, clip: bool = False,
           variables: list[str] | None = None) -> ErrorReport:
    """Error report for aligned ``[samples, time, vars]`` arrays.

    Without clipping a zero truth norm yields an infinite entry rather than
    an exception.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if variables is not None and len(variables) != pred.shape[2]:
        raise ValueError("variable names do not match the last axis")
    num = np.linalg.norm(pred - truth, axis=1)
    den = np.linalg.norm(truth, axis=1)
    eps = None
    if clip:
        eps = 1e-3 * den.mean(axis=0)
        den = np.maximum(den, eps)
    out = np.full_like(num, np.inf)
    np.divide(num, den, out=out, where=den > 0.0)
    return ErrorReport(per_sample=100.0 * out, variables=variables, clipped=clip, eps=eps)


def aggregate(per_sample: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-variable sample means and their grand mean, from a percent matrix."""
    per_sample = np.asarray(per_sample, dtype=np.float64)
    if per_sample.ndim != 2:
        raise ValueError(f"expected [samples, vars], got shape {per_sample.shape}")
    per_variable = per_sample.mean(axis=0)
    return per_variable, float(per_variable.mean())


def write_report_json(path, report: ErrorReport) -> None:
    obj = {
        "clipped": report.clipped,
        "per_variable": report.per_variable.tolist(),
        "overall": report.overall,
    }
    if report.variables is not None:
        obj["variables"] = list(report.variables)
    if report.eps is not None:
        obj["eps"] = report.eps.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report: ErrorReport) -> None:
    """Per-sample matrix as CSV; raw data for violin-style plots."""
    names = report.variables or [f"var{i}" for i in range(report.per_sample.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + list(names))
        for j, row in enumerate(report.per_sample):
            writer.writerow([j] + [repr(float(v)) for v in row])
