"""Cohort evaluation report: aggregation, confidence intervals, emission.

The report mirrors the standard result-table layout: SUVR ICC,
CMAE x10^3, congruence index and Delta-SUVR x100 with 95% confidence
intervals, plus per-subject breakdowns.  Emits CSV (one row per subject
per metric), a JSON summary and a plain-text table.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .metrics import (
    asymmetry_index,
    cmae,
    congruence_index,
    delta_suvr_stats,
    icc,
    icc_confidence_interval,
    roi_suvr,
    t_confidence_interval,
)
from .volume_io import RoiLabelMap, Volume


@dataclass
class SubjectMetrics:
    subject_id: str
    congruence: float
    cmae: float
    delta_suvr_mean: float
    delta_suvr_std: float


@dataclass
class MetricsReport:
    subjects: list = field(default_factory=list)  # SubjectMetrics rows
    congruence: float = float("nan")
    cmae_mean: float = float("nan")
    delta_suvr_mean: float = float("nan")
    delta_suvr_std: float = float("nan")
    suvr_icc: float = float("nan")
    n_icc_units: int = 0
    intervals: dict = field(default_factory=dict)  # metric -> (lo, hi)

    def summary_dict(self) -> dict:
        """JSON-ready summary with the scaled columns used in result tables."""

        def entry(value, key, scale=1.0):
            out = {"value": value * scale}
            if key in self.intervals:
                lo, hi = self.intervals[key]
                out["ci95"] = [lo * scale, hi * scale]
            return out

        return {
            "n_subjects": len(self.subjects),
            "aggregates": {
                "suvr_icc": entry(self.suvr_icc, "suvr_icc"),
                "cmae_x1000": entry(self.cmae_mean, "cmae", 1000.0),
                "congruence_index": entry(self.congruence, "congruence"),
                "delta_suvr_mean_x100": entry(self.delta_suvr_mean, "delta_suvr_mean", 100.0),
                "delta_suvr_std_x100": entry(self.delta_suvr_std, "delta_suvr_std", 100.0),
            },
            "per_subject": [
                {
                    "subject": s.subject_id,
                    "congruence": s.congruence,
                    "cmae": s.cmae,
                    "delta_suvr_mean": s.delta_suvr_mean,
                    "delta_suvr_std": s.delta_suvr_std,
                }
                for s in self.subjects
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject", "metric", "value"])
            for s in self.subjects:
                writer.writerow([s.subject_id, "congruence", f"{s.congruence:.10g}"])
                writer.writerow([s.subject_id, "cmae", f"{s.cmae:.10g}"])
                writer.writerow([s.subject_id, "delta_suvr_mean", f"{s.delta_suvr_mean:.10g}"])
                writer.writerow([s.subject_id, "delta_suvr_std", f"{s.delta_suvr_std:.10g}"])

    def to_text(self) -> str:
        def fmt(value, key, scale=1.0):
            text = f"{value * scale:.3f}"
            if key in self.intervals:
                lo, hi = self.intervals[key]
                text += f" [{lo * scale:.3f}, {hi * scale:.3f}]"
            return text

        lines = [
            f"subjects: {len(self.subjects)}   icc units: {self.n_icc_units}",
            f"SUVR ICC          : {fmt(self.suvr_icc, 'suvr_icc')}",
            f"CMAE x10^3        : {fmt(self.cmae_mean, 'cmae', 1000.0)}",
            f"Congruence Index  : {fmt(self.congruence, 'congruence')}",
            f"dSUVR Mean x100   : {fmt(self.delta_suvr_mean, 'delta_suvr_mean', 100.0)}",
            f"dSUVR STD  x100   : {fmt(self.delta_suvr_std, 'delta_suvr_std', 100.0)}",
        ]
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs, labels: RoiLabelMap) -> MetricsReport:
    """Full metric suite over (subject_id, synthetic, acquired) volume pairs.

    Confidence intervals: t-distribution over per-subject values for
    congruence/CMAE/Delta-SUVR (when >= 2 subjects), F-distribution for
    the ICC.  The headline congruence index and CMAE are the joint
    cohort-level values; ICC pools all subject x ROI SUVR pairs.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no volume pairs to evaluate")

    report = MetricsReport()
    synth_records = []
    acq_records = []
    icc_units = []
    for subject_id, synth, acquired in pairs:
        table_s = roi_suvr(synth, labels)
        table_a = roi_suvr(acquired, labels)
        rec_s = asymmetry_index(table_s)
        rec_a = asymmetry_index(table_a)
        synth_records.append(rec_s)
        acq_records.append(rec_a)
        for name, val_a in table_a.values.items():
            if name in table_s.values:
                icc_units.append((val_a.combined, table_s.values[name].combined))
        d = delta_suvr_stats(synth, acquired, labels)
        report.subjects.append(
            SubjectMetrics(
                subject_id=str(subject_id),
                congruence=congruence_index([rec_s], [rec_a]),
                cmae=cmae([rec_s], [rec_a], labels),
                delta_suvr_mean=d.mean_abs,
                delta_suvr_std=d.std,
            )
        )

    report.congruence = congruence_index(synth_records, acq_records)
    report.cmae_mean = cmae(synth_records, acq_records, labels)
    report.delta_suvr_mean = float(np.mean([s.delta_suvr_mean for s in report.subjects]))
    report.delta_suvr_std = float(np.mean([s.delta_suvr_std for s in report.subjects]))
    units = np.asarray(icc_units, dtype=np.float64)
    report.n_icc_units = len(units)
    if len(units) >= 3:
        report.suvr_icc = icc(units)
        report.intervals["suvr_icc"] = icc_confidence_interval(units)
    if len(report.subjects) >= 2:
        for key, values in (
            ("congruence", [s.congruence for s in report.subjects]),
            ("cmae", [s.cmae for s in report.subjects]),
            ("delta_suvr_mean", [s.delta_suvr_mean for s in report.subjects]),
            ("delta_suvr_std", [s.delta_suvr_std for s in report.subjects]),
        ):
            report.intervals[key] = t_confidence_interval(values)
    return report


def cohort_mean_volume(volumes) -> Volume:
    """Voxel-wise mean image of a cohort; the no-model reference baseline."""
    volumes = list(volumes)
    if not volumes:
        raise ValueError("no volumes")
    dims = volumes[0].dims
    for v in volumes:
        if v.dims != dims:
            raise ValueError(f"dims mismatch: {v.dims} vs {dims}")
    data = np.mean([v.data.astype(np.float64) for v in volumes], axis=0)
    return Volume(data, volumes[0].spacing, "arbitrary")
