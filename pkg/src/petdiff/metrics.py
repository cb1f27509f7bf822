"""Clinical PET evaluation metrics.

SUVR tables use the cerebellum as reference region; hemispheric
asymmetry is quantified per lateralized ROI as

    AI = (SUVR_left - SUVR_right) / (SUVR_left + SUVR_right)

so that a negative AI indicates left-sided hypometabolism.  Cohort-level
agreement between synthetic and acquired images is summarized by the
congruence index (fraction of subject x ROI pairs whose AIs share sign),
the area-weighted congruence mean absolute error, voxel-wise Delta-SUVR
statistics, and a one-way random-effects ICC over paired SUVRs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .errors import DomainError
from .volume_io import RoiLabelMap, Volume

REFERENCE_ROI = "cerebellum"


class SuvrValue(NamedTuple):
    left: float | None
    right: float | None
    combined: float


@dataclass
class SuvrTable:
    """Per-ROI SUVR values of one image, split by side where lateralized."""

    values: dict  # name -> SuvrValue
    reference_mean: float
    missing: tuple = ()  # (name, side) pairs skipped as empty


@dataclass
class AsymmetryRecord:
    """Per-ROI asymmetry indices of one subject (lateralized ROIs only)."""

    values: dict = field(default_factory=dict)  # name -> AI


def roi_suvr(pet: Volume, labels: RoiLabelMap) -> SuvrTable:
    """SUVR per ROI: mean intensity over the ROI / cerebellum mean.

    Lateralized ROIs get per-side values plus the combined value; empty
    ROIs are recorded as missing with a warning.  A missing or
    nonpositive-mean cerebellum is an error since every value divides by
    it.
    """
    if pet.dims != labels.dims:
        raise ValueError(f"image dims {pet.dims} != label dims {labels.dims}")
    data = pet.data.astype(np.float64)
    ref_mask = labels.mask(REFERENCE_ROI)
    if not ref_mask.any():
        raise DomainError("reference region (cerebellum) is empty")
    ref_mean = float(data[ref_mask].mean())
    if ref_mean <= 0.0:
        raise DomainError(f"reference region mean must be positive, got {ref_mean}")

    sides_by_name = {}
    for entry in labels.table.values():
        sides_by_name.setdefault(entry.name, set()).add(entry.side)

    values = {}
    missing = []
    for name in labels.roi_names():
        sides = sides_by_name[name]
        if {"left", "right"} <= sides:
            per_side = {}
            union = np.zeros(labels.dims, dtype=bool)
            for side in ("left", "right"):
                mask = labels.mask(name, side)
                if mask.any():
                    per_side[side] = float(data[mask].mean()) / ref_mean
                    union |= mask
                else:
                    per_side[side] = None
                    missing.append((name, side))
                    warnings.warn(f"ROI ({name}, {side}) is empty; excluded", stacklevel=2)
            if union.any():
                combined = float(data[union].mean()) / ref_mean
                values[name] = SuvrValue(per_side["left"], per_side["right"], combined)
            else:
                continue
        else:
            mask = labels.mask(name)
            if not mask.any():
                missing.append((name, "none"))
                warnings.warn(f"ROI {name} is empty; excluded", stacklevel=2)
                continue
            values[name] = SuvrValue(None, None, float(data[mask].mean()) / ref_mean)
    return SuvrTable(values=values, reference_mean=ref_mean, missing=tuple(missing))


def asymmetry_index(table: SuvrTable) -> AsymmetryRecord:
    """AI = (L - R)/(L + R) for every ROI with both side SUVRs present."""
    record = AsymmetryRecord()
    for name, val in table.values.items():
        if val.left is None or val.right is None:
            if val.left is not None or val.right is not None:
                warnings.warn(f"ROI {name}: one side missing, AI skipped", stacklevel=2)
            continue
        record.values[name] = (val.left - val.right) / (val.left + val.right)
    return record


def _check_matching(synth, acquired):
    if len(synth) != len(acquired):
        raise ValueError(f"subject count mismatch: {len(synth)} vs {len(acquired)}")
    for i, (s, a) in enumerate(zip(synth, acquired)):
        if set(s.values) != set(a.values):
            raise ValueError(f"subject {i}: ROI sets differ")


def congruence_index(synth, acquired) -> float:
    """Fraction of subject x ROI pairs where both AIs share a strict sign.

    Pairs where either AI is exactly 0 count as non-congruent.  Averaged
    jointly over all subject x ROI pairs.
    """
    _check_matching(synth, acquired)
    hits = 0
    total = 0
    for s, a in zip(synth, acquired):
        for name, ai_s in s.values.items():
            hits += int(ai_s * a.values[name] > 0.0)
            total += 1
    if total == 0:
        raise ValueError("no ROI pairs to compare")
    return hits / total


def cmae(synth, acquired, labels: RoiLabelMap) -> float:
    """Area-weighted mean absolute AI error.

    Per subject, sum |AI_acq - AI_synth| * Area_ROI / Area_max over ROIs
    (areas are combined left+right voxel counts, Area_max the largest ROI
    in the map); then average over subjects.
    """
    _check_matching(synth, acquired)
    if len(synth) == 0:
        raise ValueError("no subjects")
    areas = {}
    for name in labels.roi_names():
        areas[name] = int(labels.mask(name).sum())
    area_max = max(areas.values())
    if area_max == 0:
        raise DomainError("label map has no nonempty ROI")

    per_subject = []
    for s, a in zip(synth, acquired):
        total = 0.0
        for name, ai_s in s.values.items():
            total += abs(a.values[name] - ai_s) * areas[name] / area_max
        per_subject.append(total)
    return float(np.mean(per_subject))


class DeltaSuvrStats(NamedTuple):
    mean_abs: float
    std: float


def delta_suvr_stats(synth: Volume, acquired: Volume, labels: RoiLabelMap,
                     mask: np.ndarray | None = None) -> DeltaSuvrStats:
    """Voxel-wise SUVR difference over the brain mask.

    Each image is converted to voxel-wise SUVR (voxel / its own
    cerebellum mean); returns the mean absolute difference and the
    population standard deviation of the signed difference.
    """
    if synth.dims != acquired.dims:
        raise ValueError(f"dims mismatch: {synth.dims} vs {acquired.dims}")
    if synth.dims != labels.dims:
        raise ValueError(f"image dims {synth.dims} != label dims {labels.dims}")
    if mask is None:
        mask = labels.brain_mask()
    if not mask.any():
        raise ValueError("empty brain mask")

    def suvr_map(vol: Volume) -> np.ndarray:
        ref = float(vol.data[labels.mask(REFERENCE_ROI)].mean())
        if ref <= 0.0:
            raise DomainError(f"reference region mean must be positive, got {ref}")
        return vol.data.astype(np.float64) / ref

    diff = (suvr_map(synth) - suvr_map(acquired))[mask]
    return DeltaSuvrStats(float(np.mean(np.abs(diff))), float(np.std(diff)))


def icc(paired) -> float:
    """One-way random-effects ICC(1) over (acquired, synthetic) pairs.

    Each row is one subject x ROI unit rated twice.  Estimated from the
    one-way ANOVA variance components:

        ICC = (MSB - MSW) / (MSB + (k - 1) * MSW),  k = 2

    clamped below at -1.
    """
    arr = np.asarray(paired, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"paired must be an (n, 2) array, got shape {arr.shape}")
    n = arr.shape[0]
    if n < 3:
        raise ValueError(f"ICC needs at least 3 units, got {n}")
    k = arr.shape[1]
    grand = arr.mean()
    unit_means = arr.mean(axis=1)
    msb = k * float(np.sum((unit_means - grand) ** 2)) / (n - 1)
    msw = float(np.sum((arr - unit_means[:, None]) ** 2)) / (n * (k - 1))
    denom = msb + (k - 1) * msw
    if denom == 0.0:
        return 1.0  # all values identical: zero variance anywhere
    return max(-1.0, (msb - msw) / denom)


def icc_confidence_interval(paired, level: float = 0.95):
    """F-distribution confidence interval for ICC(1)."""
    arr = np.asarray(paired, dtype=np.float64)
    n, k = arr.shape
    grand = arr.mean()
    unit_means = arr.mean(axis=1)
    msb = k * float(np.sum((unit_means - grand) ** 2)) / (n - 1)
    msw = float(np.sum((arr - unit_means[:, None]) ** 2)) / (n * (k - 1))
    if msw == 0.0:
        return (1.0, 1.0)
    f_obs = msb / msw
    alpha = 1.0 - level
    df1, df2 = n - 1, n * (k - 1)
    f_lo = f_obs / stats.f.ppf(1.0 - alpha / 2.0, df1, df2)
    f_hi = f_obs * stats.f.ppf(1.0 - alpha / 2.0, df2, df1)
    lo = (f_lo - 1.0) / (f_lo + k - 1.0)
    hi = (f_hi - 1.0) / (f_hi + k - 1.0)
    return (float(lo), float(hi))


def t_confidence_interval(values, level: float = 0.95):
    """Two-sided t-distribution interval for the mean: m +/- t * s / sqrt(n)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.ravel()
    n = arr.size
    if n < 2:
        raise ValueError(f"need at least 2 values, got {n}")
    mean = float(arr.mean())
    s = float(arr.std(ddof=1))
    # quantile via the inverted regularized incomplete beta; more accurate
    # than stats.t.ppf in the df=1 tail
    df = n - 1
    x = float(special.betaincinv(df / 2.0, 0.5, 1.0 - level))
    tq = float(np.sqrt(df * (1.0 / x - 1.0)))
    half = tq * s / np.sqrt(n)
    return (mean - half, mean + half)


class LineProfile(NamedTuple):
    profile: np.ndarray
    jitter: float


def line_profile(volume: Volume, coronal_index: int, column_index: int) -> LineProfile:
    """Intensity profile along z (cranial-caudad) at one coronal position.

    The jitter score is the root-mean-square of the profile's first
    differences; smoother inter-slice intensity gives a lower score.
    """
    nx, ny, _ = volume.dims
    if not (0 <= coronal_index < ny):
        raise IndexError(f"coronal index {coronal_index} out of range [0, {ny})")
    if not (0 <= column_index < nx):
        raise IndexError(f"column index {column_index} out of range [0, {nx})")
    profile = volume.data[column_index, coronal_index, :].astype(np.float64)
    diffs = np.diff(profile)
    jitter = float(np.sqrt(np.mean(diffs**2))) if diffs.size else 0.0
    return LineProfile(profile, jitter)
