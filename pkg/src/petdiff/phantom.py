"""Synthetic paired brain phantoms, low-dose simulation and normalization.

A phantom is a head-sized ellipsoid containing the 10 evaluation ROIs
(8 lateralized cortical/subcortical regions plus CSF and cerebellum) as
smaller ellipsoids.  Three co-registered volumes are produced: two
MRI-like contrasts and a count-valued PET image, all sharing a smooth
random texture field so that PET detail is predictable from MRI.

Hemispheric asymmetry is injected after smoothing by rescaling the
affected ROI so that its mean equals exactly (1 - fraction) times the
contralateral mean in the noiseless image; the same hypometabolism is
rendered into the MRI contrasts at reduced visibility, mimicking the
partial structural correlate of metabolic deficits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError
from .sampling import VolumeAssemblyPlan
from .score.denoiser import ConditionStack
from .volume_io import RoiLabelMap, Volume

FWHM_TO_SIGMA = 1.0 / np.sqrt(8.0 * np.log(2.0))


@dataclass(frozen=True)
class RoiSpec:
    """One ellipsoidal ROI: center/axes as fractions of the grid dims."""

    name: str
    side: str  # left | right | none
    center: tuple  # (fx, fy, fz) in [0, 1]
    axes: tuple  # semi-axes as fractions of dims
    pet: float  # baseline uptake level
    t1w: float
    t2f: float


def _pair(name, dx, cy, cz, axes, pet, t1w, t2f):
    left = RoiSpec(name, "left", (0.5 - dx, cy, cz), axes, pet, t1w, t2f)
    right = RoiSpec(name, "right", (0.5 + dx, cy, cz), axes, pet, t1w, t2f)
    return [left, right]


def default_rois() -> tuple:
    """The 18-label default geometry (8 lateralized pairs + CSF + cerebellum).

    x is left-right (left = low x), y anterior-posterior (anterior = low
    y), z inferior-superior (inferior = low z).  Listed order is the
    painting priority: earlier entries keep contested voxels.
    """
    rois = [
        RoiSpec("cerebellum", "none", (0.5, 0.74, 0.20), (0.20, 0.14, 0.13), 1.0, 0.62, 0.70),
        RoiSpec("CSF", "none", (0.5, 0.46, 0.56), (0.08, 0.15, 0.12), 0.10, 0.12, 0.15),
    ]
    rois += _pair("DGM", 0.11, 0.48, 0.52, (0.055, 0.07, 0.09), 1.20, 0.65, 0.70)
    rois += _pair("HipAmy", 0.19, 0.52, 0.32, (0.065, 0.09, 0.08), 0.90, 0.60, 0.78)
    rois += _pair("IC", 0.21, 0.36, 0.54, (0.050, 0.08, 0.09), 1.00, 0.60, 0.75)
    rois += _pair("FC", 0.17, 0.20, 0.60, (0.11, 0.10, 0.17), 1.00, 0.60, 0.75)
    rois += _pair("TC", 0.31, 0.44, 0.38, (0.085, 0.15, 0.13), 1.00, 0.60, 0.75)
    rois += _pair("PC", 0.16, 0.64, 0.74, (0.10, 0.12, 0.13), 1.00, 0.60, 0.75)
    rois += _pair("OC", 0.12, 0.83, 0.54, (0.085, 0.08, 0.13), 1.00, 0.60, 0.75)
    rois += _pair("CWM", 0.14, 0.42, 0.62, (0.085, 0.19, 0.14), 0.45, 0.90, 0.45)
    return tuple(rois)


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to generate one phantom subject deterministically."""

    seed: int = 0
    dims: tuple = (64, 64, 33)
    spacing: tuple = (3.0, 3.0, 4.5)
    rois: tuple = field(default_factory=default_rois)
    head_center: tuple = (0.5, 0.52, 0.52)
    head_axes: tuple = (0.42, 0.45, 0.46)
    head_levels: tuple = (0.65, 0.55, 0.60)  # (pet, t1w, t2f) outside named ROIs
    asymmetry: tuple = ()  # entries (roi_name, side, hypometabolism fraction)
    noise_level: float = 0.02  # additive Gaussian std, uptake units
    count_scale: float = 1000.0  # expected counts per unit uptake per voxel
    smoothing_fwhm_mm: float = 4.0
    texture_coupling: float = 0.10  # shared texture amplitude across contrasts
    mri_asym_visibility: float = 0.35  # fraction of PET asymmetry echoed in MRI
    overlap: str = "priority"  # or "error"

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 4:
            raise DomainError(f"dims must be 3 values >= 4, got {self.dims}")
        if self.overlap not in ("priority", "error"):
            raise DomainError(f"overlap must be 'priority' or 'error', got {self.overlap!r}")
        if self.count_scale <= 0:
            raise DomainError("count_scale must be positive")
        if self.noise_level < 0:
            raise DomainError("noise_level must be >= 0")
        if not (0.0 <= self.mri_asym_visibility <= 1.0):
            raise DomainError("mri_asym_visibility must be in [0, 1]")
        by_key = {}
        for roi in self.rois:
            if roi.side not in ("left", "right", "none"):
                raise DomainError(f"ROI {roi.name}: bad side {roi.side!r}")
            if (roi.name, roi.side) in by_key:
                raise DomainError(f"duplicate ROI ({roi.name}, {roi.side})")
            by_key[(roi.name, roi.side)] = roi
        for name, side, frac in self.asymmetry:
            if (name, side) not in by_key:
                raise DomainError(f"asymmetry references unknown ROI ({name}, {side})")
            if not (0.0 <= frac < 1.0):
                raise DomainError(f"hypometabolism fraction must be in [0, 1), got {frac}")


@dataclass
class PhantomBundle:
    """Co-registered outputs of one phantom subject."""

    t1w: Volume
    t2f: Volume
    pet_full: Volume  # noisy counts
    pet_expected: Volume  # noiseless expected counts (float)
    labels: RoiLabelMap


def _ellipsoid_mask(dims, center_frac, axes_frac) -> np.ndarray:
    nx, ny, nz = dims
    gx, gy, gz = np.ogrid[0:nx, 0:ny, 0:nz]
    r2 = (
        ((gx - center_frac[0] * nx) / (axes_frac[0] * nx)) ** 2
        + ((gy - center_frac[1] * ny) / (axes_frac[1] * ny)) ** 2
        + ((gz - center_frac[2] * nz) / (axes_frac[2] * nz)) ** 2
    )
    return r2 <= 1.0


def generate_phantom(spec: PhantomSpec) -> PhantomBundle:
    """Generate one subject: (t1w, t2f, pet_full counts, labels) plus the
    noiseless expected-count PET.

    Deterministic for a fixed spec.  In the noiseless image, each
    asymmetry entry (roi, side, f) makes the affected-side ROI mean equal
    exactly (1 - f) times the contralateral mean.
    """
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(d) for d in spec.dims)

    labels = np.zeros(dims, dtype=np.int32)
    table = {}
    masks = {}
    for idx, roi in enumerate(spec.rois, start=1):
        mask = _ellipsoid_mask(dims, roi.center, roi.axes)
        if spec.overlap == "error" and np.any(mask & (labels != 0)):
            raise DomainError(
                f"ROI ({roi.name}, {roi.side}) overlaps an earlier ROI; "
                "set overlap='priority' to resolve by listed order"
            )
        mask = mask & (labels == 0)  # earlier entries win contested voxels
        labels[mask] = idx
        table[idx] = (roi.name, roi.side)
        masks[(roi.name, roi.side)] = mask

    head = _ellipsoid_mask(dims, spec.head_center, spec.head_axes)
    pet_lv, t1_lv, t2_lv = spec.head_levels
    pet = np.where(head, pet_lv, 0.0)
    t1w = np.where(head, t1_lv, 0.0)
    t2f = np.where(head, t2_lv, 0.0)
    for roi in spec.rois:
        mask = masks[(roi.name, roi.side)]
        pet[mask] = roi.pet
        t1w[mask] = roi.t1w
        t2f[mask] = roi.t2f

    # shared smooth texture: the MRI-visible structure PET detail rides on
    texture = gaussian_filter(rng.standard_normal(dims), sigma=2.0)
    texture /= texture.std()
    mod = 1.0 + spec.texture_coupling * texture
    pet *= mod
    t1w *= mod
    t2f *= mod

    sigma_vox = [spec.smoothing_fwhm_mm * FWHM_TO_SIGMA / s for s in spec.spacing]
    pet = gaussian_filter(pet, sigma=sigma_vox)
    t1w = gaussian_filter(t1w, sigma=sigma_vox)
    t2f = gaussian_filter(t2f, sigma=sigma_vox)

    contra = {"left": "right", "right": "left"}
    for name, side, frac in spec.asymmetry:
        m_a = masks[(name, side)]
        m_c = masks[(name, contra[side])]
        mean_a = float(pet[m_a].mean())
        mean_c = float(pet[m_c].mean())
        pet[m_a] *= (1.0 - frac) * mean_c / mean_a
        mri_scale = 1.0 - spec.mri_asym_visibility * frac
        t1w[m_a] *= mri_scale
        t2f[m_a] *= mri_scale

    pet_expected = np.clip(pet, 0.0, None) * spec.count_scale
    noisy = pet_expected + spec.noise_level * spec.count_scale * rng.standard_normal(dims)
    pet_counts = np.rint(np.clip(noisy, 0.0, None))

    spacing = spec.spacing
    return PhantomBundle(
        t1w=Volume(t1w, spacing, "arbitrary"),
        t2f=Volume(t2f, spacing, "arbitrary"),
        pet_full=Volume(pet_counts, spacing, "counts"),
        pet_expected=Volume(pet_expected, spacing, "arbitrary"),
        labels=RoiLabelMap(labels, spacing, table),
    )


def thin_dose(pet_counts: Volume, fraction: float, rng: np.random.Generator) -> Volume:
    """Simulate a reduced tracer dose by per-voxel binomial count thinning.

    Each voxel with n counts keeps Binomial(n, fraction) of them,
    reproducing the mean x fraction and relative-noise x 1/sqrt(fraction)
    statistics of acquiring a fraction of the events.
    """
    if pet_counts.units != "counts":
        raise DomainError(f"thin_dose needs a counts volume, got units {pet_counts.units!r}")
    if not (0.0 < fraction <= 1.0):
        raise DomainError(f"fraction must be in (0, 1], got {fraction}")
    n = np.rint(pet_counts.data).astype(np.int64)
    thinned = rng.binomial(n, fraction).astype(np.float32)
    return Volume(thinned, pet_counts.spacing, "counts")


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine inverse of a normalization: original = scale*normalized + offset."""

    mode: str
    scale: float
    offset: float

    def denormalize(self, v: Volume) -> Volume:
        data = v.data.astype(np.float64) * self.scale + self.offset
        return Volume(data, v.spacing, "arbitrary")


def normalize(v: Volume, mode: str):
    """Rescale a volume for model consumption; returns (volume, record).

    unit-range      -> [0, 1]
    symmetric-range -> [-1, 1]
    mean-divide     -> volume mean becomes 1
    """
    data = v.data.astype(np.float64)
    if mode == "unit-range" or mode == "symmetric-range":
        lo = float(data.min())
        hi = float(data.max())
        if hi == lo:
            raise DomainError(f"{mode} normalization undefined for a constant volume")
        span = hi - lo
        if mode == "unit-range":
            out = (data - lo) / span
            rec = NormalizationRecord(mode, span, lo)
        else:
            out = 2.0 * (data - lo) / span - 1.0
            rec = NormalizationRecord(mode, span / 2.0, lo + span / 2.0)
    elif mode == "mean-divide":
        mean = float(data.mean())
        if mean == 0.0:
            raise DomainError("mean-divide normalization undefined for zero-mean volume")
        out = data / mean
        rec = NormalizationRecord(mode, mean, 0.0)
    else:
        raise DomainError(f"unknown normalization mode {mode!r}")
    return Volume(out, v.spacing, "normalized"), rec


def condition_stacks(volumes: dict, plan: VolumeAssemblyPlan):
    """Per-slice condition stacks from co-registered contrast volumes.

    ``volumes`` maps contrast name -> Volume, in channel order.  Each
    slice k gets a window of ``plan.window`` adjacent slices per
    contrast, edge-replicated at the boundaries, so slice 0 of a 3-wide
    window sees indices (0, 0, 1).
    """
    if not volumes:
        raise ValueError("no condition volumes supplied")
    vols = list(volumes.items())
    dims = vols[0][1].dims
    for name, vol in vols:
        if vol.dims != dims:
            raise ValueError(f"contrast {name!r} dims {vol.dims} != {dims}")
    n_slices = dims[plan.axis]
    half = plan.window // 2

    stacks = []
    for k in range(n_slices):
        channels = []
        layout = []
        for name, vol in vols:
            for off in range(-half, half + 1):
                idx = min(max(k + off, 0), n_slices - 1)
                channels.append(np.take(vol.data, idx, axis=plan.axis))
                layout.append(f"{name}[{off:+d}]")
        stacks.append(ConditionStack(np.stack(channels, axis=0), layout))
    return stacks
