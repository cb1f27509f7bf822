"""3-D volume and ROI label-map containers plus their on-disk format.

A volume is stored as a raw little-endian binary payload (x-fastest
ordering) next to a JSON sidecar ``<path>.json`` holding dims, voxel
spacing, units and dtype.  Label maps use the same layout with an int32
payload and a label table mapping each integer to an ROI name and side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

VALID_UNITS = ("arbitrary", "counts", "normalized")
VALID_SIDES = ("left", "right", "none")


@dataclass
class Volume:
    """Scalar 3-D grid with voxel spacing in mm and an intensity units tag."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    units: str = "arbitrary"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume data must be 3-D with positive dims, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")
        if self.units not in VALID_UNITS:
            raise ValueError(f"units must be one of {VALID_UNITS}, got {self.units!r}")
        if self.units == "counts":
            if np.any(self.data < 0) or not np.all(self.data == np.rint(self.data)):
                raise ValueError("counts volumes must hold nonnegative integers")

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing, self.units)


class RoiEntry(NamedTuple):
    name: str
    side: str


@dataclass
class RoiLabelMap:
    """Integer-labeled grid; 0 is background, labels index an ROI table."""

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 3:
            raise ValueError(f"label map must be 3-D, got shape {self.labels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        table = {}
        for label, entry in self.table.items():
            entry = RoiEntry(*entry)
            if int(label) == 0:
                raise ValueError("label 0 is reserved for background")
            if entry.side not in VALID_SIDES:
                raise ValueError(f"side must be one of {VALID_SIDES}, got {entry.side!r}")
            table[int(label)] = entry
        self.table = table

    @property
    def dims(self) -> tuple:
        return self.labels.shape

    def roi_names(self):
        """Distinct ROI names in the table, stable order."""
        seen = []
        for entry in self.table.values():
            if entry.name not in seen:
                seen.append(entry.name)
        return seen

    def lateralized_names(self):
        """Names that have both a left and a right label."""
        sides = {}
        for entry in self.table.values():
            sides.setdefault(entry.name, set()).add(entry.side)
        return [n for n in self.roi_names() if {"left", "right"} <= sides[n]]

    def mask(self, name: str, side: str | None = None) -> np.ndarray:
        """Boolean mask of all labels matching ``name`` (and ``side`` if given)."""
        out = np.zeros(self.labels.shape, dtype=bool)
        hit = False
        for label, entry in self.table.items():
            if entry.name == name and (side is None or entry.side == side):
                out |= self.labels == label
                hit = True
        if not hit:
            raise KeyError(f"no ROI named {name!r}" + (f" with side {side!r}" if side else ""))
        return out

    def brain_mask(self) -> np.ndarray:
        """Union of all labeled voxels (everything except background)."""
        return self.labels != 0


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_volume(path, vol: Volume) -> None:
    sidecar = {
        "dims": list(vol.data.shape),
        "spacing_mm": list(vol.spacing),
        "units": vol.units,
        "byte_order": "little-endian",
        "dtype": "float32",
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")
    vol.data.astype("<f4").ravel(order="F").tofile(path)


def read_volume(path) -> Volume:
    meta = json.loads(_sidecar_path(path).read_text())
    if meta.get("dtype") != "float32":
        raise ValueError(f"{path}: expected float32 volume, sidecar says {meta.get('dtype')!r}")
    dims = tuple(meta["dims"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {data.size} voxels, sidecar dims {dims}")
    data = data.reshape(dims, order="F")
    return Volume(data, tuple(meta["spacing_mm"]), meta["units"])


def write_labels(path, labmap: RoiLabelMap) -> None:
    sidecar = {
        "dims": list(labmap.labels.shape),
        "spacing_mm": list(labmap.spacing),
        "units": "labels",
        "byte_order": "little-endian",
        "dtype": "int32",
        "label_table": {
            str(label): {"name": e.name, "side": e.side} for label, e in labmap.table.items()
        },
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")
    labmap.labels.astype("<i4").ravel(order="F").tofile(path)


def read_labels(path) -> RoiLabelMap:
    meta = json.loads(_sidecar_path(path).read_text())
    if "label_table" not in meta:
        raise ValueError(f"{path}: sidecar has no label table, not a label map")
    dims = tuple(meta["dims"])
    labels = np.fromfile(path, dtype="<i4")
    if labels.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {labels.size} voxels, sidecar dims {dims}")
    labels = labels.reshape(dims, order="F")
    table = {int(k): (v["name"], v["side"]) for k, v in meta["label_table"].items()}
    return RoiLabelMap(labels, tuple(meta["spacing_mm"]), table)
