"""Binary model file format and loss-trace CSV emission.

Layout: 8 magic bytes, a u32-LE length-prefixed JSON manifest (network
geometry, scheme, schedule, extra run metadata), the float32
little-endian parameter payload in manifest order, and a trailing u32-LE
CRC32 over manifest + payload.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..sde import KarrasSchedule, VpSchedule
from .denoiser import KarrasNetDenoiser, VpNetDenoiser
from .net import ConvDenoiserNet

MAGIC = b"SGMDNZ01"


def _schedule_dict(model):
    if isinstance(model, VpNetDenoiser):
        s = model.schedule
        return {
            "scheme": "vp",
            "beta_min": s.beta_min,
            "beta_max": s.beta_max,
            "t_min": s.t_min,
            "t_max": s.t_max,
        }
    return {"scheme": "edm", "sigma_data": model.sigma_data}


def save_model(path, model, meta: dict | None = None) -> None:
    """Write a trained (or initialized) denoiser to ``path``."""
    net = model.net
    manifest = {
        "net": {
            "type": "conv_denoiser",
            "n_cond_channels": net.n_cond_channels,
            "hidden": net.hidden,
            "kernel": net.kernel,
        },
        "params": [{"name": n, "shape": list(s)} for n, s in net.param_shapes()],
        "schedule": _schedule_dict(model),
        "meta": meta or {},
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = net.get_flat_params().astype("<f4").tobytes()
    checksum = zlib.crc32(manifest_bytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", checksum))


def load_model(path):
    """Read a model file back; returns (denoiser, manifest)."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    off = len(MAGIC)
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    manifest_bytes = raw[off : off + mlen]
    off += mlen
    payload = raw[off:-4]
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(manifest_bytes + payload) & 0xFFFFFFFF != stored:
        raise ValueError(f"{path}: checksum mismatch, file corrupted")
    manifest = json.loads(manifest_bytes.decode("utf-8"))

    net_info = manifest["net"]
    net = ConvDenoiserNet(
        n_cond_channels=net_info["n_cond_channels"],
        hidden=net_info["hidden"],
        kernel=net_info["kernel"],
        rng=0,
    )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    net.set_flat_params(flat)

    sched = manifest["schedule"]
    if sched["scheme"] == "vp":
        model = VpNetDenoiser(
            net,
            VpSchedule(
                beta_min=sched["beta_min"],
                beta_max=sched["beta_max"],
                t_min=sched["t_min"],
                t_max=sched["t_max"],
            ),
        )
    elif sched["scheme"] == "edm":
        model = KarrasNetDenoiser(net, sigma_data=sched["sigma_data"])
    else:
        raise ValueError(f"unknown scheme {sched['scheme']!r}")
    return model, manifest


def write_loss_trace(path, trace) -> None:
    """Loss trace CSV: one (step, loss) row per training step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.10g}"])
