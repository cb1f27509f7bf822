"""Command-line pipeline: phantom, thin, train, sample, evaluate.

Each run reads a YAML config (flags override config fields, config
overrides built-in defaults) and writes its outputs plus a manifest
recording the resolved config, seeds and SHA-256 checksums of all input
and output files.  The manifest carries no timestamps, so a rerun with
the same seed produces byte-identical output directories.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DomainError, SamplerDivergenceError, TrainingDivergedError
from .phantom import PhantomSpec, condition_stacks, generate_phantom, normalize, thin_dose
from .report import evaluate_pairs
from .sampling import (
    KarrasSamplerConfig,
    PcSamplerConfig,
    VolumeAssemblyPlan,
    assemble_volume,
    karras_sample,
    pc_sample,
)
from .sde import KarrasSchedule, VpSchedule
from .score import (
    ConvDenoiserNet,
    KarrasNetDenoiser,
    SliceDataset,
    TrainingConfig,
    VpNetDenoiser,
    load_model,
    save_model,
    train_denoiser,
    write_loss_trace,
)
from .volume_io import Volume, read_labels, read_volume, write_labels, write_volume

SCHEMES = ("sgm-vp", "sgm-kd")
INPUT_COMBOS = ("t1w", "t1w+t2f", "t1w+1pct", "t1w+t2f+1pct")
NORM_BY_SCHEME = {"sgm-vp": "unit-range", "sgm-kd": "symmetric-range"}
CLIP_BY_NORM = {"unit-range": (0.0, 1.0), "symmetric-range": (-1.0, 1.0)}

DEFAULTS = {
    "phantom": {
        "seed": 0,
        "out": "phantom_out",
        "cohort": 1,
        "dims": [64, 64, 33],
        "spacing": [3.0, 3.0, 4.5],
        "asymmetry": "random",
        "fraction_range": [0.15, 0.3],
        "noise_level": 0.02,
        "count_scale": 1000.0,
        "mri_asym_visibility": 0.35,
    },
    "thin": {"seed": 0, "out": "thin_out", "input": None, "fraction": 0.01},
    "train": {
        "seed": 0,
        "out": "train_out",
        "data": None,
        "subjects": None,
        "scheme": "sgm-vp",
        "inputs": "t1w",
        "steps": 500,
        "batch_size": 16,
        "learning_rate": 1e-3,
        "val_fraction": 0.1,
        "hidden": 16,
        "kernel": 3,
    },
    "sample": {
        "seed": 0,
        "out": "sample_out",
        "model": None,
        "subject": None,
        "sampler": None,
        "threads": None,
        "n_predictor_steps": 250,
        "n_corrector_steps": 1,
        "snr": 0.16,
        "n_steps": 100,
        "s_churn": 0.0,
        "s_noise": 1.0,
    },
    "evaluate": {"out": "eval_out", "labels": None, "pairs": None, "seed": 0},
}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: dict, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in sorted(map(str, inputs))},
        "outputs": {str(p): _sha256(p) for p in sorted(map(str, outputs))},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _resolve(command: str, args) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    return cfg


def _require(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"required config field {key!r} is missing")
    return cfg[key]


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_asymmetry(cfg: dict, spec_rois, subject_seed: int):
    """Either the explicit (name, side, fraction) list or a random draw per
    lateralized ROI with fraction uniform in fraction_range."""
    asym = cfg["asymmetry"]
    if isinstance(asym, (list, tuple)):
        return tuple((str(n), str(s), float(f)) for n, s, f in asym)
    if asym != "random":
        raise ConfigError(f"asymmetry must be 'random' or a list, got {asym!r}")
    lo, hi = cfg["fraction_range"]
    rng = np.random.default_rng(np.random.SeedSequence([int(subject_seed), 17]))
    names = sorted({r.name for r in spec_rois if r.side == "left"})
    out = []
    for name in names:
        side = "left" if rng.random() < 0.5 else "right"
        out.append((name, side, float(rng.uniform(lo, hi))))
    return tuple(out)


def cmd_phantom(cfg: dict) -> None:
    out = _out_dir(cfg)
    n = int(cfg["cohort"])
    if n < 1:
        raise ConfigError(f"cohort must be >= 1, got {n}")
    base = PhantomSpec()  # default geometry; only the ROI list is reused
    outputs = []
    resolved = []
    for k in range(n):
        sub = out if n == 1 else out / f"subject_{k:02d}"
        sub.mkdir(parents=True, exist_ok=True)
        seed_k = _derive_seed(cfg["seed"], k)
        asym = _resolve_asymmetry(cfg, base.rois, seed_k)
        spec = PhantomSpec(
            seed=seed_k,
            dims=tuple(cfg["dims"]),
            spacing=tuple(cfg["spacing"]),
            asymmetry=asym,
            noise_level=float(cfg["noise_level"]),
            count_scale=float(cfg["count_scale"]),
            mri_asym_visibility=float(cfg["mri_asym_visibility"]),
        )
        bundle = generate_phantom(spec)
        write_volume(sub / "t1w.vol", bundle.t1w)
        write_volume(sub / "t2f.vol", bundle.t2f)
        write_volume(sub / "pet_full.vol", bundle.pet_full)
        write_labels(sub / "labels.vol", bundle.labels)
        outputs += [sub / p for p in ("t1w.vol", "t2f.vol", "pet_full.vol", "labels.vol")]
        outputs += [sub / (p + ".json") for p in ("t1w.vol", "t2f.vol", "pet_full.vol", "labels.vol")]
        resolved.append({"subject": k, "seed": seed_k, "asymmetry": [list(a) for a in asym]})
    cfg = dict(cfg, resolved_subjects=resolved)
    _write_manifest(out, "phantom", cfg, [], outputs)


def cmd_thin(cfg: dict) -> None:
    src = _require_file(_require(cfg, "input"), "input volume")
    fraction = float(cfg["fraction"])
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    out = _out_dir(cfg)
    vol = read_volume(src)
    rng = np.random.default_rng(int(cfg["seed"]))
    thinned = thin_dose(vol, fraction, rng)
    write_volume(out / "pet_low.vol", thinned)
    _write_manifest(out, "thin", cfg, [src], [out / "pet_low.vol", out / "pet_low.vol.json"])


def _combo_contrasts(combo: str):
    if combo not in INPUT_COMBOS:
        raise ConfigError(f"inputs must be one of {INPUT_COMBOS}, got {combo!r}")
    files = [("t1w", "t1w.vol")]
    if "t2f" in combo:
        files.append(("t2f", "t2f.vol"))
    if "1pct" in combo:
        files.append(("pet1pct", "pet_low.vol"))
    return files


def _load_conditions(subject_dir: Path, combo: str, mode: str):
    """Normalized condition volumes for one subject, in channel order."""
    vols = {}
    for name, fname in _combo_contrasts(combo):
        path = subject_dir / fname
        if not path.exists():
            raise ConfigError(f"input combination {combo!r} needs {fname} in {subject_dir}")
        vols[name], _ = normalize(read_volume(path), mode)
    return vols


def _subject_dirs(cfg: dict):
    if cfg.get("subjects"):
        return [_require_file(p, "subject directory") for p in cfg["subjects"]]
    data = Path(_require(cfg, "data"))
    if not data.exists():
        raise ConfigError(f"data directory not found: {data}")
    subs = sorted(p for p in data.iterdir() if p.is_dir() and (p / "pet_full.vol").exists())
    if not subs:
        # a single-subject directory is also accepted
        if (data / "pet_full.vol").exists():
            return [data]
        raise ConfigError(f"no subject directories under {data}")
    return subs


def cmd_train(cfg: dict) -> None:
    scheme = cfg["scheme"]
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    combo = cfg["inputs"]
    mode = NORM_BY_SCHEME[scheme]
    subjects = _subject_dirs(cfg)
    out = _out_dir(cfg)
    plan = VolumeAssemblyPlan()

    inputs = []
    targets, conds = [], []
    layout = None
    for sdir in subjects:
        pet = read_volume(sdir / "pet_full.vol")
        pet_n, _ = normalize(pet, mode)
        cond_vols = _load_conditions(sdir, combo, mode)
        stacks = condition_stacks(cond_vols, plan)
        layout = stacks[0].layout
        for k, stack in enumerate(stacks):
            targets.append(np.take(pet_n.data, k, axis=plan.axis))
            conds.append(stack.channels)
        inputs.append(sdir / "pet_full.vol")
        inputs += [sdir / fname for _, fname in _combo_contrasts(combo)]
    dataset = SliceDataset(np.stack(targets), np.stack(conds))

    net = ConvDenoiserNet(
        n_cond_channels=dataset.conds.shape[1],
        hidden=int(cfg["hidden"]),
        kernel=int(cfg["kernel"]),
        rng=int(cfg["seed"]),
    )
    if scheme == "sgm-vp":
        model = VpNetDenoiser(net, VpSchedule())
    else:
        model = KarrasNetDenoiser(net, sigma_data=0.5)

    tc = TrainingConfig(
        n_steps=int(cfg["steps"]),
        batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["learning_rate"]),
        val_fraction=float(cfg["val_fraction"]),
        seed=int(cfg["seed"]),
    )
    result = train_denoiser(model, dataset, tc)

    meta = {
        "scheme": scheme,
        "inputs": combo,
        "normalization": mode,
        "condition_layout": list(layout),
        "val_loss_initial": result.val_loss_initial,
        "val_loss_final": result.val_loss_final,
    }
    save_model(out / "model.bin", model, meta=meta)
    write_loss_trace(out / "loss_trace.csv", result.loss_trace)
    _write_manifest(out, "train", cfg, inputs, [out / "model.bin", out / "loss_trace.csv"])


def cmd_sample(cfg: dict) -> None:
    model_path = _require_file(_require(cfg, "model"), "model file")
    subject = _require_file(_require(cfg, "subject"), "subject directory")
    out = _out_dir(cfg)
    model, manifest = load_model(model_path)
    meta = manifest["meta"]
    combo = meta["inputs"]
    mode = meta["normalization"]
    scheme = meta["scheme"]

    cond_vols = _load_conditions(Path(subject), combo, mode)
    plan = VolumeAssemblyPlan()
    stacks = condition_stacks(cond_vols, plan)
    ref = next(iter(cond_vols.values()))
    slice_shape = stacks[0].spatial_shape
    clip = CLIP_BY_NORM[mode]

    sampler = cfg["sampler"] or ("pc" if scheme == "sgm-vp" else "karras")
    if sampler == "pc":
        pc_cfg = PcSamplerConfig(
            n_predictor_steps=int(cfg["n_predictor_steps"]),
            n_corrector_steps=int(cfg["n_corrector_steps"]),
            snr=float(cfg["snr"]),
            schedule=model.schedule if scheme == "sgm-vp" else VpSchedule(),
            clip_range=clip,
        )

        def sample_slice(cond, rng):
            return pc_sample(model, cond, slice_shape, pc_cfg, rng=rng)

    elif sampler == "karras":
        kd_cfg = KarrasSamplerConfig(
            schedule=KarrasSchedule(n_steps=int(cfg["n_steps"])),
            s_churn=float(cfg["s_churn"]),
            s_noise=float(cfg["s_noise"]),
            clip_range=clip,
        )

        def sample_slice(cond, rng):
            return karras_sample(model, cond, slice_shape, kd_cfg, rng=rng)

    else:
        raise ConfigError(f"sampler must be 'pc' or 'karras', got {sampler!r}")

    threads = cfg.get("threads") or os.cpu_count() or 1
    vol = assemble_volume(
        sample_slice,
        stacks,
        plan,
        int(cfg["seed"]),
        n_threads=int(threads),
        spacing=ref.spacing,
        units="normalized",
    )
    if mode == "symmetric-range":
        # map [-1, 1] model space onto the nonnegative unit range, so ratio
        # metrics (SUVR, AI) see a pure scaling of the underlying intensities
        vol = Volume((vol.data + 1.0) / 2.0, vol.spacing, "normalized")
    write_volume(out / "synth.vol", vol)
    inputs = [model_path] + [Path(subject) / f for _, f in _combo_contrasts(combo)]
    _write_manifest(out, "sample", cfg, inputs, [out / "synth.vol", out / "synth.vol.json"])


def cmd_evaluate(cfg: dict) -> None:
    labels_path = _require_file(_require(cfg, "labels"), "label map")
    pairs_cfg = _require(cfg, "pairs")
    out = _out_dir(cfg)
    labels = read_labels(labels_path)
    pairs = []
    inputs = [labels_path]
    for entry in pairs_cfg:
        synth = _require_file(entry["synth"], "synthetic volume")
        acq = _require_file(entry["acquired"], "acquired volume")
        pairs.append((entry.get("subject", synth.parent.name), read_volume(synth), read_volume(acq)))
        inputs += [synth, acq]
    report = evaluate_pairs(pairs, labels)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    (out / "report.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    _write_manifest(out, "evaluate", cfg, inputs,
                    [out / "report.csv", out / "report.json", out / "report.txt"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="petdiff",
        description="Conditional diffusion PET synthesis pipeline on synthetic phantoms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker threads for parallel stages")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("phantom", help="generate phantom subject(s)")
    common(p)
    p.add_argument("--cohort", type=int, help="number of subjects")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("thin", help="binomial dose thinning of a counts volume")
    common(p)
    p.add_argument("--input", help="counts volume to thin")
    p.add_argument("--fraction", type=float, help="retained event fraction")
    p.set_defaults(func=cmd_thin)

    p = sub.add_parser("train", help="train the conditional denoiser")
    common(p)
    p.add_argument("--data", help="directory of subject subdirectories")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--inputs", choices=INPUT_COMBOS)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="synthesize a PET volume from conditions")
    common(p)
    p.add_argument("--model", help="trained model file")
    p.add_argument("--subject", help="subject directory with condition volumes")
    p.add_argument("--sampler", choices=("pc", "karras"))
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="compute the metric report for volume pairs")
    common(p)
    p.add_argument("--labels", help="ROI label map file")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args.command, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        args.func(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DomainError, SamplerDivergenceError, TrainingDivergedError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
