import numpy as np
import pytest

from petdiff.errors import DomainError
from petdiff.phantom import (
    PhantomSpec,
    RoiSpec,
    condition_stacks,
    default_rois,
    generate_phantom,
    normalize,
    thin_dose,
)
from petdiff.sampling import VolumeAssemblyPlan
from petdiff.volume_io import (
    RoiLabelMap,
    Volume,
    read_labels,
    read_volume,
    write_labels,
    write_volume,
)


def test_volume_container_validation():
    v = Volume(np.zeros((4, 5, 6)), spacing=(3.0, 3.0, 4.5), units="arbitrary")
    assert v.dims == (4, 5, 6)
    assert v.data.dtype == np.float32
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 5, 6)), spacing=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 5, 6)), units="bq/ml")
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), -1.0), units="counts")
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), 1.5), units="counts")


def test_volume_roundtrip_and_raw_layout(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume(rng.normal(size=(5, 4, 3)).astype(np.float32), (2.0, 2.0, 2.0), "arbitrary")
    path = tmp_path / "img.vol"
    write_volume(path, vol)
    # payload is raw little-endian float32 with x varying fastest
    raw = np.fromfile(path, dtype="<f4")
    assert np.array_equal(raw, vol.data.ravel(order="F"))
    back = read_volume(path)
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing
    assert back.units == vol.units


def test_volume_sidecar_fields(tmp_path):
    import json

    vol = Volume(np.zeros((2, 3, 4)), (1.5, 1.5, 2.0), "counts")
    write_volume(tmp_path / "v.vol", vol)
    meta = json.loads((tmp_path / "v.vol.json").read_text())
    assert meta["dims"] == [2, 3, 4]
    assert meta["spacing_mm"] == [1.5, 1.5, 2.0]
    assert meta["units"] == "counts"
    assert meta["byte_order"] == "little-endian"
    assert meta["dtype"] == "float32"


def test_volume_read_rejects_size_mismatch(tmp_path):
    vol = Volume(np.zeros((3, 3, 3)))
    path = tmp_path / "v.vol"
    write_volume(path, vol)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError, match="voxels"):
        read_volume(path)


def test_labels_roundtrip(tmp_path):
    labels = np.zeros((4, 4, 4), dtype=np.int32)
    labels[1, 1, 1] = 1
    labels[2, 2, 2] = 2
    labmap = RoiLabelMap(labels, (3.0, 3.0, 4.5), {1: ("TC", "left"), 2: ("TC", "right")})
    path = tmp_path / "labels.vol"
    write_labels(path, labmap)
    back = read_labels(path)
    assert np.array_equal(back.labels, labels)
    assert back.table[1].name == "TC" and back.table[1].side == "left"
    assert back.lateralized_names() == ["TC"]
    with pytest.raises(ValueError, match="label table"):
        write_volume(tmp_path / "plain.vol", Volume(np.zeros((2, 2, 2))))
        read_labels(tmp_path / "plain.vol")


def test_label_map_masks():
    labels = np.zeros((3, 3, 3), dtype=np.int32)
    labels[0] = 1
    labels[1] = 2
    labels[2] = 3
    lm = RoiLabelMap(labels, table={1: ("A", "left"), 2: ("A", "right"), 3: ("B", "none")})
    assert lm.mask("A").sum() == 18
    assert lm.mask("A", "left").sum() == 9
    assert lm.mask("B").sum() == 9
    assert lm.brain_mask().sum() == 27
    assert lm.roi_names() == ["A", "B"]
    assert lm.lateralized_names() == ["A"]
    with pytest.raises(KeyError):
        lm.mask("C")
    with pytest.raises(KeyError):
        lm.mask("B", "left")
    with pytest.raises(ValueError):
        RoiLabelMap(labels, table={0: ("bg", "none")})


def test_default_phantom_geometry():
    bundle = generate_phantom(PhantomSpec(seed=0))
    lm = bundle.labels
    assert len(lm.table) == 18
    assert set(lm.lateralized_names()) == {"DGM", "HipAmy", "IC", "FC", "TC", "PC", "OC", "CWM"}
    assert "cerebellum" in lm.roi_names() and "CSF" in lm.roi_names()
    for name in lm.roi_names():
        assert lm.mask(name).sum() > 50
    assert bundle.pet_full.units == "counts"
    assert bundle.t1w.dims == (64, 64, 33)


def test_phantom_is_deterministic():
    spec = PhantomSpec(seed=4, asymmetry=(("FC", "right", 0.25),))
    a = generate_phantom(spec)
    b = generate_phantom(spec)
    assert np.array_equal(a.pet_full.data, b.pet_full.data)
    assert np.array_equal(a.t1w.data, b.t1w.data)
    assert np.array_equal(a.t2f.data, b.t2f.data)
    assert np.array_equal(a.pet_expected.data, b.pet_expected.data)
    assert np.array_equal(a.labels.labels, b.labels.labels)


def test_phantom_seeds_differ():
    a = generate_phantom(PhantomSpec(seed=0))
    b = generate_phantom(PhantomSpec(seed=1))
    assert not np.array_equal(a.pet_full.data, b.pet_full.data)


def test_asymmetry_ratio_is_exact_in_expected_image():
    spec = PhantomSpec(seed=0, asymmetry=(("TC", "left", 0.2),))
    bundle = generate_phantom(spec)
    lm = bundle.labels
    pet = bundle.pet_expected.data.astype(np.float64)
    left = pet[lm.mask("TC", "left")].mean()
    right = pet[lm.mask("TC", "right")].mean()
    assert left / right == pytest.approx(0.8, rel=1e-6)


def test_asymmetry_echoes_into_mri_at_reduced_visibility():
    # MRI contrast inside the affected ROI is scaled by 1 - 0.35*f after
    # smoothing, so the L/R ratio shifts by exactly that factor relative
    # to the symmetric phantom of the same seed
    sym = generate_phantom(PhantomSpec(seed=0))
    asym = generate_phantom(PhantomSpec(seed=0, asymmetry=(("TC", "left", 0.2),)))
    lm = sym.labels
    m_l, m_r = lm.mask("TC", "left"), lm.mask("TC", "right")

    def ratio(vol):
        return float(vol.data[m_l].astype(np.float64).mean() / vol.data[m_r].astype(np.float64).mean())

    scale = 1.0 - 0.35 * 0.2
    assert ratio(asym.t1w) == pytest.approx(scale * ratio(sym.t1w), rel=1e-5)
    assert ratio(asym.t2f) == pytest.approx(scale * ratio(sym.t2f), rel=1e-5)


def test_phantom_counts_are_nonnegative_integers():
    bundle = generate_phantom(PhantomSpec(seed=2))
    counts = bundle.pet_full.data
    assert np.all(counts >= 0)
    assert np.all(counts == np.rint(counts))
    assert counts.max() > 100  # count_scale 1000 on uptake near 1


def test_phantom_overlap_error_mode():
    rois = (
        RoiSpec("a", "none", (0.5, 0.5, 0.5), (0.2, 0.2, 0.2), 1.0, 0.5, 0.5),
        RoiSpec("b", "none", (0.5, 0.5, 0.5), (0.2, 0.2, 0.2), 1.0, 0.5, 0.5),
    )
    with pytest.raises(DomainError, match="overlaps"):
        generate_phantom(PhantomSpec(seed=0, dims=(16, 16, 16), rois=rois, overlap="error"))
    # priority mode keeps the first ROI's voxels
    bundle = generate_phantom(PhantomSpec(seed=0, dims=(16, 16, 16), rois=rois))
    assert bundle.labels.mask("a").sum() > 0
    assert bundle.labels.mask("b").sum() == 0


def test_phantom_spec_validation():
    with pytest.raises(DomainError):
        PhantomSpec(dims=(64, 64))
    with pytest.raises(DomainError):
        PhantomSpec(asymmetry=(("nosuch", "left", 0.2),))
    with pytest.raises(DomainError):
        PhantomSpec(asymmetry=(("TC", "left", 1.0),))
    with pytest.raises(DomainError):
        PhantomSpec(overlap="merge")
    with pytest.raises(DomainError):
        PhantomSpec(mri_asym_visibility=1.5)
    dup = default_rois() + (default_rois()[0],)
    with pytest.raises(DomainError):
        PhantomSpec(rois=dup)


def test_thin_dose_identity_at_full_fraction():
    vol = Volume(np.arange(24.0).reshape(2, 3, 4), units="counts")
    out = thin_dose(vol, 1.0, np.random.default_rng(0))
    assert np.array_equal(out.data, vol.data)
    assert out.units == "counts"


def test_thin_dose_binomial_moments():
    n, p = 400, 0.25
    vol = Volume(np.full((20, 20, 20), float(n)), units="counts")
    out = thin_dose(vol, p, np.random.default_rng(3))
    vals = out.data.astype(np.float64).ravel()
    se_mean = np.sqrt(n * p * (1 - p) / vals.size)
    assert abs(vals.mean() - n * p) < 4 * se_mean
    assert vals.var() == pytest.approx(n * p * (1 - p), rel=0.1)
    assert np.all(vals <= n) and np.all(vals >= 0)


def test_thin_dose_total_count_ratio():
    rng = np.random.default_rng(8)
    vol = Volume(np.rint(rng.uniform(0, 2000, size=(32, 32, 16))), units="counts")
    total = float(vol.data.sum())
    out = thin_dose(vol, 0.05, np.random.default_rng(9))
    got = float(out.data.sum())
    sd = np.sqrt(total * 0.05 * 0.95)
    assert abs(got - total * 0.05) < 4 * sd


def test_thin_dose_validation():
    counts = Volume(np.full((2, 2, 2), 5.0), units="counts")
    with pytest.raises(DomainError):
        thin_dose(counts, 0.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        thin_dose(counts, 1.5, np.random.default_rng(0))
    not_counts = Volume(np.full((2, 2, 2), 5.0), units="arbitrary")
    with pytest.raises(DomainError):
        thin_dose(not_counts, 0.5, np.random.default_rng(0))


def test_normalize_unit_range():
    vol = Volume(np.linspace(2.0, 10.0, 27).reshape(3, 3, 3))
    out, rec = normalize(vol, "unit-range")
    assert out.units == "normalized"
    assert out.data.min() == 0.0
    assert out.data.max() == 1.0
    assert rec.mode == "unit-range"
    assert rec.scale == pytest.approx(8.0)
    assert rec.offset == pytest.approx(2.0)
    back = rec.denormalize(out)
    assert np.allclose(back.data, vol.data, atol=1e-5)


def test_normalize_symmetric_range():
    vol = Volume(np.linspace(-4.0, 6.0, 8).reshape(2, 2, 2))
    out, rec = normalize(vol, "symmetric-range")
    assert out.data.min() == pytest.approx(-1.0, abs=1e-6)
    assert out.data.max() == pytest.approx(1.0, abs=1e-6)
    back = rec.denormalize(out)
    assert np.allclose(back.data, vol.data, atol=1e-5)


def test_normalize_mean_divide():
    vol = Volume(np.array([2.0, 4.0, 6.0]).reshape(1, 1, 3))
    out, rec = normalize(vol, "mean-divide")
    assert np.allclose(out.data.ravel(), [0.5, 1.0, 1.5], atol=1e-7)
    assert rec.scale == pytest.approx(4.0)
    assert rec.offset == 0.0


def test_normalize_rejects_degenerate_volumes():
    const = Volume(np.full((2, 2, 2), 3.0))
    with pytest.raises(DomainError):
        normalize(const, "unit-range")
    with pytest.raises(DomainError):
        normalize(const, "symmetric-range")
    zero_mean = Volume(np.array([-1.0, 1.0]).reshape(1, 1, 2))
    with pytest.raises(DomainError):
        normalize(zero_mean, "mean-divide")
    with pytest.raises(DomainError):
        normalize(const, "zscore")


def test_condition_stacks_window_and_edges():
    data = np.zeros((2, 2, 5), dtype=np.float32)
    for k in range(5):
        data[:, :, k] = k
    vol = Volume(data, units="normalized")
    stacks = condition_stacks({"t1w": vol}, VolumeAssemblyPlan(axis=2, window=3))
    assert len(stacks) == 5
    assert stacks[0].n_channels == 3
    assert stacks[0].layout == ("t1w[-1]", "t1w[+0]", "t1w[+1]")
    # edge replication: slice 0 window is (0, 0, 1), last is (3, 4, 4)
    assert [c[0, 0] for c in stacks[0].channels] == [0, 0, 1]
    assert [c[0, 0] for c in stacks[4].channels] == [3, 4, 4]
    assert [c[0, 0] for c in stacks[2].channels] == [1, 2, 3]


def test_condition_stacks_multi_contrast_channel_order():
    vols = {
        "t1w": Volume(np.full((2, 2, 4), 1.0), units="normalized"),
        "t2f": Volume(np.full((2, 2, 4), 2.0), units="normalized"),
        "pet_low": Volume(np.full((2, 2, 4), 3.0), units="normalized"),
    }
    stacks = condition_stacks(vols, VolumeAssemblyPlan(window=3))
    assert stacks[0].n_channels == 9
    assert stacks[0].layout[:3] == ("t1w[-1]", "t1w[+0]", "t1w[+1]")
    assert stacks[0].layout[3:6] == ("t2f[-1]", "t2f[+0]", "t2f[+1]")
    assert stacks[0].layout[6:] == ("pet_low[-1]", "pet_low[+0]", "pet_low[+1]")
    assert np.all(stacks[1].channels[0] == 1.0)
    assert np.all(stacks[1].channels[4] == 2.0)
    assert np.all(stacks[1].channels[8] == 3.0)


def test_condition_stacks_validation():
    with pytest.raises(ValueError):
        condition_stacks({}, VolumeAssemblyPlan())
    vols = {
        "a": Volume(np.zeros((2, 2, 4))),
        "b": Volume(np.zeros((2, 2, 5))),
    }
    with pytest.raises(ValueError, match="dims"):
        condition_stacks(vols, VolumeAssemblyPlan())
