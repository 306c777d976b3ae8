import numpy as np
import pytest
from PIL import Image

from mcae.config import ConfigError
from mcae.data import (
    LIVE,
    SPOOF,
    high_frequency_energy,
    load_domain_dir,
    make_batches,
    make_synthetic_domains,
    random_resized_crop,
    save_domain_dir,
)


def _write(path, size, value):
    arr = np.full((size, size, 3), value, dtype=np.uint8)
    Image.fromarray(arr).save(path)


def test_load_domain_dir_order_and_labels(tmp_path):
    for sub, n in (("live", 3), ("spoof", 2)):
        (tmp_path / "d" / sub).mkdir(parents=True)
        for i in range(n):
            _write(tmp_path / "d" / sub / f"{i}.png", 8, 100)
    ds = load_domain_dir(tmp_path, "d", image_size=8)
    assert len(ds) == 5
    assert ds.labels.tolist() == [1, 1, 1, 0, 0]


def test_load_domain_dir_empty_live(tmp_path):
    (tmp_path / "d" / "live").mkdir(parents=True)
    (tmp_path / "d" / "spoof").mkdir(parents=True)
    _write(tmp_path / "d" / "spoof" / "a.png", 8, 10)
    ds = load_domain_dir(tmp_path, "d", image_size=8)
    assert ds.labels.tolist() == [SPOOF]


def test_load_domain_dir_resizes(tmp_path):
    (tmp_path / "d" / "live").mkdir(parents=True)
    _write(tmp_path / "d" / "live" / "a.png", 128, 200)
    ds = load_domain_dir(tmp_path, "d", image_size=256)
    img = ds.samples[0].image
    assert img.shape == (256, 256, 3)
    assert img.min() >= 0 and img.max() <= 1


def test_save_load_roundtrip(tmp_path):
    (ds,) = make_synthetic_domains(2, 3, 16, 0)[:1]
    save_domain_dir(ds, tmp_path)
    back = load_domain_dir(tmp_path, ds.domain_name, image_size=16)
    assert sorted(back.labels.tolist()) == sorted(ds.labels.tolist())
    # 8-bit storage
    live_a = np.stack([s.image for s in ds.samples if s.label == LIVE])
    live_b = np.stack([s.image for s in back.samples if s.label == LIVE])
    assert np.abs(live_a - live_b).max() <= 0.5 / 255 + 1e-6


def test_crop_identity_and_constant():
    rng = np.random.default_rng(0)
    img = rng.random((16, 16, 3)).astype(np.float32)
    assert np.array_equal(random_resized_crop(img, (1.0, 1.0), 16, rng), img)
    const = np.full((16, 16, 3), 0.3, dtype=np.float32)
    for scale in ((0.2, 0.5), (0.6, 1.0)):
        out = random_resized_crop(const, scale, 16, rng)
        assert np.allclose(out, 0.3, atol=1e-6)


def test_crop_determinism_shape_range():
    img = np.random.default_rng(1).random((32, 32, 3)).astype(np.float32)
    a = random_resized_crop(img, (0.3, 0.9), 24, np.random.default_rng(5))
    b = random_resized_crop(img, (0.3, 0.9), 24, np.random.default_rng(5))
    assert np.array_equal(a, b)
    for lo in (0.05, 0.5, 1.0):
        out = random_resized_crop(img, (lo, 1.0), 32, np.random.default_rng(2))
        assert out.shape == (32, 32, 3) and out.min() >= 0 and out.max() <= 1
    with pytest.raises(ConfigError):
        random_resized_crop(img, (0.0, 1.0), 32, np.random.default_rng(0))


def test_synthetic_counts_and_determinism():
    doms = make_synthetic_domains(3, 10, 64, 0)
    assert len(doms) == 3
    for d in doms:
        assert len(d) == 20 and (d.labels == LIVE).sum() == 10
        imgs = d.images()
        assert imgs.min() >= 0 and imgs.max() <= 1
    again = make_synthetic_domains(3, 10, 64, 0)
    assert all(np.array_equal(a.images(), b.images()) for a, b in zip(doms, again))
    other = make_synthetic_domains(3, 10, 64, 1)
    assert not np.array_equal(doms[0].images(), other[0].images())
    assert [d.labels.tolist() for d in doms] == [d.labels.tolist() for d in other]


def _best_threshold_accuracy(values, labels):
    """Exhaustive 1-D threshold fit, both orientations."""
    best = 0.0
    for t in np.concatenate([[-np.inf], np.sort(values)]):
        pred = values > t
        acc = max(np.mean(pred == (labels == SPOOF)), np.mean(pred == (labels == LIVE)))
        best = max(best, acc)
    return best


@pytest.mark.parametrize("size", [16, 64])
def test_synthetic_liveness_separable_by_hf_energy(size):
    for d in make_synthetic_domains(4, 48, size, 3):
        energy = np.array([high_frequency_energy(s.image) for s in d.samples])
        assert _best_threshold_accuracy(energy, d.labels) >= 0.95


def test_balanced_batches():
    doms = make_synthetic_domains(3, 10, 16, 0)
    batches = list(make_batches(doms, 12, True, 0))
    assert len(batches) == 5
    for b in batches:
        for d in range(3):
            for lab in (LIVE, SPOOF):
                assert ((b.domains == d) & (b.labels == lab)).sum() == 2


def test_oversized_batch_is_single_truncated():
    doms = make_synthetic_domains(2, 3, 16, 0)
    assert len(list(make_batches(doms, 64, False, 0))) == 1
    balanced = list(make_batches(doms, 64, True, 0))
    assert len(balanced) == 1 and len(balanced[0]) == 12


def test_unbalanced_epoch_is_permutation():
    doms = make_synthetic_domains(2, 7, 16, 0)
    batches = list(make_batches(doms, 5, False, 0))
    seen = np.concatenate([b.images.reshape(len(b), -1) for b in batches])
    full = np.concatenate([d.images().reshape(len(d), -1) for d in doms])
    assert len(seen) == len(full)
    assert sorted(map(bytes, seen.astype(np.float32))) == sorted(map(bytes, full.astype(np.float32)))


def test_balanced_batch_size_must_divide():
    doms = make_synthetic_domains(3, 10, 16, 0)
    with pytest.raises(ConfigError):
        list(make_batches(doms, 10, True, 0))
