"""Domain-labelled face datasets: loading, synthesis, augmentation and batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .config import ConfigError

logger = logging.getLogger(__name__)

LIVE, SPOOF = 1, 0
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class FaceSample:
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    label: int
    domain: int
    source: str = ""

    def __post_init__(self) -> None:
        if self.label not in (LIVE, SPOOF):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.domain < 0:
            raise ValueError("domain id must be >= 0")
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got shape {self.image.shape}")


@dataclass
class DomainDataset:
    samples: list[FaceSample]
    domain_name: str

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError(f"domain {self.domain_name!r} has no samples")
        ids = {s.domain for s in self.samples}
        if len(ids) != 1:
            raise ValueError(f"domain {self.domain_name!r} mixes domain ids {sorted(ids)}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def domain_id(self) -> int:
        return self.samples[0].domain

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def images(self) -> np.ndarray:
        """Stack into an N x 3 x S x S array."""
        return np.stack([s.image.transpose(2, 0, 1) for s in self.samples])


@dataclass
class LabeledBatch:
    images: np.ndarray  # N x 3 x S x S
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self) -> None:
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.domains.shape != (n,):
            raise ValueError("batch leading dimensions disagree")

    def __len__(self) -> int:
        return self.images.shape[0]


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[0] == size and image.shape[1] == size:
        return image.astype(np.float32, copy=True)
    channels = [
        np.asarray(
            Image.fromarray(image[..., c].astype(np.float32), mode="F").resize(
                (size, size), Image.BILINEAR
            )
        )
        for c in range(3)
    ]
    return np.clip(np.stack(channels, axis=-1), 0.0, 1.0).astype(np.float32)


def load_domain_dir(
    root_path: str | Path,
    domain_name: str,
    image_size: int = 256,
    domain_id: int = 0,
) -> DomainDataset:
    """Read ``root/<domain_name>/{live,spoof}/*`` into a dataset.

    Live files come first, then spoof, each sorted by file name. Files PIL
    cannot decode are skipped with a warning.
    """
    base = Path(root_path) / domain_name
    if not base.is_dir():
        raise FileNotFoundError(f"domain directory not found: {base}")
    samples: list[FaceSample] = []
    skipped = 0
    for sub, label in (("live", LIVE), ("spoof", SPOOF)):
        folder = base / sub
        if not folder.is_dir():
            continue
        for path in sorted(folder.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                with Image.open(path) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except (OSError, ValueError) as exc:
                skipped += 1
                logger.warning("skipping undecodable image %s: %s", path, exc)
                continue
            samples.append(FaceSample(resize_bilinear(arr, image_size), label, domain_id, str(path)))
    if skipped:
        logger.warning("%d file(s) skipped in %s", skipped, base)
    ds = DomainDataset(samples, domain_name)
    ds.skipped = skipped  # type: ignore[attr-defined]
    return ds


def list_domains(root_path: str | Path) -> list[str]:
    return sorted(p.name for p in Path(root_path).iterdir() if p.is_dir())


def load_domains(root_path: str | Path, image_size: int, names: Sequence[str] | None = None) -> list[DomainDataset]:
    names = list(names) if names is not None else list_domains(root_path)
    return [load_domain_dir(root_path, name, image_size, i) for i, name in enumerate(names)]


def save_domain_dir(dataset: DomainDataset, root_path: str | Path) -> None:
    base = Path(root_path) / dataset.domain_name
    for sub in ("live", "spoof"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    counters = {LIVE: 0, SPOOF: 0}
    for s in dataset.samples:
        sub = "live" if s.label == LIVE else "spoof"
        pixels = np.round(np.clip(s.image, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(pixels).save(base / sub / f"{counters[s.label]:05d}.png")
        counters[s.label] += 1


def random_resized_crop(
    image: np.ndarray,
    scale_range: tuple[float, float],
    out_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Square crop covering a U(lo, hi) fraction of the area, resized to ``out_size``."""
    lo, hi = scale_range
    if not 0 < lo <= hi <= 1:
        raise ConfigError(f"scale range must satisfy 0 < lo <= hi <= 1, got {scale_range}")
    h, w = image.shape[:2]
    area = rng.uniform(lo, hi) * h * w
    side = int(round(np.sqrt(area)))
    side = max(1, min(side, h, w))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    return resize_bilinear(image[top : top + side, left : left + side], out_size)


MOIRE_STRENGTH = 0.25


def _face_template(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth face-like luminance: an elliptical head with two eyes and a mouth."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    cx = 0.5 + rng.uniform(-0.05, 0.05)
    cy = 0.5 + rng.uniform(-0.05, 0.05)
    rx, ry = rng.uniform(0.28, 0.34), rng.uniform(0.36, 0.42)
    head = np.exp(-(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) ** 2)
    feats = np.zeros_like(head)
    for dx in (-0.12, 0.12):
        feats += np.exp(-(((xx - cx - dx) ** 2 + (yy - cy + 0.1) ** 2) / 0.008))
    feats += np.exp(-(((xx - cx) ** 2) / 0.03 + ((yy - cy - 0.17) ** 2) / 0.006))
    return 0.3 + 0.3 * head - 0.15 * feats * head


def _box_blur(channel: np.ndarray) -> np.ndarray:
    padded = np.pad(channel, 1, mode="edge")
    h, w = channel.shape
    return sum(padded[i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0


def make_synthetic_domains(
    num_domains: int,
    n_per_class: int,
    image_size: int,
    seed: int,
    moire_strength: float = MOIRE_STRENGTH,
) -> list[DomainDataset]:
    """Generate ``num_domains`` datasets of face-like live and spoof images.

    Each domain applies its own colour cast, gain and offset to every image
    regardless of label. Spoof images are blurred and overlaid with a periodic
    moire grating whose strength does not depend on the domain, so liveness
    is separable by construction while domains differ in global statistics.
    """
    if num_domains < 2:
        raise ConfigError("need at least two domains")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    root = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    out = []
    for d in range(num_domains):
        rng = np.random.default_rng(root.integers(2**63))
        # ranges keep every pixel inside [0, 1] for strengths up to 0.25, so
        # clipping never leaks a label-dependent brightness shift
        tint = rng.uniform(0.7, 1.0, size=3)
        gain = rng.uniform(0.7, 0.95)
        offset = rng.uniform(0.08, 0.14)
        samples = []
        for label in (LIVE, SPOOF):
            for _ in range(n_per_class):
                lum = _face_template(image_size, rng)
                img = np.stack([lum * t for t in tint], axis=-1)
                if label == SPOOF:
                    img = np.stack([_box_blur(img[..., c]) for c in range(3)], axis=-1)
                    theta = rng.uniform(0, np.pi)
                    period = rng.uniform(2.0, 3.0)
                    phase = rng.uniform(0, 2 * np.pi)
                    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
                    img = img + moire_strength * wave[..., None]
                img = img + rng.normal(0.0, 0.01, size=img.shape)
                img = np.clip(gain * img + offset, 0.0, 1.0).astype(np.float32)
                samples.append(FaceSample(img, label, d, f"synthetic/d{d}/{label}"))
        out.append(DomainDataset(samples, f"domain{d}"))
    return out


def high_frequency_energy(image: np.ndarray) -> float:
    """Mean squared discrete Laplacian over all channels."""
    lap = (
        -4 * image[1:-1, 1:-1]
        + image[:-2, 1:-1]
        + image[2:, 1:-1]
        + image[1:-1, :-2]
        + image[1:-1, 2:]
    )
    return float(np.mean(lap**2))


def make_batches(
    datasets: Sequence[DomainDataset],
    batch_size: int,
    balanced: bool,
    seed: int,
    *,
    epoch: int = 0,
) -> Iterator[LabeledBatch]:
    """Yield one epoch of batches.

    Balanced mode draws ``batch_size / (2 * num_domains)`` samples from every
    (domain, label) cell per batch and stops when the smallest cell runs out.
    Unbalanced mode is a uniform shuffle of the union; the last batch may be
    short.
    """
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    rng = np.random.default_rng([seed, epoch])
    pool = [s for ds in datasets for s in ds.samples]
    if not balanced:
        order = rng.permutation(len(pool))
        for start in range(0, len(order), batch_size):
            yield _collate([pool[i] for i in order[start : start + batch_size]])
        return

    cells = 2 * len(datasets)
    if batch_size % cells:
        raise ConfigError(f"balanced batch_size {batch_size} must be divisible by {cells}")
    per_cell = batch_size // cells
    groups = []
    for ds in datasets:
        for label in (LIVE, SPOOF):
            idx = [i for i, s in enumerate(ds.samples) if s.label == label]
            if not idx:
                raise ConfigError(f"domain {ds.domain_name!r} has no samples with label {label}")
            groups.append([ds.samples[i] for i in rng.permutation(idx)])
    smallest = min(len(g) for g in groups)
    if smallest < per_cell:
        # not enough data for one full batch: one truncated, still balanced batch
        per_cell, steps = smallest, 1
    else:
        steps = smallest // per_cell
    for b in range(steps):
        chosen = []
        for g in groups:
            chosen.extend(g[b * per_cell : (b + 1) * per_cell])
        yield _collate([chosen[i] for i in rng.permutation(len(chosen))])


def _collate(samples: Sequence[FaceSample]) -> LabeledBatch:
    return LabeledBatch(
        images=np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        domains=np.array([s.domain for s in samples], dtype=np.int64),
    )


def relabel_domains(datasets: Sequence[DomainDataset]) -> list[DomainDataset]:
    """Renumber domain ids 0..k-1 in the given order."""
    return [
        DomainDataset([FaceSample(s.image, s.label, i, s.source) for s in ds.samples], ds.domain_name)
        for i, ds in enumerate(datasets)
    ]
