"""
Samples, NetPBM dataset I/O, the synthetic shapes generator and augmentation
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage

import netpbm
from backbone import DOWNSAMPLE
from errors import DimensionMismatchError, MalformedHeaderError

logger = logging.getLogger(__name__)

T = TypeVar("T")

PathLike = Union[str, Path]

MANIFEST = "manifest.txt"
IMAGES_DIR = "images"
MASKS_DIR = "masks"

MIN_FOREGROUND = 0.05
MAX_FOREGROUND = 0.5
SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Sample:
    """image [3, H, W] in [0, 1], mask [1, H, W] with values in {0, 1}"""

    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"Sample {self.id}: image must be [3, H, W], got {self.image.shape}")
        if self.mask.ndim != 3 or self.mask.shape[0] != 1:
            raise ValueError(f"Sample {self.id}: mask must be [1, H, W], got {self.mask.shape}")
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise DimensionMismatchError(
                f"Sample {self.id}: image is {self.image.shape[1:]} but mask is {self.mask.shape[1:]}"
            )
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError(f"Sample {self.id}: mask is not binary")

    @property
    def size(self) -> Tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]


class AugmentConfig(BaseModel):
    rotate_max_deg: float = Field(default=15.0, ge=0, le=180, description="Rotation angle drawn from +-this")
    crop_fraction: float = Field(default=0.9, gt=0, le=1, description="Smallest crop side as a fraction of the image")
    brightness: float = Field(default=0.2, ge=0, lt=1, description="Multiplicative brightness jitter range")
    saturation: float = Field(default=0.2, ge=0, lt=1, description="Multiplicative saturation jitter range")
    contrast: float = Field(default=0.2, ge=0, lt=1, description="Multiplicative contrast jitter range")
    hflip_prob: float = Field(default=0.5, ge=0, le=1)
    seed: int = Field(default=0, description="Augmentation streams are keyed by (seed, index)")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(rotate_max_deg=0, crop_fraction=1.0, brightness=0, saturation=0, contrast=0, hflip_prob=0, seed=seed)


# --- file I/O --------------------------------------------------------------

def load_sample(image_path: PathLike, mask_path: PathLike, sample_id: Optional[str] = None) -> Sample:
    pixels = netpbm.read(image_path)
    if pixels.ndim != 3:
        raise MalformedHeaderError(f"{image_path}: images must be P6 pixmaps")
    mask_pixels = netpbm.read(mask_path)
    if mask_pixels.ndim != 2:
        raise MalformedHeaderError(f"{mask_path}: masks must be P5 greymaps")
    if pixels.shape[:2] != mask_pixels.shape:
        raise DimensionMismatchError(
            f"{image_path} is {pixels.shape[1]}x{pixels.shape[0]} but {mask_path} is "
            f"{mask_pixels.shape[1]}x{mask_pixels.shape[0]}"
        )
    image = netpbm.to_unit(pixels).transpose(2, 0, 1)
    mask = (netpbm.to_unit(mask_pixels) >= 0.5).astype(np.float64)[None]
    return Sample(image=image, mask=mask, id=sample_id or Path(image_path).stem)


def save_sample(sample: Sample, image_path: PathLike, mask_path: PathLike) -> None:
    netpbm.write(image_path, netpbm.from_unit(sample.image.transpose(1, 2, 0)))
    netpbm.write(mask_path, netpbm.from_unit(sample.mask[0]))


def write_dataset(samples: Sequence[Sample], out_dir: PathLike) -> Path:
    """images/<id>.ppm, masks/<id>.pgm and a manifest listing the ids in order"""
    out = Path(out_dir)
    (out / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    (out / MASKS_DIR).mkdir(parents=True, exist_ok=True)
    for sample in samples:
        save_sample(sample, out / IMAGES_DIR / f"{sample.id}.ppm", out / MASKS_DIR / f"{sample.id}.pgm")
    (out / MANIFEST).write_text("".join(f"{s.id}\n" for s in samples), encoding="utf-8")
    logger.info(f"Wrote {len(samples)} samples to {out}")
    return out


def read_manifest(data_dir: PathLike) -> List[str]:
    text = (Path(data_dir) / MANIFEST).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def read_dataset(data_dir: PathLike, workers: int = 1) -> List[Sample]:
    root = Path(data_dir)
    ids = read_manifest(root)

    def load(sample_id: str) -> Sample:
        return load_sample(root / IMAGES_DIR / f"{sample_id}.ppm", root / MASKS_DIR / f"{sample_id}.pgm", sample_id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(load, ids))
    else:
        samples = [load(sample_id) for sample_id in ids]
    logger.info(f"Loaded {len(samples)} samples from {root}")
    return samples


# --- synthetic generator ---------------------------------------------------

def _shape_mask(rng: np.random.Generator, kind: str, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    side = min(h, w)
    cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
    if kind == "ellipse":
        ry, rx = rng.uniform(0.1, 0.3, size=2) * side
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == "rectangle":
        hh, hw = rng.uniform(0.08, 0.28, size=2) * side
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    radius = rng.uniform(0.15, 0.35) * side
    angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.0, 4.0]) * np.pi / 3 + rng.uniform(-0.4, 0.4, size=3)
    vy, vx = cy + radius * np.sin(angles), cx + radius * np.cos(angles)
    signs = []
    for i in range(3):
        j = (i + 1) % 3
        signs.append((vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i]))
    signs = np.stack(signs)
    return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth per-channel gradient plus low-amplitude noise"""
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    base = rng.uniform(0.25, 0.75, size=(3, 1, 1))
    slope = rng.uniform(-0.2, 0.2, size=(3, 2, 1, 1))
    noise = rng.normal(0.0, 0.04, size=(3, h, w))
    return base + slope[:, 0] * (yy - 0.5) + slope[:, 1] * (xx - 0.5) + noise


def _contrasting_color(rng: np.random.Generator, background_mean: np.ndarray) -> np.ndarray:
    while True:
        color = rng.uniform(0.0, 1.0, size=3)
        if np.max(np.abs(color - background_mean)) >= 0.35:
            return color


def synth_sample(seed: int, index: int, size: Tuple[int, int] = (64, 64)) -> Sample:
    """1-3 non-overlapping filled shapes on a textured background, deterministic in (seed, index)"""
    h, w = size
    rng = np.random.default_rng([seed, index])
    attempts = 0
    while True:
        attempts += 1
        if attempts % 100 == 0:
            logger.warning(f"synth sample {index}: {attempts} rejected layouts so far")
        n_shapes = int(rng.integers(1, 4))
        shapes = []
        union = np.zeros((h, w), dtype=bool)
        for _ in range(n_shapes):
            for _ in range(20):
                candidate = _shape_mask(rng, SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))], h, w)
                if candidate.any() and not (candidate & union).any():
                    shapes.append(candidate)
                    union |= candidate
                    break
        fraction = union.mean()
        if shapes and MIN_FOREGROUND <= fraction <= MAX_FOREGROUND:
            break

    background = _background(rng, h, w)
    image = background.copy()
    for shape in shapes:
        color = _contrasting_color(rng, background.mean(axis=(1, 2)))
        image[:, shape] = color[:, None]
    image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, mask=union.astype(np.float64)[None], id=f"s{seed}_{index:05d}")


def synth_dataset(seed: int, n: int, size: Tuple[int, int] = (64, 64)) -> List[Sample]:
    if n < 1:
        raise ValueError(f"synth_dataset needs n >= 1, got {n}")
    h, w = size
    if h % DOWNSAMPLE or w % DOWNSAMPLE or h <= 0 or w <= 0:
        raise ValueError(f"size must be positive multiples of {DOWNSAMPLE}, got {size}")
    return [synth_sample(seed, index, size) for index in range(n)]


# --- augmentation ----------------------------------------------------------

def _jitter_factor(rng: np.random.Generator, spread: float) -> float:
    factor = rng.uniform(1.0 - spread, 1.0 + spread)
    return 1.0 if spread == 0 else float(factor)


def _photometric(image: np.ndarray, brightness: float, saturation: float, contrast: float) -> np.ndarray:
    if brightness != 1.0:
        image = image * brightness
    if saturation != 1.0:
        gray = np.tensordot(LUMA, image, axes=1)[None]
        image = gray + saturation * (image - gray)
    if contrast != 1.0:
        mean = image.mean()
        image = mean + contrast * (image - mean)
    return np.clip(image, 0.0, 1.0)


def _crop_resize(image: np.ndarray, mask: np.ndarray, top: int, left: int, ch: int, cw: int):
    h, w = image.shape[1:]
    zoom = (1.0, h / ch, w / cw)
    image = ndimage.zoom(image[:, top:top + ch, left:left + cw], zoom, order=1, mode="nearest", grid_mode=True)
    mask = ndimage.zoom(mask[:, top:top + ch, left:left + cw], zoom, order=0, mode="nearest", grid_mode=True)
    return image, mask


def augment(sample: Sample, cfg: AugmentConfig, index: int) -> Sample:
    """
    Photometric jitter on the image, then rotation, crop-and-resize and
    horizontal flip applied to image and mask alike. Operations whose draw is
    the identity are skipped so an all-zero config returns the input unchanged.
    """
    rng = np.random.default_rng([cfg.seed, index])
    h, w = sample.size
    brightness = _jitter_factor(rng, cfg.brightness)
    saturation = _jitter_factor(rng, cfg.saturation)
    contrast = _jitter_factor(rng, cfg.contrast)
    angle = float(rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg)) if cfg.rotate_max_deg else 0.0
    fraction = float(rng.uniform(cfg.crop_fraction, 1.0)) if cfg.crop_fraction < 1 else 1.0
    ch, cw = max(1, int(round(h * fraction))), max(1, int(round(w * fraction)))
    top, left = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
    flip = bool(rng.uniform() < cfg.hflip_prob)

    image = _photometric(sample.image, brightness, saturation, contrast)
    mask = sample.mask
    if angle:
        image = ndimage.rotate(image, angle, axes=(1, 2), reshape=False, order=1, mode="nearest")
        mask = ndimage.rotate(mask, angle, axes=(1, 2), reshape=False, order=0, mode="constant", cval=0.0)
    if (ch, cw) != (h, w):
        image, mask = _crop_resize(image, mask, top, left, ch, cw)
    if flip:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    image = np.ascontiguousarray(np.clip(image, 0.0, 1.0))
    mask = np.ascontiguousarray((mask >= 0.5).astype(np.float64))
    return Sample(image=image, mask=mask, id=sample.id)


# --- batching --------------------------------------------------------------

def stack_batch(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    """[B, 3, H, W] images and [B, 1, H, W] masks"""
    sizes = {s.size for s in samples}
    if len(sizes) != 1:
        raise DimensionMismatchError(f"batch mixes sample sizes {sorted(sizes)}")
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


def iter_batches(samples: Sequence[T], batch_size: int, order: Optional[Sequence[int]] = None) -> Iterator[List[T]]:
    """Consecutive chunks of `samples` visited in `order`; the last chunk may be short"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = range(len(samples)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]
