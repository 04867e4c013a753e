"""Dataset synthesis, ingestion, preprocessing, and batch sampling.

The synthetic benchmark pairs procedurally generated base images with
targets produced by invertible tone curves (per-channel gain, gamma,
lift). A small enhancer can learn these to high PSNR at 64x64, which makes
single-task / all-tasks / task-adaptive comparisons meaningful at desk
scale. Everything is a pure function of the seed.

On-disk layout for paired directories:

    root/source/<name>.png
    root/<task>/<name>.png        one subdirectory per task, matching names
    root/manifest.json            optional, written by the synthesizer
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)          # train / val / test


class DataError(RuntimeError):
    pass


# -- styles -------------------------------------------------------------------

@dataclass
class SyntheticStyle:
    """Invertible tone curve: clip(gain_c * x_c**gamma + lift, 0, 1)."""

    name: str
    gamma: float
    gains: Tuple[float, float, float]
    lift: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0 or any(g <= 0 for g in self.gains):
            raise ValueError("gamma and gains must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "gamma": self.gamma,
                "gains": list(self.gains), "lift": self.lift}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticStyle":
        return cls(name=d["name"], gamma=d["gamma"],
                   gains=tuple(d["gains"]), lift=d["lift"])


IDENTITY_STYLE = SyntheticStyle("identity", 1.0, (1.0, 1.0, 1.0), 0.0)


def default_styles() -> List[SyntheticStyle]:
    return [
        SyntheticStyle("warm", 0.75, (1.20, 1.00, 0.80), 0.03),
        SyntheticStyle("cool", 1.40, (0.80, 0.95, 1.20), 0.00),
        SyntheticStyle("bright", 0.55, (1.05, 1.05, 1.05), 0.05),
    ]


def apply_style(x: np.ndarray, style: SyntheticStyle) -> np.ndarray:
    gains = np.asarray(style.gains, dtype=np.float32).reshape(3, 1, 1)
    out = gains * np.power(np.clip(x, 0.0, 1.0), style.gamma) + style.lift
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- image IO and preprocessing ------------------------------------------------

def load_image(path) -> np.ndarray:
    """PNG file to float32 (3,H,W) in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, arr: np.ndarray) -> None:
    arr = np.clip(np.asarray(arr), 0.0, 1.0)
    img = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)[None, :, None]
    wx = (xs - x0).astype(img.dtype)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_pad(x: np.ndarray, edge: int = 512) -> Tuple[np.ndarray, np.ndarray]:
    """Resize so the longer edge equals `edge`, zero-pad bottom/right square.

    Returns (padded image, boolean content mask) so downstream metrics can
    exclude the padding.
    """
    c, h, w = x.shape
    if h < 1 or w < 1:
        raise DataError(f"degenerate image of shape {x.shape}")
    scale = edge / max(h, w)
    nh = max(1, round(h * scale))
    nw = max(1, round(w * scale))
    resized = _resize_bilinear(x, nh, nw) if (nh, nw) != (h, w) else x
    out = np.zeros((c, edge, edge), dtype=np.float32)
    out[:, :nh, :nw] = resized
    mask = np.zeros((edge, edge), dtype=bool)
    mask[:nh, :nw] = True
    return out, mask


def crop_to_mask(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    h = int(mask.any(axis=1).sum())
    w = int(mask.any(axis=0).sum())
    return x[:, :h, :w]


# -- synthetic base images ------------------------------------------------------

def _smooth(noise: np.ndarray, passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        noise = (noise + np.roll(noise, 1, 0) + np.roll(noise, -1, 0)
                 + np.roll(noise, 1, 1) + np.roll(noise, -1, 1)) / 5.0
    return noise


def synth_base_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Smooth gradients + random shapes + noise texture, in [0,1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    img = np.zeros((3, size, size), dtype=np.float32)
    for ch in range(3):
        gx, gy = rng.uniform(-1, 1, 2)
        img[ch] = 0.5 + 0.3 * (gx * (xx - 0.5) + gy * (yy - 0.5))
    cx, cy = rng.uniform(0.25, 0.75, 2)
    radius = rng.uniform(0.2, 0.5)
    blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2)))
    img += rng.uniform(-0.25, 0.25) * blob[None]
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.1, 0.9, 3).astype(np.float32)
        if rng.random() < 0.5:
            sx, sy = rng.uniform(0.1, 0.9, 2)
            r = rng.uniform(0.05, 0.25)
            region = ((xx - sx) ** 2 + (yy - sy) ** 2) < r ** 2
        else:
            x0, y0 = rng.uniform(0.0, 0.7, 2)
            x1 = x0 + rng.uniform(0.1, 0.3)
            y1 = y0 + rng.uniform(0.1, 0.3)
            region = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
        alpha = rng.uniform(0.4, 0.9)
        img = np.where(region[None], (1 - alpha) * img
                       + alpha * color[:, None, None], img)
    texture = _smooth(rng.uniform(-1, 1, (size, size)).astype(np.float32))
    img += 0.06 * texture[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# -- dataset containers -----------------------------------------------------------

@dataclass
class PairedSample:
    source: np.ndarray          # (3,H,W) float32
    target: np.ndarray
    task_id: int
    image_id: str
    mask: Optional[np.ndarray] = None    # content mask when zero-padded


@dataclass
class PairedDataset:
    task_names: List[str]
    splits: Dict[str, List[PairedSample]]
    styles: Optional[List[SyntheticStyle]] = None
    seed: Optional[int] = None

    def split(self, name: str) -> List[PairedSample]:
        if name not in self.splits:
            raise DataError(f"split {name!r} missing; have "
                            f"{sorted(self.splits)}")
        return self.splits[name]

    def subset_task(self, task_id: int) -> "PairedDataset":
        return PairedDataset(
            task_names=self.task_names,
            splits={k: [s for s in v if s.task_id == task_id]
                    for k, v in self.splits.items()},
            styles=self.styles, seed=self.seed)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "task_names": self.task_names,
            "styles": ([s.to_dict() for s in self.styles]
                       if self.styles else None),
            "splits": {k: sorted({s.image_id for s in v})
                       for k, v in self.splits.items()},
        }


def _split_indices(n: int) -> Dict[str, range]:
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_val = int(n * SPLIT_FRACTIONS[1])
    return {"train": range(0, n_train),
            "val": range(n_train, n_train + n_val),
            "test": range(n_train + n_val, n)}


def make_synthetic_dataset(n_images: int, styles: Sequence[SyntheticStyle],
                           seed: int, size: int = 64) -> PairedDataset:
    """n_images base images, one paired sample per (image, style)."""
    if n_images < 1 or len(styles) < 1:
        raise DataError("need at least one image and one style")
    bases = [synth_base_image(np.random.default_rng([seed, i]), size)
             for i in range(n_images)]
    splits: Dict[str, List[PairedSample]] = {}
    for split_name, idx in _split_indices(n_images).items():
        samples = []
        for i in idx:
            for t, style in enumerate(styles):
                samples.append(PairedSample(
                    source=bases[i], target=apply_style(bases[i], style),
                    task_id=t, image_id=f"img{i:05d}"))
        splits[split_name] = samples
    return PairedDataset(task_names=[s.name for s in styles], splits=splits,
                         styles=list(styles), seed=seed)


def write_dataset_dir(ds: PairedDataset, root) -> None:
    root = Path(root)
    (root / "source").mkdir(parents=True, exist_ok=True)
    for task in ds.task_names:
        (root / task).mkdir(parents=True, exist_ok=True)
    seen = set()
    for samples in ds.splits.values():
        for s in samples:
            if s.image_id not in seen:
                save_image(root / "source" / f"{s.image_id}.png", s.source)
                seen.add(s.image_id)
            save_image(root / ds.task_names[s.task_id] / f"{s.image_id}.png",
                       s.target)
    (root / "manifest.json").write_text(json.dumps(ds.manifest(), indent=2))


def load_paired_dir(root, task_names: Sequence[str],
                    edge: Optional[int] = None) -> PairedDataset:
    """Load root/source/*.png and root/<task>/*.png with matching names.

    Missing counterparts are an error naming the file, never silently
    skipped. Ordering and the 80/10/10 split are functions of the sorted
    source filenames alone. When `edge` is given every image is resized
    to that longer edge and zero-padded square; the padding mask rides on
    each sample so losses and metrics can exclude it.
    """
    root = Path(root)
    src_dir = root / "source"
    if not src_dir.is_dir():
        raise DataError(f"missing source directory {src_dir}")
    names = sorted(p.name for p in src_dir.glob("*.png"))
    if not names:
        raise DataError(f"no source images found in {src_dir}")
    for task in task_names:
        for name in names:
            if not (root / task / name).exists():
                raise DataError(f"missing target file {root / task / name}")
    styles = None
    seed = None
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        m = json.loads(manifest_path.read_text())
        if m.get("styles"):
            styles = [SyntheticStyle.from_dict(d) for d in m["styles"]]
        seed = m.get("seed")
    splits: Dict[str, List[PairedSample]] = {}
    for split_name, idx in _split_indices(len(names)).items():
        samples = []
        for i in idx:
            raw_source = load_image(src_dir / names[i])
            source, mask = raw_source, None
            if edge is not None:
                source, mask = resize_pad(raw_source, edge)
            for t, task in enumerate(task_names):
                target = load_image(root / task / names[i])
                if target.shape != raw_source.shape:
                    raise DataError(
                        f"{root / task / names[i]}: shape {target.shape} "
                        f"does not match source {raw_source.shape}")
                if edge is not None:
                    target, _ = resize_pad(target, edge)
                samples.append(PairedSample(source=source, target=target,
                                            task_id=t,
                                            image_id=Path(names[i]).stem,
                                            mask=mask))
        splits[split_name] = samples
    return PairedDataset(task_names=list(task_names), splits=splits,
                         styles=styles, seed=seed)


# -- batch sampling ---------------------------------------------------------------

@dataclass
class Batch:
    sources: np.ndarray          # (B,3,H,W)
    targets: np.ndarray
    task_ids: np.ndarray         # (B,)
    image_ids: List[str]
    masks: Optional[np.ndarray] = None   # (B,H,W) bool, present iff padded


def _stack(samples: Sequence[PairedSample], indices) -> Batch:
    chosen = [samples[i] for i in indices]
    masks = None
    if all(s.mask is not None for s in chosen):
        masks = np.stack([s.mask for s in chosen])
    return Batch(
        sources=np.stack([s.source for s in chosen]),
        targets=np.stack([s.target for s in chosen]),
        task_ids=np.array([s.task_id for s in chosen], dtype=np.int64),
        image_ids=[s.image_id for s in chosen],
        masks=masks)


def sample_batches(samples: Sequence[PairedSample], batch: int, seed: int,
                   mode: str = "paired") -> Iterator[Batch]:
    """Endless seeded batch stream; reshuffles each epoch.

    paired: aligned (source, target, task) tuples. unpaired: the source
    column and the (target, task) columns are drawn from independently
    shuffled pools, so no alignment survives.
    """
    if not samples:
        raise DataError("empty dataset")
    if batch > len(samples):
        raise DataError(f"batch {batch} exceeds dataset size {len(samples)}")
    if mode not in ("paired", "unpaired"):
        raise DataError(f"unknown sampling mode {mode!r}")
    n = len(samples)
    epoch = 0
    while True:
        rng_src = np.random.default_rng([seed, epoch, 0])
        perm_src = rng_src.permutation(n)
        if mode == "unpaired":
            rng_tgt = np.random.default_rng([seed, epoch, 1])
            perm_tgt = rng_tgt.permutation(n)
        for start in range(0, n, batch):
            idx_src = perm_src[start:start + batch]
            b = _stack(samples, idx_src)
            if mode == "unpaired":
                idx_tgt = perm_tgt[start:start + batch]
                tgt = _stack(samples, idx_tgt)
                b = Batch(sources=b.sources, targets=tgt.targets,
                          task_ids=tgt.task_ids,
                          image_ids=[f"{a}|{c}" for a, c in
                                     zip(b.image_ids, tgt.image_ids)],
                          masks=b.masks)
            yield b
        epoch += 1


def batches_per_epoch(n_samples: int, batch: int) -> int:
    return -(-n_samples // batch)
