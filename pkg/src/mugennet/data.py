"""Dataset ingestion, 7:2:1 splitting, and the synthetic ellipse generator.

On-disk layout: ``images/`` and ``masks/`` with matching stems, plus a
``manifest.json`` holding [{image, mask, split}, ...]. Images resize
bilinearly, masks with nearest neighbor (keeps them binary), binarized at
128/255.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ConfigError, DataError

MASK_THRESHOLD = 128


@dataclass
class SegSample:
    image: np.ndarray      # (C, H, W) float32 in [0, 1]
    mask: np.ndarray       # (H, W) float32 in {0, 1}


@dataclass
class DatasetManifest:
    name: str
    resolution: tuple                  # (width, height)
    entries: list = field(default_factory=list)   # {"image", "mask", "split"}

    def for_split(self, split):
        return [e for e in self.entries if e.get("split") == split]

    def save(self, path):
        with open(path, "w") as f:
            json.dump({"name": self.name, "resolution": list(self.resolution),
                       "entries": self.entries}, f, indent=1)

    @staticmethod
    def load(path):
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read manifest {path}: {e}") from e
        return DatasetManifest(name=raw["name"], resolution=tuple(raw["resolution"]),
                               entries=raw["entries"])

    @staticmethod
    def from_directory(root, resolution, name=None):
        """Scan ``root``/images and ``root``/masks for matching stems."""
        root = Path(root)
        manifest_path = root / "manifest.json"
        if manifest_path.exists():
            m = DatasetManifest.load(manifest_path)
            m.entries = [{**e, "image": str(root / e["image"]),
                          "mask": str(root / e["mask"])} for e in m.entries]
            return m
        img_dir, mask_dir = root / "images", root / "masks"
        if not img_dir.is_dir() or not mask_dir.is_dir():
            raise DataError(f"{root} lacks images/ and masks/ subdirectories")
        entries = []
        for img in sorted(img_dir.iterdir()):
            mask = mask_dir / (img.stem + ".png")
            if not mask.exists():
                raise DataError(f"no mask for image {img.name}")
            entries.append({"image": str(img), "mask": str(mask), "split": "test"})
        if not entries:
            raise DataError(f"{img_dir} contains no images")
        return DatasetManifest(name=name or root.name, resolution=resolution,
                               entries=entries)


def load_sample(image_file, mask_file, target_res):
    """Read one image/mask pair at ``target_res`` = (width, height)."""
    w, h = target_res
    if w <= 0 or h <= 0:
        raise DataError(f"bad target resolution {target_res}")
    if w % 16 or h % 16:
        raise DataError(f"target resolution {target_res} must be divisible by 16")
    try:
        img = Image.open(image_file).convert("RGB")
        msk = Image.open(mask_file).convert("L")
    except OSError as e:
        raise DataError(f"cannot read sample ({image_file}, {mask_file}): {e}") from e
    if img.size[0] == 0 or img.size[1] == 0:
        raise DataError(f"zero-sized image {image_file}")
    if img.size != (w, h):
        img = img.resize((w, h), Image.BILINEAR)
    if msk.size != (w, h):
        msk = msk.resize((w, h), Image.NEAREST)
    image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    mask = (np.asarray(msk) >= MASK_THRESHOLD).astype(np.float32)
    return SegSample(image=image, mask=mask)


def load_manifest_samples(manifest, split=None):
    entries = manifest.entries if split is None else manifest.for_split(split)
    return [load_sample(e["image"], e["mask"], manifest.resolution) for e in entries]


def split(manifest, ratios=(0.7, 0.2, 0.1), seed=0):
    """Assign train/val/test splits: seeded shuffle, floor counts, remainder to train."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")
    n = len(manifest.entries)
    if n == 0:
        raise DataError("cannot split an empty manifest")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    names = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    for pos, idx in enumerate(order):
        manifest.entries[idx]["split"] = names[pos]
    return manifest


# -- synthetic data ----------------------------------------------------------


def _low_freq_noise(rng, h, w, cells=6, lo=0.0, hi=1.0):
    coarse = rng.uniform(lo, hi, (cells, cells))
    img = Image.fromarray((coarse * 255).astype(np.uint8))
    return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64) / 255.0


def _ellipse_mask(h, w, cx, cy, a, b):
    ys, xs = np.mgrid[0:h, 0:w]
    return ((xs - cx) ** 2 / a ** 2 + (ys - cy) ** 2 / b ** 2) <= 1.0


def synth_sample(rng, res):
    """One synthetic sample: textured background plus 0-3 bright ellipses."""
    w, h = res
    bg = 0.20 + 0.25 * _low_freq_noise(rng, h, w)
    bg += rng.normal(0.0, 0.015, (h, w))
    mask = np.zeros((h, w), dtype=bool)
    ellipses = []
    if rng.random() >= 0.1:                      # ~10% of samples stay empty
        for _ in range(40):                      # resample until area is sane
            n_ell = rng.integers(1, 4)
            cand = []
            m = np.zeros((h, w), dtype=bool)
            for _ in range(n_ell):
                a = rng.uniform(0.08, 0.22) * w
                b = rng.uniform(0.08, 0.22) * h
                cx = rng.uniform(0.15 * w, 0.85 * w)
                cy = rng.uniform(0.15 * h, 0.85 * h)
                cand.append((cx, cy, a, b))
                m |= _ellipse_mask(h, w, cx, cy, a, b)
            frac = m.mean()
            if 0.0 < frac < 0.5:
                mask, ellipses = m, cand
                break
    fg_tex = 0.60 + 0.30 * _low_freq_noise(rng, h, w)
    gray = np.where(mask, fg_tex, bg)
    gray += rng.normal(0.0, 0.01, (h, w))
    gray = np.clip(gray, 0.0, 1.0)
    chan_scale = rng.uniform(0.9, 1.0, 3)
    image = np.clip(gray[None] * chan_scale[:, None, None], 0.0, 1.0).astype(np.float32)
    return SegSample(image=image, mask=mask.astype(np.float32)), ellipses


def synth_generate(n, res, seed, out_dir=None, name="synthetic"):
    """Deterministic synthetic dataset; optionally written to ``out_dir``.

    Returns (manifest, samples). With ``out_dir`` set, PNGs land in images/
    and masks/ and the manifest is saved alongside them.
    """
    w, h = res
    if w % 16 or h % 16:
        raise ConfigError(f"resolution {res} must be divisible by 16")
    rng = np.random.default_rng(seed)
    samples, entries = [], []
    for i in range(n):
        sample, _ = synth_sample(rng, res)
        samples.append(sample)
        entries.append({"image": f"images/{i:05d}.png", "mask": f"masks/{i:05d}.png",
                        "split": "train"})
    manifest = DatasetManifest(name=name, resolution=(w, h), entries=entries)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            rgb = (s.image.transpose(1, 2, 0) * 255).round().astype(np.uint8)
            Image.fromarray(rgb).save(out / "images" / f"{i:05d}.png")
            Image.fromarray((s.mask * 255).astype(np.uint8)).save(
                out / "masks" / f"{i:05d}.png")
        manifest.save(out / "manifest.json")
    return manifest, samples
