"""Training loop, evaluation entry points, FPS benchmark, and prediction."""

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, load_manifest_samples, split, synth_generate
from .exceptions import DataError
from .losses import combined_loss, total_loss
from .metrics import binarize, dice, iou
from .model import MugenNet
from .optim import Adam
from .tensor import NumericalError, Tensor


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, **rec):
        self.records.append(rec)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.records, f, indent=1)

    @staticmethod
    def load(path):
        with open(path) as f:
            return TrainLog(records=json.load(f))


def _dataset(cfg):
    """Returns (samples, split_indices) for the configured data source."""
    if cfg.data_dir is not None:
        res = cfg.resolution or ((64, 48) if cfg.preset == "desk" else (256, 192))
        manifest = DatasetManifest.from_directory(cfg.data_dir, res)
        split(manifest, seed=cfg.seed)
        samples = load_manifest_samples(manifest)
    else:
        res = cfg.resolution or (64, 48)
        manifest, samples = synth_generate(cfg.synth_samples, res, cfg.seed)
        split(manifest, seed=cfg.seed)
    idx = {name: [i for i, e in enumerate(manifest.entries) if e["split"] == name]
           for name in ("train", "val", "test")}
    return samples, idx


def _batch(samples, indices):
    images = np.stack([samples[i].image for i in indices])
    masks = np.stack([samples[i].mask for i in indices])
    return Tensor(images), masks


def _score_split(model, samples, indices):
    """Mean Dice/IoU of the fused map over one split (eval mode)."""
    model.eval()
    dices, ious = [], []
    for i in indices:
        x, mask = _batch(samples, [i])
        s_z = model(x)[2].data[0, 0]
        b = binarize(s_z)
        dices.append(dice(b, mask[0]))
        ious.append(iou(b, mask[0]))
    model.train()
    return float(np.mean(dices)), float(np.mean(ious))


def _diagnose_nan(model, x, masks, loss_cfg):
    """Re-run the failing step with per-op finiteness checks to name the culprit."""
    T.set_nan_checks(True)
    try:
        s_t, s_r, s_z = model(x)
        total_loss(s_t, s_r, s_z, masks, loss_cfg)
    finally:
        T.set_nan_checks(False)
    raise NumericalError("loss")        # NaN vanished on replay; still abort


def train(cfg, samples=None, split_indices=None, log_path=None):
    """Train per ``cfg``; returns (TrainLog, model).

    The best-validation checkpoint is written to ``cfg.checkpoint``. Fully
    seeded: same config and seed reproduce the log bit for bit on one worker.
    """
    cfg.validate()
    if samples is None:
        samples, split_indices = _dataset(cfg)
    train_idx, val_idx = split_indices["train"], split_indices["val"]
    if not train_idx or not val_idx:
        raise DataError("train/val splits must be non-empty")

    rng = np.random.default_rng(cfg.seed)
    model = MugenNet(cfg.model_config(), rng=rng)
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = TrainLog()
    best_mdice = -1.0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_idx))
        losses, comp = [], np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_idx[i] for i in order[start:start + cfg.batch_size]]
            x, masks = _batch(samples, batch)
            s_t, s_r, s_z = model(x)
            loss = total_loss(s_t, s_r, s_z, masks, cfg.loss)
            if not np.isfinite(loss.item()):
                _diagnose_nan(model, x, masks, cfg.loss)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            comp += [combined_loss(s.reshape(masks.shape), masks, cfg.loss).item()
                     for s in (s_t, s_r, s_z)]
        val_mdice, val_miou = _score_split(model, samples, val_idx)
        n_steps = max(len(losses), 1)
        log.add(epoch=epoch,
                total_loss=float(np.mean(losses)),
                loss_s_t=comp[0] / n_steps, loss_s_r=comp[1] / n_steps,
                loss_s_z=comp[2] / n_steps,
                val_mdice=val_mdice, val_miou=val_miou,
                wall_time=time.perf_counter() - t0)
        if val_mdice > best_mdice:
            best_mdice = val_mdice
            save_checkpoint(cfg.checkpoint, model.named_state())
    if log_path:
        log.save(log_path)
    return log, model


def load_model(cfg, checkpoint_path=None):
    """Build the configured model and load its checkpoint."""
    model = MugenNet(cfg.model_config(), rng=np.random.default_rng(cfg.seed))
    path = checkpoint_path or cfg.checkpoint
    model.load_state(load_checkpoint(path))
    return model.eval()


def bench_fps(model, n_frames=50, res=None, warmup=5, rng=None):
    """Eval-mode forward throughput on repeated still frames."""
    model.eval()
    cfg = model.cfg
    w, h = (res or cfg.image_size)
    rng = rng or np.random.default_rng(0)
    frame = Tensor(rng.random((1, cfg.in_channels, h, w)).astype(np.float32))
    times = []
    for i in range(warmup + n_frames):
        start = time.perf_counter()
        model(frame)
        elapsed = time.perf_counter() - start
        if i >= warmup:
            times.append(elapsed)
    times = np.array(times)
    return {
        "fps_mean": float(1.0 / times.mean()),
        "fps_p50": float(1.0 / np.median(times)),
        "frame_ms_mean": float(times.mean() * 1e3),
        "n_frames": n_frames,
        "resolution": [w, h],
        "patch_size": cfg.patch.patch_size,
    }


def predict(model, image_file, out_file, binarize_out=None):
    """Write the fused prediction as an 8-bit gray PNG at the input's size."""
    try:
        img = Image.open(image_file).convert("RGB")
    except OSError as e:
        raise DataError(f"cannot read image {image_file}: {e}") from e
    orig_size = img.size
    w, h = model.cfg.image_size
    if orig_size != (w, h):
        if orig_size[0] % 16 or orig_size[1] % 16:
            warnings.warn(f"input size {orig_size} not divisible by 16; "
                          f"resizing to model resolution {(w, h)}")
        img = img.resize((w, h), Image.BILINEAR)
    x = np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None] / 255.0
    model.eval()
    s_z = model(Tensor(x))[2].data[0, 0]
    out = Image.fromarray((s_z * 255.0).round().astype(np.uint8))
    if out.size != orig_size:
        out = out.resize(orig_size, Image.BILINEAR)
    out.save(out_file)
    if binarize_out:
        hard = (np.asarray(out) >= 128).astype(np.uint8) * 255
        Image.fromarray(hard).save(binarize_out)
    return out_file
