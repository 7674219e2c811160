"""Alternating adversarial training plus tiled sliding-window inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import SegSample
from .losses import (ConfusionMatrix, cross_entropy, dice_loss,
                     discriminator_objective, generator_objective, mean_f1,
                     mse_loss, one_hot, overall_accuracy)
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,g_loss,d_loss,d_real,d_fake,val_mean_f1,val_oa"


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0001
    batch_size: int = 8           # paper-scale runs use 16
    epochs: int = 30
    seed: int = 0
    d_steps_per_g_step: int = 1
    d_lr_scale: float = 0.1       # discriminator lr = lr * d_lr_scale
    d_win_margin: float = 0.3     # pause D updates once it wins by this margin
    mu: float = 0.5               # pixel-distance weight
    alpha: float = 0.5            # region-overlap weight
    use_gan: bool = True
    use_structural: bool = True   # MSE + Dice terms
    augment: bool = True
    stop_at_f1: float = None      # optional early stop on validation mean F1

    def validate(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid training configuration")
        if self.d_lr_scale < 0 or not (0 <= self.d_win_margin <= 0.5):
            raise ValueError("invalid discriminator balance settings")
        if not (0 <= self.mu <= 1 and 0 <= self.alpha <= 1):
            raise ValueError("loss weights must lie in [0,1]")


@dataclass
class SlidingWindowConfig:
    tile: int = 448
    overlap: int = 32
    semantics: str = "overlap"    # "overlap": stride = tile - overlap; "stride": stride = overlap

    @property
    def stride(self):
        s = self.tile - self.overlap if self.semantics == "overlap" else self.overlap
        if not 0 < s <= self.tile:
            raise ValueError(f"invalid tile/overlap: tile={self.tile} overlap={self.overlap}")
        return s


def augment(sample: SegSample, rng: np.random.Generator) -> SegSample:
    """Random flips, 90-degree rotations, and nearest-neighbor rescaling.

    The label map undergoes the identical geometric transform; an identity
    draw returns the sample bit-exactly.
    """
    img, lbl = sample.image, sample.label
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    rot = int(rng.integers(0, 4))
    scale = float(rng.choice([0.75, 1.0, 1.25]))
    if flip_h:
        img, lbl = img[:, :, ::-1], lbl[:, ::-1]
    if flip_v:
        img, lbl = img[:, ::-1, :], lbl[::-1, :]
    if rot:
        img = np.rot90(img, rot, axes=(1, 2))
        lbl = np.rot90(lbl, rot)
    if scale != 1.0:
        img, lbl = _rescale(img, lbl, scale)
    return SegSample(image=np.ascontiguousarray(img), label=np.ascontiguousarray(lbl),
                     name=sample.name, split=sample.split)


def _rescale(img, lbl, scale):
    _, h, w = img.shape
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    ys = np.minimum((np.arange(nh) / scale).astype(np.intp), h - 1)
    xs = np.minimum((np.arange(nw) / scale).astype(np.intp), w - 1)
    img2 = img[:, ys][:, :, xs]
    lbl2 = lbl[ys][:, xs]
    if nh >= h:                                    # center crop back to (h, w)
        top, left = (nh - h) // 2, (nw - w) // 2
        return img2[:, top:top + h, left:left + w], lbl2[top:top + h, left:left + w]
    pt, pl = (h - nh) // 2, (w - nw) // 2          # center pad with edge replication
    pad_img = ((0, 0), (pt, h - nh - pt), (pl, w - nw - pl))
    pad_lbl = ((pt, h - nh - pt), (pl, w - nw - pl))
    return np.pad(img2, pad_img, mode="edge"), np.pad(lbl2, pad_lbl, mode="edge")


@dataclass
class StepReport:
    g_loss: float
    d_loss: float
    d_real: float
    d_fake: float
    skipped: bool = False


def _set_requires_grad(params, flag):
    for p in params:
        p.requires_grad = flag


def _batch_mean(values):
    acc = values[0]
    for v in values[1:]:
        acc = acc + v
    return acc * (1.0 / len(values))


def train_step(batch, G, D, opt_g: Adam, opt_d: Adam, cfg: TrainConfig) -> StepReport:
    """One discriminator update (generator frozen) then one generator update
    (discriminator frozen). Non-finite losses abort the affected update."""
    if not batch:
        raise ValueError("empty batch")
    k = G.config.num_classes
    d_loss_val, d_real_val, d_fake_val = 0.0, 0.5, 0.5
    skipped = False

    if cfg.use_gan:
        for _ in range(cfg.d_steps_per_g_step):
            d_reals, d_fakes = [], []
            for s in batch:
                img = Tensor(s.image)
                with T.no_grad():
                    fake = T.softmax(G(img).transpose(1, 2, 0)).transpose(2, 0, 1)
                oh = Tensor(one_hot(s.label, k))
                d_reals.append(D(oh, img).reshape(1))
                d_fakes.append(D(Tensor(fake.data), img).reshape(1))
            dr = T.concat(d_reals)
            df = T.concat(d_fakes)
            loss_d = discriminator_objective(dr, df)
            d_loss_val = loss_d.item()
            d_real_val = float(dr.data.mean())
            d_fake_val = float(df.data.mean())
            if not np.isfinite(d_loss_val):
                log.warning("non-finite discriminator loss; update skipped")
                skipped = True
            elif (d_real_val > 1.0 - cfg.d_win_margin
                  and d_fake_val < cfg.d_win_margin):
                # D already separates real from fake decisively; pausing its
                # updates keeps the generator's adversarial gradient usable
                pass
            else:
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()
                opt_d.zero_grad()

    d_params = D.parameters()
    _set_requires_grad(d_params, False)
    try:
        losses = []
        for s in batch:
            img = Tensor(s.image)
            logits = G(img)
            probs = T.softmax(logits.transpose(1, 2, 0)).transpose(2, 0, 1)
            oh = one_hot(s.label, k)
            d_fake = D(probs, img).reshape(1) if cfg.use_gan else None
            mu = cfg.mu if cfg.use_structural else 0.0
            alpha = cfg.alpha if cfg.use_structural else 0.0
            losses.append(generator_objective(logits, s.label, probs, oh,
                                              d_fake=d_fake, mu=mu, alpha=alpha))
        loss_g = _batch_mean(losses)
        g_loss_val = loss_g.item()
        if not np.isfinite(g_loss_val):
            log.warning("non-finite generator loss; update skipped")
            skipped = True
        else:
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()
            opt_g.zero_grad()
    finally:
        _set_requires_grad(d_params, True)

    return StepReport(g_loss=g_loss_val, d_loss=d_loss_val,
                      d_real=d_real_val, d_fake=d_fake_val, skipped=skipped)


def evaluate(G, samples) -> ConfusionMatrix:
    """Direct-forward evaluation (samples are assumed tile-sized)."""
    cm = ConfusionMatrix(G.config.num_classes)
    for s in samples:
        with T.no_grad():
            logits = G(Tensor(s.image)).data
        cm.update(np.argmax(logits, axis=0), s.label)
    return cm


def train(train_samples, val_samples, G, D, cfg: TrainConfig, out_dir,
          class_names=None):
    """Run the alternating optimization; returns (history_rows, ckpt_path).

    Writes ``history.csv`` (one row per epoch) and a checkpoint at the best
    validation mean F1. Deterministic given the seed.
    """
    from .checkpoint import save_models          # local import to avoid cycle

    cfg.validate()
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opt_g = Adam(G.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                 weight_decay=cfg.weight_decay)
    opt_d = Adam(D.parameters(), lr=cfg.lr * cfg.d_lr_scale, beta1=cfg.beta1,
                 beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    ckpt_path = out / "checkpoint.bin"
    history = []
    best_f1 = -1.0
    save_models(ckpt_path, G, D, cfg)            # 0-epoch runs still persist a model
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_samples))
        g_losses, d_losses, d_reals, d_fakes = [], [], [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(s, rng) for s in batch]
            rep = train_step(batch, G, D, opt_g, opt_d, cfg)
            g_losses.append(rep.g_loss)
            d_losses.append(rep.d_loss)
            d_reals.append(rep.d_real)
            d_fakes.append(rep.d_fake)
        cm = evaluate(G, val_samples)
        row = dict(epoch=epoch, g_loss=float(np.mean(g_losses)),
                   d_loss=float(np.mean(d_losses)), d_real=float(np.mean(d_reals)),
                   d_fake=float(np.mean(d_fakes)), val_mean_f1=mean_f1(cm),
                   val_oa=overall_accuracy(cm))
        history.append(row)
        log.info("epoch %d: g=%.4f d=%.4f valF1=%.4f OA=%.4f",
                 epoch, row["g_loss"], row["d_loss"], row["val_mean_f1"], row["val_oa"])
        _write_history(out / "history.csv", history)
        if row["val_mean_f1"] > best_f1:
            best_f1 = row["val_mean_f1"]
            save_models(ckpt_path, G, D, cfg)
        if cfg.stop_at_f1 is not None and row["val_mean_f1"] >= cfg.stop_at_f1:
            log.info("early stop: validation mean F1 %.4f reached target", row["val_mean_f1"])
            break
    _write_history(out / "history.csv", history)
    return history, ckpt_path


def _write_history(path, history):
    lines = [HISTORY_HEADER]
    for r in history:
        lines.append(f"{r['epoch']},{r['g_loss']:.6f},{r['d_loss']:.6f},"
                     f"{r['d_real']:.6f},{r['d_fake']:.6f},"
                     f"{r['val_mean_f1']:.6f},{r['val_oa']:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def tile_positions(length, tile, stride):
    """Start offsets covering [0, length) with the final tile flush to the end."""
    if tile > length:
        raise ValueError(f"tile {tile} exceeds padded extent {length}")
    starts = list(range(0, length - tile + 1, stride))
    if starts[-1] != length - tile:
        starts.append(length - tile)
    return starts


def sliding_window_infer(image: np.ndarray, G, swc: SlidingWindowConfig,
                         return_counts=False):
    """Tile the raster, average per-pixel logits over covering tiles, argmax.

    Images smaller than the tile are reflection-padded and cropped after.
    """
    c, h, w = image.shape
    ph, pw = max(swc.tile, h), max(swc.tile, w)
    div = G.config.min_divisor
    if swc.tile % div:
        raise ValueError(f"tile {swc.tile} incompatible with model divisor {div}")
    padded = image
    if (ph, pw) != (h, w):
        if ph - h >= h or pw - w >= w:
            raise ValueError(
                f"image {h}x{w} too small for tile {swc.tile}; "
                f"needs padding of ({ph - h},{pw - w}) exceeding the image itself")
        padded = np.pad(image, ((0, 0), (0, ph - h), (0, pw - w)), mode="reflect")
    k = G.config.num_classes
    acc = np.zeros((k, ph, pw), dtype=np.float64)
    counts = np.zeros((ph, pw), dtype=np.int64)
    for ty in tile_positions(ph, swc.tile, swc.stride):
        for tx in tile_positions(pw, swc.tile, swc.stride):
            tile_img = padded[:, ty:ty + swc.tile, tx:tx + swc.tile]
            with T.no_grad():
                logits = G(Tensor(np.ascontiguousarray(tile_img))).data
            acc[:, ty:ty + swc.tile, tx:tx + swc.tile] += logits
            counts[ty:ty + swc.tile, tx:tx + swc.tile] += 1
    mean_logits = acc / counts
    labels = np.argmax(mean_logits[:, :h, :w], axis=0)
    if return_counts:
        return labels, counts[:h, :w]
    return labels
