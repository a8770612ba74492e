"""Training loop: AdamW (decoupled weight decay) with a one-cycle schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tokenizer as tk
from ..core import Sketch
from ..handdraw import AffineAugment, apply_affine, patchify
from .data import constraint_batch, constraint_example, pad_triples
from .models import ConstraintModel, ImagePrimitiveModel, ModelConfig, PrimitiveModel

__all__ = ["TrainConfig", "NonFiniteLoss", "AdamW", "one_cycle_lr", "train"]


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 3e-5  # initial LR at reference batch 128, scaled linearly
    peak_factor: float = 10.0  # one-cycle peak = peak_factor * initial
    warmup_frac: float = 0.3
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    noise_sigma: float = 0.0  # constraint model: Gaussian sigma on params
    affine_augment: bool = False  # image model: random affine per selection
    seed: int = 0

    def initial_lr(self) -> float:
        return self.base_lr * self.batch_size / 128.0


def one_cycle_lr(step: int, total_steps: int, initial: float,
                 peak_factor: float = 10.0, warmup_frac: float = 0.3) -> float:
    """Linear warmup from the initial LR to its peak, cosine back down to a
    tenth of the initial LR."""
    peak = initial * peak_factor
    warm = max(1, int(total_steps * warmup_frac))
    if step < warm:
        return initial + (peak - initial) * step / warm
    rest = max(1, total_steps - warm)
    t = min(1.0, (step - warm) / rest)
    floor = initial / 10.0
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


class AdamW:
    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, clip_norm: float = 0.0):
        self.t += 1
        if clip_norm > 0:
            total = math.sqrt(
                sum(
                    float((p.grad * p.grad).sum())
                    for p in self.params.values()
                    if p.grad is not None
                )
            )
            scale = clip_norm / total if total > clip_norm else 1.0
        else:
            scale = 1.0
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            p.data -= self.lr * self.weight_decay * p.data  # decoupled decay
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    model: object
    loss_curve: list[tuple[int, float]] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _step(model, loss_tensor, opt, lr, clip_norm):
    loss = float(loss_tensor.data)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss} at optimizer step {opt.t + 1}")
    model.zero_grad()
    loss_tensor.backward()
    opt.lr = lr
    opt.step(clip_norm)
    return loss


def train(
    model_kind: str,
    corpus,
    cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig | None = None,
    tok_cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG,
    model=None,
) -> TrainResult:
    """Train one of the three model kinds.

    corpus:
      primitive         — list of token-triple sequences or normalized Sketches
      constraint        — list of normalized Sketches (noise re-drawn per epoch)
      image_conditional — list of (normalized Sketch, RasterImage) pairs
    """
    rng = np.random.default_rng(cfg.seed)
    curve: list[tuple[int, float]] = []

    if model_kind == "primitive":
        seqs = [
            tk.encode_primitives(s, tok_cfg) if isinstance(s, Sketch) else s
            for s in corpus
        ]
        model = model or PrimitiveModel(model_cfg, seed=cfg.seed)
        opt = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
        total = cfg.epochs * max(1, math.ceil(len(seqs) / cfg.batch_size))
        step = 0
        for epoch in range(cfg.epochs):
            ep_loss, nb = 0.0, 0
            for idx in _batches(len(seqs), cfg.batch_size, rng):
                triples, real = pad_triples([seqs[i] for i in idx])
                lr = one_cycle_lr(step, total, cfg.initial_lr(), cfg.peak_factor, cfg.warmup_frac)
                ep_loss += _step(model, model.loss(triples, real), opt, lr, cfg.clip_norm)
                nb += 1
                step += 1
            curve.append((epoch, ep_loss / max(nb, 1)))
        return TrainResult(model, curve)

    if model_kind == "constraint":
        sketches = list(corpus)
        model = model or ConstraintModel(model_cfg, seed=cfg.seed, tok_cfg=tok_cfg)
        opt = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
        total = cfg.epochs * max(1, math.ceil(len(sketches) / cfg.batch_size))
        step = 0
        for epoch in range(cfg.epochs):
            ep_loss, nb = 0.0, 0
            for idx in _batches(len(sketches), cfg.batch_size, rng):
                examples = [
                    constraint_example(sketches[i], tok_cfg, cfg.noise_sigma, rng)
                    for i in idx
                ]
                batch = constraint_batch(examples)
                lr = one_cycle_lr(step, total, cfg.initial_lr(), cfg.peak_factor, cfg.warmup_frac)
                ep_loss += _step(model, model.loss(batch), opt, lr, cfg.clip_norm)
                nb += 1
                step += 1
            curve.append((epoch, ep_loss / max(nb, 1)))
        return TrainResult(model, curve)

    if model_kind == "image_conditional":
        # entries are (sketch, image) or (sketch, [variant images]); with
        # several variants one is chosen at random per epoch, optionally
        # re-augmented with a random affine transform
        pairs = [
            (s, list(imgs) if isinstance(imgs, (list, tuple)) else [imgs])
            for s, imgs in corpus
        ]
        seqs = [tk.encode_primitives(s, tok_cfg) for s, _ in pairs]
        aug = AffineAugment()
        model = model or ImagePrimitiveModel(model_cfg, seed=cfg.seed)
        opt = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
        total = cfg.epochs * max(1, math.ceil(len(seqs) / cfg.batch_size))
        step = 0
        for epoch in range(cfg.epochs):
            ep_loss, nb = 0.0, 0
            for idx in _batches(len(seqs), cfg.batch_size, rng):
                triples, real = pad_triples([seqs[i] for i in idx])
                chosen = []
                for i in idx:
                    img = pairs[i][1][rng.integers(len(pairs[i][1]))]
                    if cfg.affine_augment:
                        img = apply_affine(img, aug, seed=int(rng.integers(2**31)))
                    chosen.append(patchify(img))
                lr = one_cycle_lr(step, total, cfg.initial_lr(), cfg.peak_factor, cfg.warmup_frac)
                loss_t = model.loss(triples, real, np.stack(chosen))
                ep_loss += _step(model, loss_t, opt, lr, cfg.clip_norm)
                nb += 1
                step += 1
            curve.append((epoch, ep_loss / max(nb, 1)))
        return TrainResult(model, curve)

    raise ValueError(f"unknown model kind {model_kind!r}")
