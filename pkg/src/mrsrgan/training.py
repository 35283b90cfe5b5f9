"""Generator pretraining, adversarial training, checkpoints and the experiment log."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import losses
from .dataset import SliceImage, _crop_or_pad_array
from .degradation import DegradationSpec, downsample_array
from .errors import CheckpointError, DivergenceError, TrainError
from .metrics import IDENTICAL, MetricParams, psnr, ssim
from .model import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LATEST = "latest.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    pretrain_epochs: int = 20
    adversarial_epochs: int = 50
    seed: int = 0
    degradation: DegradationSpec = DegradationSpec(4, 4)
    loss_weights: losses.LossWeights = losses.LossWeights()
    # optimizer steps per batch in the adversarial phase, D first then G
    d_steps: int = 1
    g_steps: int = 1

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.adversarial_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.d_steps < 1 or self.g_steps < 1:
            raise ValueError("d_steps and g_steps must be >= 1")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["degradation"] = self.degradation.to_dict()
        d["loss_weights"] = self.loss_weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("degradation"), dict):
            d["degradation"] = DegradationSpec(**d["degradation"])
        if isinstance(d.get("loss_weights"), dict):
            d["loss_weights"] = losses.LossWeights(**d["loss_weights"])
        return cls(**d)


@dataclass
class TrainData:
    lr: torch.Tensor  # (n, 1, h, w)
    hr: torch.Tensor  # (n, 1, H, W)

    def __len__(self):
        return self.hr.shape[0]


def make_training_data(
    slices: Sequence[SliceImage], degradation: DegradationSpec, image_size: int = 224
) -> TrainData:
    """Crop/pad slices to ``image_size`` squares and synthesize their LR inputs."""
    if not slices:
        return TrainData(torch.zeros(0, 1, 1, 1), torch.zeros(0, 1, image_size, image_size))
    hr = np.stack([_crop_or_pad_array(s.pixels, image_size, image_size) for s in slices])
    lr = downsample_array(hr, degradation)
    return TrainData(
        torch.as_tensor(lr[:, None], dtype=torch.float32),
        torch.as_tensor(hr[:, None], dtype=torch.float32),
    )


class ExperimentLog:
    """Append-only JSON-lines log; the first record is a header with the configs."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self.header: dict | None = None

    def write_header(self, **fields):
        self.header = {"type": "header", **fields}
        self._append(self.header)

    def append(self, record: dict):
        record = {"type": "epoch", **record}
        self.records.append(record)
        self._append(record)

    def _append(self, rec):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @staticmethod
    def read(path) -> tuple[dict | None, list[dict]]:
        header, records = None, []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("type") == "header":
                    header = rec
                else:
                    records.append(rec)
        return header, records


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    phase: str = "pretrain"
    pretrain_epoch: int = 0
    adversarial_epoch: int = 0
    step: int = 0
    experiment: str = ""
    extra: dict = field(default_factory=dict)


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)


def init_state(
    gcfg: GeneratorConfig,
    dcfg: DiscriminatorConfig,
    cfg: TrainConfig,
    experiment: str = "",
) -> TrainState:
    g = build_generator(gcfg, seed=cfg.seed)
    d = build_discriminator(dcfg, seed=cfg.seed + 1)
    rng = torch.Generator().manual_seed(cfg.seed)
    return TrainState(g, d, _adam(g.parameters(), cfg), _adam(d.parameters(), cfg), rng, experiment=experiment)


def validation_indices(n: int, cfg: TrainConfig) -> np.ndarray:
    """Fixed seeded subset of the training images used for online validation."""
    k = min(cfg.batch_size, n)
    return np.sort(np.random.default_rng(cfg.seed).choice(n, size=k, replace=False))


def online_validation(g: Generator, data: TrainData, idx, params: MetricParams = MetricParams()) -> tuple:
    was_training = g.training
    g.eval()
    with torch.no_grad():
        sr = g(data.lr[idx]).double().numpy()[:, 0]
    g.train(was_training)
    hr = data.hr[idx].double().numpy()[:, 0]
    psnrs = [psnr(s, h, params) for s, h in zip(sr, hr)]
    psnrs = [v for v in psnrs if v is not IDENTICAL]
    val_psnr = float(np.mean(psnrs)) if psnrs else None
    val_ssim = float(np.mean([ssim(s, h, params) for s, h in zip(sr, hr)]))
    return val_psnr, val_ssim


def _batches(n: int, batch_size: int, rng: torch.Generator):
    perm = torch.randperm(n, generator=rng)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _finite(*values) -> bool:
    return all(math.isfinite(float(v.detach() if isinstance(v, torch.Tensor) else v)) for v in values)


def _all_finite(t: torch.Tensor) -> bool:
    return bool(torch.isfinite(t.detach()).all())


def _emit(hooks, event, state):
    for h in hooks or ():
        h(event, state)


def _end_epoch(state, cfg, data, val_idx, elog, ckpt_dir, phase, epoch, g_losses, d_losses, t0):
    val_psnr, val_ssim = online_validation(state.generator, data, val_idx)
    record = {
        "phase": phase,
        "epoch": epoch,
        "step": state.step,
        "g_loss": float(np.mean(g_losses)),
        "d_loss": float(np.mean(d_losses)) if d_losses else None,
        "val_psnr": val_psnr,
        "val_ssim": val_ssim,
        "wall_time": time.perf_counter() - t0,
    }
    if elog is not None:
        elog.append(record)
    log.info("%s epoch %d: g_loss=%.5f val_psnr=%s", phase, epoch, record["g_loss"], val_psnr)
    if ckpt_dir is not None:
        ckpt_dir = Path(ckpt_dir)
        save_checkpoint(state, ckpt_dir / f"{phase}_epoch_{epoch:04d}.ckpt", cfg)
        save_checkpoint(state, ckpt_dir / LATEST, cfg)
    return record


def _diverged(what, ckpt_dir):
    latest = Path(ckpt_dir) / LATEST if ckpt_dir is not None else None
    keep = latest if latest is not None and latest.exists() else None
    return DivergenceError(f"non-finite {what}; last good checkpoint: {keep}", checkpoint=keep)


def pretrain_generator(
    state: TrainState,
    data: TrainData,
    cfg: TrainConfig,
    elog: ExperimentLog | None = None,
    checkpoint_dir=None,
) -> TrainState:
    """Generator-only pixel-MSE warm-up for ``cfg.pretrain_epochs`` epochs."""
    if len(data) == 0:
        raise TrainError("empty training set")
    g = state.generator
    g.train()
    val_idx = validation_indices(len(data), cfg)
    while state.pretrain_epoch < cfg.pretrain_epochs:
        t0 = time.perf_counter()
        g_losses = []
        for idx in _batches(len(data), cfg.batch_size, state.rng):
            state.opt_g.zero_grad()
            loss = losses.pixel_mse(g(data.lr[idx]), data.hr[idx])
            if not _finite(loss):
                raise _diverged("pretraining loss", checkpoint_dir)
            loss.backward()
            state.opt_g.step()
            state.step += 1
            g_losses.append(loss.item())
        state.pretrain_epoch += 1
        _end_epoch(state, cfg, data, val_idx, elog, checkpoint_dir, "pretrain", state.pretrain_epoch, g_losses, [], t0)
    return state


def adversarial_train(
    state: TrainState,
    data: TrainData,
    cfg: TrainConfig,
    extractor: losses.FeatureExtractor | None,
    elog: ExperimentLog | None = None,
    checkpoint_dir=None,
    hooks: Sequence[Callable] | None = None,
    cold: bool = False,
) -> TrainState:
    """Alternating per-batch discriminator / generator updates.

    Each batch runs ``cfg.d_steps`` discriminator steps on (HR, detached SR)
    followed by ``cfg.g_steps`` generator steps on the perceptual loss.  The
    generator's Adam moments are reset when this phase starts.
    """
    if len(data) == 0:
        raise TrainError("empty training set")
    if state.pretrain_epoch < cfg.pretrain_epochs and not cold:
        raise TrainError(
            f"generator pretrained for {state.pretrain_epoch}/{cfg.pretrain_epochs} epochs; pass cold=True to skip"
        )
    if cfg.adversarial_epochs == 0:
        return state
    g, d = state.generator, state.discriminator
    if state.phase != "adversarial":
        state.opt_g = _adam(g.parameters(), cfg)
        state.phase = "adversarial"
        log.info("adversarial phase: generator Adam moments reset")
    g.train()
    d.train()
    w = cfg.loss_weights
    val_idx = validation_indices(len(data), cfg)
    while state.adversarial_epoch < cfg.adversarial_epochs:
        t0 = time.perf_counter()
        g_losses, d_losses = [], []
        for idx in _batches(len(data), cfg.batch_size, state.rng):
            lr, hr = data.lr[idx], data.hr[idx]
            for _ in range(cfg.d_steps):
                with torch.no_grad():
                    sr = g(lr)
                state.opt_d.zero_grad()
                d_hr, d_sr = d(hr), d(sr)
                if not (_all_finite(sr) and _all_finite(d_hr) and _all_finite(d_sr)):
                    raise _diverged("network output", checkpoint_dir)
                loss_d = losses.discriminator_loss(d_hr, d_sr)
                if not _finite(loss_d):
                    raise _diverged("discriminator loss", checkpoint_dir)
                loss_d.backward()
                state.opt_d.step()
                _emit(hooks, "d_step", state)
            for _ in range(cfg.g_steps):
                state.opt_g.zero_grad()
                sr = g(lr)
                d_sr = d(sr)
                if not (_all_finite(sr) and _all_finite(d_sr)):
                    raise _diverged("network output", checkpoint_dir)
                loss_g = losses.perceptual_loss(sr, hr, d_sr, extractor, w)
                if not _finite(loss_g):
                    raise _diverged("generator loss", checkpoint_dir)
                loss_g.backward()
                state.opt_g.step()
                _emit(hooks, "g_step", state)
            state.step += 1
            g_losses.append(loss_g.item())
            d_losses.append(loss_d.item())
        state.adversarial_epoch += 1
        _end_epoch(
            state, cfg, data, val_idx, elog, checkpoint_dir, "adversarial", state.adversarial_epoch, g_losses, d_losses, t0
        )
    return state


def train(
    state: TrainState,
    data: TrainData,
    cfg: TrainConfig,
    extractor: losses.FeatureExtractor | None,
    elog: ExperimentLog | None = None,
    checkpoint_dir=None,
    hooks=None,
) -> TrainState:
    """Both phases, resuming wherever ``state`` left off."""
    if len(data) == 0:
        raise TrainError("empty training set")
    pretrain_generator(state, data, cfg, elog, checkpoint_dir)
    adversarial_train(state, data, cfg, extractor, elog, checkpoint_dir, hooks)
    if checkpoint_dir is not None:
        save_checkpoint(state, Path(checkpoint_dir) / LATEST, cfg)
    return state


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(state: TrainState, path, cfg: TrainConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "experiment": state.experiment,
        "generator_config": state.generator.cfg.to_dict(),
        "discriminator_config": state.discriminator.cfg.to_dict(),
        "train_config": cfg.to_dict() if cfg is not None else None,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng_state": state.rng.get_state(),
        "phase": state.phase,
        "pretrain_epoch": state.pretrain_epoch,
        "adversarial_epoch": state.adversarial_epoch,
        "step": state.step,
        "extra": state.extra,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def _read_checkpoint(path) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: no such checkpoint") from exc
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        found = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"{path}: checkpoint version {found!r}, expected {CHECKPOINT_VERSION}")
    return payload


def load_checkpoint(path) -> tuple[TrainState, TrainConfig | None]:
    payload = _read_checkpoint(path)
    try:
        gcfg = GeneratorConfig.from_dict(payload["generator_config"])
        dcfg = DiscriminatorConfig(**payload["discriminator_config"])
        cfg = TrainConfig.from_dict(payload["train_config"]) if payload["train_config"] else TrainConfig()
        state = init_state(gcfg, dcfg, cfg, experiment=payload["experiment"])
        state.generator.load_state_dict(payload["generator"])
        state.discriminator.load_state_dict(payload["discriminator"])
        state.phase = payload["phase"]
        if state.phase == "adversarial":
            state.opt_g = _adam(state.generator.parameters(), cfg)
        state.opt_g.load_state_dict(payload["opt_g"])
        state.opt_d.load_state_dict(payload["opt_d"])
        state.rng.set_state(payload["rng_state"])
        state.pretrain_epoch = payload["pretrain_epoch"]
        state.adversarial_epoch = payload["adversarial_epoch"]
        state.step = payload["step"]
        state.extra = payload.get("extra", {})
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return state, (TrainConfig.from_dict(payload["train_config"]) if payload["train_config"] else None)


def load_generator(path) -> tuple[Generator, str]:
    """Generator (eval mode) and experiment name from a checkpoint."""
    payload = _read_checkpoint(path)
    try:
        g = build_generator(GeneratorConfig.from_dict(payload["generator_config"]))
        g.load_state_dict(payload["generator"])
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    g.eval()
    return g, payload["experiment"]
