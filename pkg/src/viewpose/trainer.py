"""Unsupervised pretext training of the auto-encoder."""

from __future__ import annotations

import json
import logging
import math
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data.dataset import MultiViewDataset
from .data.sampling import collate_tuples, make_training_tuple
from .geometry import rotate_translate
from .losses import (
    LossBreakdown,
    LossWeights,
    equivariance_loss,
    reconstruction_loss_1,
    reconstruction_loss_2,
    total_loss,
    view_invariant_loss,
)
from .model import ModelConfig, ViewPoseAutoEncoder, load_checkpoint, save_checkpoint
from .seeding import numpy_stream, seed_torch

log = logging.getLogger(__name__)

LOSS_PRESETS = {
    "full": (True, True),
    "rec-only": (False, False),
    "equiv": (False, True),
    "invar": (True, False),
}


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class PretextConfig:
    learning_rate: float = 2e-4
    batch_size: int = 5
    epochs: int = 20
    weights: LossWeights = field(default_factory=LossWeights)
    use_invar: bool = True
    use_equiv: bool = True
    seed: int = 0
    flip_prob: float = 0.5
    max_shift: int | None = None  # pixels; None means resolution // 4
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def with_preset(cls, preset: str, **kwargs) -> "PretextConfig":
        if preset not in LOSS_PRESETS:
            raise ValueError(f"unknown loss preset {preset!r}; choose from {sorted(LOSS_PRESETS)}")
        use_invar, use_equiv = LOSS_PRESETS[preset]
        return cls(use_invar=use_invar, use_equiv=use_equiv, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepMetrics:
    step: int
    epoch: int
    losses: LossBreakdown
    wall_time: float

    def record(self) -> dict:
        return {"step": self.step, "epoch": self.epoch, **self.losses.as_dict(),
                "wall_time": self.wall_time}


def select_rotations(rot_vk, rot_wk, rot_vm, rot_wn, rng):
    """Per-sample choice between frame-k and random-frame rotations.

    One uniform ``r`` is drawn per view and sample; ``r < 0.5`` keeps the
    frame-k rotation. Returns ``(Rv, Rw, from_k)`` with ``from_k`` a boolean
    array of shape ``(B, 2)``.
    """
    batch = rot_vk.shape[0]
    r = np.asarray(rng.random((batch, 2)))
    from_k = r < 0.5
    keep = torch.from_numpy(from_k).to(rot_vk.device).unsqueeze(-1)
    Rv = torch.where(keep[:, 0], rot_vk, rot_vm)
    Rw = torch.where(keep[:, 1], rot_wk, rot_wn)
    return Rv, Rw, from_k


def compute_losses(model: ViewPoseAutoEncoder, batch: dict, rng, weights: LossWeights,
                   use_invar: bool = True, use_equiv: bool = True) -> LossBreakdown:
    Iv, Iw = batch["Iv_k"], batch["Iw_k"]
    Av, Aw = batch["aug_v"], batch["aug_w"]
    B = Iv.shape[0]

    Pv, Pw = model.encode_pose(torch.cat([Iv, Iw])).split(B)
    Vv, Vw = model.encode_viewpoint(torch.cat([Iv, Iw])).split(B)
    Vm, Vn = model.encode_viewpoint(torch.cat([batch["Iv_m"], batch["Iw_n"]])).split(B)
    Rv, Rw, _ = select_rotations(Vv[:, :3], Vw[:, :3], Vm[:, :3], Vn[:, :3], rng)
    Tv, Tw = Vv[:, 3:], Vw[:, 3:]

    Sv = rotate_translate(Pv, Rv, Tv)
    Sw = rotate_translate(Pw, Rw, Tw)
    rec_v, rec_w = model.decode(torch.cat([Sv, Sw])).split(B)
    rec1 = reconstruction_loss_1(Iv, Iw, rec_v, rec_w)

    if use_invar:
        invar = view_invariant_loss(model.decode, Iv, Iw, Rv, Rw, Tv, Tw, Pv, Pw)
    else:
        invar = torch.zeros((), dtype=rec1.dtype)

    # augmented frames: own translation, rotation of the original view
    PAv, PAw = model.encode_pose(torch.cat([Av, Aw])).split(B)
    VAv, VAw = model.encode_viewpoint(torch.cat([Av, Aw])).split(B)
    SAv = rotate_translate(PAv, Rv, VAv[:, 3:])
    SAw = rotate_translate(PAw, Rw, VAw[:, 3:])
    equiv = equivariance_loss(Sv, Sw, SAv, SAw, batch["delta_1"], batch["delta_2"])
    rec_av, rec_aw = model.decode(torch.cat([SAv, SAw])).split(B)
    rec2 = reconstruction_loss_2(Av, Aw, rec_av, rec_aw)

    out = total_loss(invar, equiv, rec1, rec2, weights, use_invar=use_invar, use_equiv=use_equiv)
    check_finite(out)
    return out


def check_finite(losses: LossBreakdown) -> None:
    for name in ("invar", "equiv", "rec1", "rec2", "total"):
        value = getattr(losses, name)
        value = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite loss component {name!r}: {value}")


def make_optimizer(model: ViewPoseAutoEncoder, cfg: PretextConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)


def training_step(model, optimizer, batch: dict, cfg: PretextConfig, rng,
                  step: int = 0, epoch: int = 0) -> StepMetrics:
    model.train()
    t0 = time.perf_counter()
    optimizer.zero_grad(set_to_none=True)
    losses = compute_losses(model, batch, rng, cfg.weights, cfg.use_invar, cfg.use_equiv)
    losses.total.backward()
    optimizer.step()
    return StepMetrics(step=step, epoch=epoch, losses=losses.detached(),
                       wall_time=time.perf_counter() - t0)


def epoch_items(dataset: MultiViewDataset, rng) -> list[tuple[int, tuple[int, int]]]:
    """Every (scene, unordered view pair) once, in shuffled order."""
    items = [(i, pair) for i in range(len(dataset)) for pair in dataset.view_pairs()]
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def iterate_batches(dataset: MultiViewDataset, cfg: PretextConfig, rng):
    items = epoch_items(dataset, rng)
    for start in range(0, len(items), cfg.batch_size):
        tuples = []
        for scene, views in items[start:start + cfg.batch_size]:
            pair = dataset.sequences[scene]
            k = int(rng.integers(pair.n_frames))
            tuples.append(make_training_tuple(pair, k, rng, views=views,
                                              max_shift=cfg.max_shift, flip_prob=cfg.flip_prob))
        yield collate_tuples(tuples)


def build_model(model_cfg: ModelConfig, seed: int) -> ViewPoseAutoEncoder:
    seed_torch(seed, "model-init")
    return ViewPoseAutoEncoder(model_cfg)


def train(dataset: MultiViewDataset, cfg: PretextConfig, model_cfg: ModelConfig | None = None,
          out_dir=None, resume_from=None, model: ViewPoseAutoEncoder | None = None,
          progress=None) -> Path:
    """Run the pretext optimisation; returns the final checkpoint path.

    Writes ``checkpoints/epoch_XXX.pt`` per epoch, ``final.pt`` and a
    ``metrics.jsonl`` log (one record per step) under ``out_dir``. Each epoch
    reseeds its numpy and torch streams from ``(cfg.seed, epoch)`` so a run
    resumed from an epoch checkpoint continues identically.
    """
    if dataset.views_per_scene < 2:
        raise ValueError("pretext training needs at least two views per scene")
    if out_dir is None:
        raise ValueError("out_dir is required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"

    start_epoch, step = 0, 0
    if resume_from is not None:
        model, blob = load_checkpoint(resume_from)
        optimizer = make_optimizer(model, cfg)
        optimizer.load_state_dict(blob["optimizer"])
        start_epoch = int(blob["epoch"])
        step = int(blob["extra"].get("step", 0))
    else:
        if model is None:
            model_cfg = model_cfg or ModelConfig(resolution=dataset.resolution)
            model = build_model(model_cfg, cfg.seed)
        optimizer = make_optimizer(model, cfg)
    if model.cfg.resolution != dataset.resolution:
        raise ValueError(f"model resolution {model.cfg.resolution} != dataset resolution {dataset.resolution}")

    metrics_path = out_dir / "metrics.jsonl"
    mode = "a" if resume_from is not None and metrics_path.exists() else "w"
    final = out_dir / "final.pt"
    if cfg.epochs == 0 or start_epoch >= cfg.epochs:
        save_checkpoint(final, model, optimizer, epoch=start_epoch, extra={"step": step})
        return final

    with open(metrics_path, mode) as sink:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            rng = numpy_stream(cfg.seed, "training", epoch)
            seed_torch(cfg.seed, "training", epoch)
            for batch in iterate_batches(dataset, cfg, rng):
                step += 1
                m = training_step(model, optimizer, batch, cfg, rng, step=step, epoch=epoch)
                sink.write(json.dumps(m.record()) + "\n")
                if progress is not None:
                    progress(m)
            sink.flush()
            log.info("epoch %d done, last total %.5f", epoch, m.losses.total)
            extra = {"step": step, "pretext_config": cfg.to_dict()}
            if cfg.checkpoint_every_epoch:
                save_checkpoint(ckpt_dir / f"epoch_{epoch:03d}.pt", model, optimizer, epoch, extra)
    save_checkpoint(final, model, optimizer, epoch=cfg.epochs, extra=extra)
    return final


@torch.no_grad()
def validation_loss(model: ViewPoseAutoEncoder, dataset: MultiViewDataset, cfg: PretextConfig,
                    seed: int = 0) -> float:
    """Mean total loss over one deterministic pass of tuples, evaluation mode."""
    was_training = model.training
    model.eval()
    rng = numpy_stream(seed, "validation")
    total, count = 0.0, 0
    try:
        for batch in iterate_batches(dataset, replace(cfg, flip_prob=0.0), rng):
            b = batch["Iv_k"].shape[0]
            losses = compute_losses(model, batch, rng, cfg.weights, cfg.use_invar, cfg.use_equiv)
            total += float(losses.total) * b
            count += b
    finally:
        model.train(was_training)
    if count == 0:
        raise ValueError("validation set is empty")
    return total / count


@dataclass
class SweepReport:
    sizes: list[int]
    fold_losses: dict[int, list[float]]
    means: dict[int, float]
    argmin: int

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "fold_losses": {str(k): v for k, v in self.fold_losses.items()},
            "mean_total_loss": {str(k): v for k, v in self.means.items()},
            "argmin": self.argmin,
        }

    def table(self) -> str:
        """Text table: one column per size, one row of mean total loss."""
        head = "| L_total \\ N | " + " | ".join(str(n) for n in self.sizes) + " |"
        sep = "|" + "---|" * (len(self.sizes) + 1)
        row = "| mean | " + " | ".join(
            (f"**{self.means[n]:.4g}**" if n == self.argmin else f"{self.means[n]:.4g}")
            for n in self.sizes
        ) + " |"
        return "\n".join([head, sep, row, "", f"argmin N = {self.argmin}"])


def scene_folds(n_scenes: int, folds: int, seed: int) -> list[np.ndarray]:
    """Held-out scene indices per fold (one fold holds out a fifth)."""
    perm = numpy_stream(seed, "folds").permutation(n_scenes)
    if folds == 1:
        n_val = max(1, n_scenes // 5)
        return [np.sort(perm[:n_val])]
    return [np.sort(part) for part in np.array_split(perm, folds)]


def sweep_latent_size(dataset: MultiViewDataset, sizes, folds: int, cfg: PretextConfig,
                      model_cfg: ModelConfig, out_dir) -> SweepReport:
    """Cross-validated mean validation loss per latent size ``N``."""
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if folds < 1 or len(dataset) < 2:
        raise ValueError("need folds >= 1 and at least two scenes")
    out_dir = Path(out_dir)
    split = scene_folds(len(dataset), folds, cfg.seed)
    fold_losses: dict[int, list[float]] = {}
    for n in sizes:
        if n in fold_losses:
            continue  # repeated size: same seeds, same result
        fold_losses[n] = []
        for f, held_out in enumerate(split):
            held = set(held_out.tolist())
            train_idx = [i for i in range(len(dataset)) if i not in held]
            run_dir = out_dir / f"N{n}_fold{f}"
            if run_dir.exists():
                shutil.rmtree(run_dir)
            ckpt = train(dataset.subset(train_idx), replace(cfg, checkpoint_every_epoch=False),
                         replace(model_cfg, n_features=n), out_dir=run_dir)
            model, _ = load_checkpoint(ckpt)
            fold_losses[n].append(validation_loss(model, dataset.subset(sorted(held)), cfg, seed=cfg.seed))
    means = {n: float(np.mean(v)) for n, v in fold_losses.items()}
    argmin = min(sizes, key=lambda n: (means[n], sizes.index(n)))
    return SweepReport(sizes=sizes, fold_losses=fold_losses, means=means, argmin=argmin)
