"""Accuracy, rank correlation and invariance diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .data.dataset import MultiViewDataset
from .data.sampling import shift_image
from .geometry import ShiftVector, apply_viewpoint, rotate_translate, shifts_to_tensor, shift_view_specific


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class EvalReport:
    metric: str
    value: float
    n_samples: int
    protocol: str = "CV"
    breakdown: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("EvalReport needs at least one sample")
        if self.protocol not in ("CV", "CS"):
            raise ValueError(f"protocol must be 'CV' or 'CS', got {self.protocol!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def spearman_rank_correlation(predicted, true) -> float:
    """Pearson correlation of average-tie ranks."""
    predicted = np.asarray(predicted, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if predicted.shape != true.shape or predicted.ndim != 1:
        raise UndefinedCorrelationError("inputs must be 1-d and of equal length")
    if len(predicted) < 2:
        raise UndefinedCorrelationError("need at least two samples")
    rp = rankdata(predicted) - (len(predicted) + 1) / 2.0
    rt = rankdata(true) - (len(true) + 1) / 2.0
    denom = np.sqrt(np.sum(rp * rp) * np.sum(rt * rt))
    if denom == 0:
        raise UndefinedCorrelationError("zero rank variance")
    return float(np.clip(np.sum(rp * rt) / denom, -1.0, 1.0))


def _batched_frames(frames, batch_size):
    for start in range(0, len(frames), batch_size):
        idx = range(start, min(start + batch_size, len(frames)))
        yield torch.from_numpy(frames.stack(idx))


class _eval_mode:
    def __init__(self, module):
        self.module = module

    def __enter__(self):
        self.was = getattr(self.module, "training", None)
        if isinstance(self.module, torch.nn.Module):
            self.module.eval()

    def __exit__(self, *exc):
        if isinstance(self.module, torch.nn.Module):
            self.module.train(self.was)


@torch.no_grad()
def cross_view_invariance(encoder, dataset: MultiViewDataset, batch_size: int = 64) -> float:
    """Mean MSE between canonical poses of simultaneous frames of view pairs.

    ``encoder`` is any callable mapping ``(B, 3, H, W)`` images to poses.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    total, count = 0.0, 0
    with _eval_mode(encoder):
        for seq in dataset.sequences:
            for start in range(0, seq.n_frames, batch_size):
                idx = range(start, min(start + batch_size, seq.n_frames))
                poses = [encoder(torch.from_numpy(v.stack(idx))) for v in seq.views]
                for a in range(len(poses)):
                    for b in range(a + 1, len(poses)):
                        err = ((poses[a] - poses[b]) ** 2).flatten(1).mean(1)
                        total += float(err.double().sum())
                        count += len(idx)
    return total / count


def uniform_shift_sampler(max_shift: int):
    def sample(rng) -> ShiftVector:
        dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
        return ShiftVector(int(dx), int(dy))
    return sample


@torch.no_grad()
def equivariance_residual(model, dataset: MultiViewDataset, shift_sampler=None, rng=None,
                          batch_size: int = 64, frame_stride: int = 1) -> float:
    """Mean MSE between shifted view-specific poses and poses of shifted images.

    For each frame ``I`` and sampled shift ``c``: the view-specific pose of
    ``I`` moved by ``c`` is compared with ``R(I) . E(shift(I, c)) + T(shift(I, c))``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    res = dataset.resolution
    shift_sampler = shift_sampler or uniform_shift_sampler(res // 4)
    rng = rng if rng is not None else np.random.default_rng(0)
    total, count = 0.0, 0
    with _eval_mode(model):
        for seq in dataset.sequences:
            for view in seq.views:
                idx = list(range(0, seq.n_frames, frame_stride))
                for start in range(0, len(idx), batch_size):
                    chunk = idx[start:start + batch_size]
                    imgs = view.stack(chunk)
                    shifts = [shift_sampler(rng) for _ in chunk]
                    shifted = np.stack([shift_image(im, s.dx, s.dy) for im, s in zip(imgs, shifts)])
                    x = torch.from_numpy(imgs)
                    xs = torch.from_numpy(shifted)
                    v = model.encode_viewpoint(x)
                    base = apply_viewpoint(model.encode_pose(x), v)
                    vs = model.encode_viewpoint(xs)
                    moved = rotate_translate(model.encode_pose(xs), v[:, :3], vs[:, 3:])
                    delta = shifts_to_tensor(shifts, res, res, dtype=base.dtype)
                    err = ((shift_view_specific(base, delta) - moved) ** 2).flatten(1).mean(1)
                    total += float(err.double().sum())
                    count += len(chunk)
    return total / count
