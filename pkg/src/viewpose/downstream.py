"""Sequence heads on top of the pose encoder: action classes and quality scores.

A two-layer bidirectional GRU reads the flattened per-frame canonical poses;
the last layer's final forward and backward states feed one linear layer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data.dataset import MultiViewDataset
from .data.sampling import clip_split_16, subsample_indices
from .evaluate import accuracy, spearman_rank_correlation
from .model import ModelConfig, PoseEncoder, file_sha256, init_weights, load_checkpoint
from .seeding import numpy_stream, seed_torch

log = logging.getLogger(__name__)

HEAD_FORMAT = "viewpose-head-v1"
MODES = ("frozen", "fine-tune", "scratch")
CLIP_LEN = 16


@dataclass
class HeadConfig:
    n_classes: int = 4
    hidden_size: int = 512
    mode: str = "frozen"
    task: str = "classify"  # or "score"
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.task not in ("classify", "score"):
            raise ValueError(f"task must be 'classify' or 'score', got {self.task!r}")


@dataclass
class SequenceSample:
    frames: object  # ArrayFrames / FileFrames of a single view
    label: int
    subject_id: int = 0
    view: int = 0
    motion_class: int | None = None


def samples_from_dataset(dataset: MultiViewDataset, views=None, subjects=None) -> list[SequenceSample]:
    """One single-view sample per (scene, view)."""
    views = range(dataset.views_per_scene) if views is None else views
    out = []
    for seq in dataset.sequences:
        if subjects is not None and seq.subject_id not in subjects:
            continue
        if seq.label is None:
            raise ValueError(f"scene {seq.scene_id} has no label")
        for v in views:
            out.append(SequenceSample(seq.views[v], int(seq.label), seq.subject_id, v, seq.motion_class))
    return out


class SequenceHead(nn.Module):
    def __init__(self, encoder: PoseEncoder, cfg: HeadConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = encoder
        n_in = 3 * encoder.cfg.n_features
        self.gru = nn.GRU(n_in, cfg.hidden_size, num_layers=2, bidirectional=True, batch_first=True)
        self.fc = nn.Linear(2 * cfg.hidden_size, cfg.n_classes)
        if cfg.mode == "frozen":
            for p in self.encoder.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.cfg.mode == "frozen":
            # keeps BN statistics fixed too
            self.encoder.eval()
        return self

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """``(B, T, 3, H, W)`` -> ``(B, T, 3N)``."""
        b, t = frames.shape[:2]
        if self.cfg.mode == "frozen":
            with torch.no_grad():
                feats = self.encoder(frames.flatten(0, 1))
        else:
            feats = self.encoder(frames.flatten(0, 1))
        return feats.reshape(b, t, -1)

    def forward_features(self, feats: torch.Tensor) -> torch.Tensor:
        _, h = self.gru(feats)
        # h: (num_layers * 2, B, H); last layer forward and backward states
        last = torch.cat([h[-2], h[-1]], dim=-1)
        return self.fc(last)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.forward_features(self.encode_frames(frames))


def build_head(cfg: HeadConfig, encoder_checkpoint=None, model_cfg: ModelConfig | None = None) -> SequenceHead:
    if cfg.mode == "scratch":
        if model_cfg is None:
            if encoder_checkpoint is None:
                raise ValueError("scratch mode needs a model config or a checkpoint to copy it from")
            model_cfg = load_checkpoint(encoder_checkpoint)[0].cfg
        seed_torch(cfg.seed, "model-init")
        encoder = PoseEncoder(model_cfg)
        encoder.apply(init_weights)
    else:
        if encoder_checkpoint is None:
            raise ValueError(f"mode {cfg.mode!r} requires an encoder checkpoint")
        encoder = load_checkpoint(encoder_checkpoint)[0].pose_encoder
    seed_torch(cfg.seed, "head-init")
    return SequenceHead(encoder, cfg)


def _as_batch(frames) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
    return x.unsqueeze(0) if x.dim() == 4 else x


@torch.no_grad()
def classify_sequence(head: SequenceHead, frames) -> np.ndarray:
    """Class probabilities for exactly 16 frames ``(16, 3, H, W)``."""
    x = _as_batch(frames)
    if x.shape[1] != CLIP_LEN:
        raise ValueError(f"expected {CLIP_LEN} frames, got {x.shape[1]}")
    head.eval()
    return F.softmax(head(x), dim=-1)[0].numpy()


@torch.no_grad()
def score_sequence(head: SequenceHead, frames) -> float:
    """Expected score after averaging final-layer outputs over 16-frame clips."""
    frames = np.asarray(frames) if not hasattr(frames, "stack") else frames
    clips = clip_split_16(len(frames))
    head.eval()
    stack = frames.stack if hasattr(frames, "stack") else (lambda idx: frames[np.asarray(idx)])
    x = torch.from_numpy(np.stack([stack(list(c)) for c in clips])).float()
    logits = head(x).mean(0)
    probs = F.softmax(logits, dim=-1)
    return float((probs * torch.arange(len(probs), dtype=probs.dtype)).sum())


def _clip_indices(sample: SequenceSample, task: str, rng) -> np.ndarray:
    if task == "classify":
        return subsample_indices(len(sample.frames), rng)
    clips = clip_split_16(len(sample.frames))
    return np.asarray(clips[int(rng.integers(len(clips)))])


class _FeatureCache:
    """Per-sample frozen-encoder features, computed once."""

    def __init__(self, head: SequenceHead):
        self.head = head
        self.store: dict[int, torch.Tensor] = {}

    def get(self, key: int, sample: SequenceSample) -> torch.Tensor:
        if key not in self.store:
            with torch.no_grad():
                self.head.encoder.eval()
                x = torch.from_numpy(sample.frames.stack()).float()
                self.store[key] = self.head.encoder(x).flatten(1)
        return self.store[key]


def train_downstream(samples: list[SequenceSample], cfg: HeadConfig, encoder_checkpoint=None,
                     model_cfg: ModelConfig | None = None, val_samples=None, out_dir=None,
                     on_epoch=None) -> tuple[SequenceHead, list[dict]]:
    """Cross-entropy training of a sequence head; returns ``(head, history)``.

    ``on_epoch(epoch, record)`` is called after every epoch. With ``out_dir``
    set, the head checkpoint is written to ``out_dir/head.pt`` and the history
    to ``out_dir/history.jsonl``.
    """
    for s in list(samples) + list(val_samples or []):
        if not 0 <= s.label < cfg.n_classes:
            raise ValueError(f"label {s.label} outside [0, {cfg.n_classes})")
    if not samples:
        raise ValueError("no training samples")
    head = build_head(cfg, encoder_checkpoint, model_cfg)
    params = [p for p in head.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    cache = _FeatureCache(head) if cfg.mode == "frozen" else None
    history = []
    for epoch in range(1, cfg.epochs + 1):
        rng = numpy_stream(cfg.seed, "downstream", epoch)
        seed_torch(cfg.seed, "downstream", epoch)
        head.train()
        order = rng.permutation(len(samples))
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            chosen = order[start:start + cfg.batch_size]
            idx = [_clip_indices(samples[i], cfg.task, rng) for i in chosen]
            labels = torch.tensor([samples[i].label for i in chosen])
            if cache is not None:
                feats = torch.stack([cache.get(int(i), samples[i])[ix] for i, ix in zip(chosen, idx)])
                logits = head.forward_features(feats)
            else:
                x = torch.from_numpy(np.stack([samples[i].frames.stack(ix) for i, ix in zip(chosen, idx)])).float()
                logits = head(x)
            loss = F.cross_entropy(logits, labels)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()) * len(chosen))
            correct += int((logits.argmax(-1) == labels).sum())
        record = {"epoch": epoch, "train_loss": sum(losses) / len(samples),
                  "train_accuracy": correct / len(samples)}
        if val_samples:
            record.update(evaluate_head(head, val_samples, cfg))
        history.append(record)
        log.info("downstream epoch %d: %s", epoch, record)
        if on_epoch is not None:
            on_epoch(epoch, record)
    if out_dir is not None:
        save_head(Path(out_dir) / "head.pt", head, encoder_checkpoint)
        with open(Path(out_dir) / "history.jsonl", "w") as fh:
            for r in history:
                fh.write(json.dumps(r) + "\n")
    return head, history


def predict_classes(head: SequenceHead, samples, seed: int = 0) -> np.ndarray:
    rng = numpy_stream(seed, "eval-subsample")
    preds = []
    head.eval()
    with torch.no_grad():
        for s in samples:
            x = torch.from_numpy(s.frames.stack(subsample_indices(len(s.frames), rng))).float()
            preds.append(int(head(x[None]).argmax(-1)))
    return np.asarray(preds)


def predict_scores(head: SequenceHead, samples) -> np.ndarray:
    return np.asarray([score_sequence(head, s.frames) for s in samples])


def evaluate_head(head: SequenceHead, samples, cfg: HeadConfig) -> dict:
    labels = np.asarray([s.label for s in samples])
    if cfg.task == "classify":
        return {"val_accuracy": accuracy(predict_classes(head, samples, cfg.seed), labels)}
    scores = predict_scores(head, samples)
    try:
        src = spearman_rank_correlation(scores, labels)
    except ValueError:
        src = float("nan")
    return {"val_src": src}


def save_head(path, head: SequenceHead, encoder_checkpoint=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": HEAD_FORMAT,
        "head_config": asdict(head.cfg),
        "model_config": head.encoder.cfg.to_dict(),
        "encoder_checkpoint_sha256": file_sha256(encoder_checkpoint) if encoder_checkpoint else None,
        "state_dict": head.state_dict(),
    }, path)
    return path


def load_head(path) -> tuple[SequenceHead, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != HEAD_FORMAT:
        raise ValueError(f"{path} is not a {HEAD_FORMAT} checkpoint")
    cfg = HeadConfig(**blob["head_config"])
    head = SequenceHead(PoseEncoder(ModelConfig(**blob["model_config"])), cfg)
    head.load_state_dict(blob["state_dict"])
    return head, blob
