"""In-memory and file-backed multi-view sequence containers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from PIL import Image


def u8_to_float(frames: np.ndarray) -> np.ndarray:
    """uint8 ``(..., 3, H, W)`` -> float32 in [-1, 1]."""
    return frames.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


class ArrayFrames:
    """Frames held as a uint8 array of shape ``(T, 3, H, W)``."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.dtype != np.uint8 or data.ndim != 4 or data.shape[1] != 3:
            raise ValueError(f"expected uint8 (T, 3, H, W) frames, got {data.dtype} {data.shape}")
        self.data = data

    def __len__(self):
        return len(self.data)

    @property
    def resolution(self) -> int:
        return self.data.shape[-1]

    def __getitem__(self, idx) -> np.ndarray:
        return u8_to_float(self.data[idx])

    def stack(self, indices=None) -> np.ndarray:
        return u8_to_float(self.data if indices is None else self.data[np.asarray(indices)])

    def raw(self) -> np.ndarray:
        return self.data


def read_image(path: Path) -> np.ndarray:
    """Read an image file into float32 ``(3, H, W)`` in [-1, 1].

    8-bit RGB/gray and 16-bit gray images are mapped linearly to [-1, 1];
    gray images are replicated across the three channels.
    """
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            img = (arr / 32767.5 - 1.0)[None].repeat(3, 0)
            return img.astype(np.float32)
        if im.mode == "L":
            arr = np.asarray(im)[None].repeat(3, 0)
        else:
            arr = np.asarray(im.convert("RGB")).transpose(2, 0, 1)
    return u8_to_float(arr)


class FileFrames:
    """Lazily loaded frames referenced by image paths."""

    def __init__(self, paths, resolution: int, cache: bool = True):
        self.paths = [Path(p) for p in paths]
        self.resolution = resolution
        self._cache: dict[int, np.ndarray] | None = {} if cache else None

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, idx) -> np.ndarray:
        if isinstance(idx, slice):
            return self.stack(range(*idx.indices(len(self))))
        idx = int(idx)
        if self._cache is not None and idx in self._cache:
            return self._cache[idx]
        img = read_image(self.paths[idx])
        if self._cache is not None:
            self._cache[idx] = img
        return img

    def stack(self, indices=None) -> np.ndarray:
        indices = range(len(self)) if indices is None else indices
        return np.stack([self[i] for i in indices])

    def raw(self) -> np.ndarray:
        return np.round((self.stack() + 1.0) * 127.5).astype(np.uint8)


@dataclass
class SequencePair:
    """Simultaneous recordings of one scene; ``views[i]`` holds view i's frames."""

    views: list
    scene_id: str
    subject_id: int = 0
    label: int | None = None
    motion_class: int | None = None

    def __post_init__(self):
        if len(self.views) < 2:
            raise ValueError(f"scene {self.scene_id}: need at least two views")
        lengths = {len(v) for v in self.views}
        if len(lengths) != 1:
            raise ValueError(
                f"scene {self.scene_id}: views have unequal frame counts {sorted(lengths)}"
            )

    @property
    def view_v(self):
        return self.views[0]

    @property
    def view_w(self):
        return self.views[1]

    @property
    def n_frames(self) -> int:
        return len(self.views[0])


@dataclass
class MultiViewDataset:
    sequences: list[SequencePair]
    resolution: int
    modality: str = "synthetic"
    azimuths: list[float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in ("rgb-map", "depth-mask", "synthetic"):
            raise ValueError(f"unknown modality {self.modality!r}")
        counts = {len(s.views) for s in self.sequences}
        if len(counts) > 1:
            raise ValueError(f"scenes have differing view counts {sorted(counts)}")

    @property
    def views_per_scene(self) -> int:
        return len(self.sequences[0].views) if self.sequences else 0

    def __len__(self):
        return len(self.sequences)

    def view_pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(self.views_per_scene), 2))

    def select_views(self, views) -> "MultiViewDataset":
        views = list(views)
        seqs = [replace(s, views=[s.views[i] for i in views]) for s in self.sequences]
        az = [self.azimuths[i] for i in views] if self.azimuths is not None else None
        return replace(self, sequences=seqs, azimuths=az)

    def subset(self, indices) -> "MultiViewDataset":
        return replace(self, sequences=[self.sequences[i] for i in indices])

    def split_subjects(self, test_subjects) -> tuple["MultiViewDataset", "MultiViewDataset"]:
        test_subjects = set(test_subjects)
        train = [i for i, s in enumerate(self.sequences) if s.subject_id not in test_subjects]
        test = [i for i, s in enumerate(self.sequences) if s.subject_id in test_subjects]
        return self.subset(train), self.subset(test)
