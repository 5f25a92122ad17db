"""Training-tuple sampling, image augmentations and temporal sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..geometry import ShiftVector, shifts_to_tensor

BACKGROUND = -1.0


def shift_image(img: np.ndarray, dx: int, dy: int, fill: float = BACKGROUND) -> np.ndarray:
    """Translate ``(..., H, W)`` content by ``dx`` columns and ``dy`` rows.

    ``out[..., r, c] == img[..., r - dy, c - dx]`` where defined, ``fill``
    elsewhere.
    """
    h, w = img.shape[-2:]
    out = np.full_like(img, fill)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_r, dst_c] = img[..., src_r, src_c]
    return out


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[..., ::-1])


@dataclass
class TrainingTuple:
    Iv_k: np.ndarray
    Iw_k: np.ndarray
    Iv_m: np.ndarray
    Iw_n: np.ndarray
    aug_v: np.ndarray
    aug_w: np.ndarray
    c1: ShiftVector
    c2: ShiftVector
    flip_applied: bool
    k: int
    m: int
    n: int

    IMAGE_FIELDS = ("Iv_k", "Iw_k", "Iv_m", "Iw_n", "aug_v", "aug_w")

    def images(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in self.IMAGE_FIELDS]


def make_training_tuple(pair, k: int, rng: np.random.Generator, views=(0, 1),
                        max_shift: int | None = None, flip: bool | None = None,
                        flip_prob: float = 0.5) -> TrainingTuple:
    """Sample rotation-source frames, shifts and a flip for frame ``k``.

    Draw order from ``rng`` is fixed (m, n, c1, c2, flip) so a seeded stream
    reproduces the tuple. ``flip`` overrides the random flip decision; the
    other draws are unaffected by it. A flipped tuple is the exact mirror of
    the unflipped one, with shift x-components negated to match.
    """
    v_frames, w_frames = pair.views[views[0]], pair.views[views[1]]
    n_frames = len(v_frames)
    if not 0 <= k < n_frames:
        raise IndexError(f"frame index {k} out of range for {n_frames} frames")
    res = v_frames[0].shape[-1]
    bound = res // 4 if max_shift is None else max_shift
    m = int(rng.integers(n_frames))
    n = int(rng.integers(n_frames))
    c1 = ShiftVector(*(int(x) for x in rng.integers(-bound, bound + 1, size=2)))
    c2 = ShiftVector(*(int(x) for x in rng.integers(-bound, bound + 1, size=2)))
    do_flip = bool(rng.random() < flip_prob)
    if flip is not None:
        do_flip = flip

    Iv_k, Iw_k = v_frames[k], w_frames[k]
    imgs = [Iv_k, Iw_k, v_frames[m], w_frames[n],
            shift_image(Iv_k, c1.dx, c1.dy), shift_image(Iw_k, c2.dx, c2.dy)]
    if do_flip:
        imgs = [hflip(i) for i in imgs]
        c1 = ShiftVector(-c1.dx, c1.dy)
        c2 = ShiftVector(-c2.dx, c2.dy)
    return TrainingTuple(*imgs, c1=c1, c2=c2, flip_applied=do_flip, k=k, m=m, n=n)


def collate_tuples(tuples: list[TrainingTuple], dtype=torch.float32) -> dict[str, torch.Tensor]:
    batch = {
        f: torch.from_numpy(np.stack([getattr(t, f) for t in tuples])).to(dtype)
        for f in TrainingTuple.IMAGE_FIELDS
    }
    h, w = tuples[0].Iv_k.shape[-2:]
    batch["delta_1"] = shifts_to_tensor([t.c1 for t in tuples], w, h, dtype)
    batch["delta_2"] = shifts_to_tensor([t.c2 for t in tuples], w, h, dtype)
    return batch


def subsample_indices(length: int, rng: np.random.Generator, n: int = 16) -> np.ndarray:
    """One uniformly drawn frame per each of ``n`` contiguous segments.

    Sequences shorter than ``n`` reuse frames: segments come from a rounded
    linspace and are widened to at least one frame, so indices are only
    non-decreasing in that case.
    """
    if length <= 0:
        raise ValueError("cannot subsample an empty sequence")
    bounds = np.round(np.linspace(0, length, n + 1)).astype(int)
    lo = np.minimum(bounds[:-1], length - 1)
    hi = np.maximum(bounds[1:], lo + 1)
    return lo + (rng.random(n) * (hi - lo)).astype(int)


def subsample_16(frames, rng: np.random.Generator) -> np.ndarray:
    idx = subsample_indices(len(frames), rng)
    return np.stack([frames[i] for i in idx])


def clip_split_16(length_or_frames, clip_len: int = 16) -> list[range]:
    """Non-overlapping clip index ranges; the trailing remainder is dropped."""
    length = length_or_frames if isinstance(length_or_frames, int) else len(length_or_frames)
    if length < clip_len:
        raise ValueError(f"sequence of {length} frames is shorter than one {clip_len}-frame clip")
    return [range(i * clip_len, (i + 1) * clip_len) for i in range(length // clip_len)]
