"""Training objectives of the auto-encoder.

Every two-view loss is the sum over the two views of an MSE averaged over all
elements of the batch, which equals the batch mean of per-sample sums.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .geometry import rotate_translate, shift_view_specific


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0    # view-invariance
    beta: float = 0.001   # equivariance
    gamma: float = 1.0    # both reconstruction terms

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ValueError(f"loss weight {f.name} must be >= 0, got {v}")


@dataclass
class LossBreakdown:
    invar: float | torch.Tensor
    equiv: float | torch.Tensor
    rec1: float | torch.Tensor
    rec2: float | torch.Tensor
    total: float | torch.Tensor

    def detached(self) -> "LossBreakdown":
        conv = lambda v: float(v.detach()) if torch.is_tensor(v) else float(v)  # noqa: E731
        return LossBreakdown(*(conv(getattr(self, f.name)) for f in fields(self)))

    def as_dict(self) -> dict[str, float]:
        d = self.detached()
        return {f.name: getattr(d, f.name) for f in fields(d)}


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in mse: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def view_invariant_loss(decoder, Iv, Iw, Rv, Rw, Tv, Tw, Pv, Pw) -> torch.Tensor:
    """Reconstruct each view from the *other* view's canonical pose.

    ``decoder`` maps view-specific poses ``(B, 3, N)`` to images. Both swapped
    poses are decoded in one call.
    """
    if Pv.shape != Pw.shape:
        raise ValueError(f"canonical poses differ in shape: {tuple(Pv.shape)} vs {tuple(Pw.shape)}")
    swapped_v = rotate_translate(Pw, Rv, Tv)
    swapped_w = rotate_translate(Pv, Rw, Tw)
    out = decoder(torch.cat([swapped_v, swapped_w]))
    out_v, out_w = out.chunk(2)
    return mse(Iv, out_v) + mse(Iw, out_w)


def reconstruction_loss_1(Iv, Iw, rec_v, rec_w) -> torch.Tensor:
    return mse(Iv, rec_v) + mse(Iw, rec_w)


def equivariance_loss(view_pose_v, view_pose_w, aug_pose_v, aug_pose_w, delta_1, delta_2) -> torch.Tensor:
    """Shifted view-specific poses of the originals vs. poses of shifted images.

    ``delta_1`` belongs to view v and ``delta_2`` to view w; both are
    ``(..., 3)`` feature-unit shifts whose z entry is ignored.
    """
    return (mse(shift_view_specific(view_pose_v, delta_1), aug_pose_v)
            + mse(shift_view_specific(view_pose_w, delta_2), aug_pose_w))


def reconstruction_loss_2(aug_v, aug_w, rec_aug_v, rec_aug_w) -> torch.Tensor:
    return mse(aug_v, rec_aug_v) + mse(aug_w, rec_aug_w)


def total_loss(invar, equiv, rec1, rec2, weights: LossWeights | None = None,
               use_invar: bool = True, use_equiv: bool = True) -> LossBreakdown:
    """Weighted sum ``alpha*invar + beta*equiv + gamma*(rec1 + rec2)``.

    A disabled term is left out of the sum entirely, so it contributes no
    gradient; its value is still reported.
    """
    w = weights or LossWeights()
    total = w.gamma * (rec1 + rec2)
    if use_invar:
        total = w.alpha * invar + total
    if use_equiv:
        total = total + w.beta * equiv
    return LossBreakdown(invar=invar, equiv=equiv, rec1=rec1, rec2=rec2, total=total)
