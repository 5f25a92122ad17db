"""Rigid transforms between canonical and view-specific pose features.

Poses are real tensors of shape ``(..., 3, N)`` with rows ``x, y, z``.
Viewpoints are tensors of shape ``(..., 6)``: three Euler angles in radians
followed by a translation. The x/y feature axes coincide with the image axes
(x to the right, y downwards) and are normalised so the image spans [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class ShiftVector:
    """Integer pixel shift of an image (positive dx moves content right)."""

    dx: int
    dy: int

    def __neg__(self) -> "ShiftVector":
        return ShiftVector(-self.dx, -self.dy)


def _check_finite(t: torch.Tensor, name: str) -> None:
    if not torch.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")


def euler_to_matrix(angles: torch.Tensor) -> torch.Tensor:
    """Rotation matrix ``Rz @ Ry @ Rx`` for angles ``(..., 3) = (tx, ty, tz)``."""
    angles = torch.as_tensor(angles)
    if angles.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) angles, got {tuple(angles.shape)}")
    _check_finite(angles, "angles")
    cx, cy, cz = torch.cos(angles).unbind(-1)
    sx, sy, sz = torch.sin(angles).unbind(-1)
    # Closed form of Rz(z) @ Ry(y) @ Rx(x).
    rows = [
        torch.stack([cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx], -1),
        torch.stack([sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx], -1),
        torch.stack([-sy, cy * sx, cy * cx], -1),
    ]
    return torch.stack(rows, -2)


def _check_pose(pose: torch.Tensor, name: str = "pose") -> None:
    if pose.dim() < 2 or pose.shape[-2] != 3:
        raise ValueError(f"{name} must have shape (..., 3, N), got {tuple(pose.shape)}")


def apply_viewpoint(pose: torch.Tensor, view: torch.Tensor) -> torch.Tensor:
    """Map canonical features to a view: ``R(view[:3]) @ pose + view[3:]``."""
    _check_pose(pose)
    if view.shape[-1] != 6:
        raise ValueError(f"viewpoint must have shape (..., 6), got {tuple(view.shape)}")
    if view.shape[:-1] != pose.shape[:-2]:
        raise ValueError(
            f"batch shapes differ: pose {tuple(pose.shape)} vs view {tuple(view.shape)}"
        )
    return rotate_translate(pose, view[..., :3], view[..., 3:])


def rotate_translate(pose: torch.Tensor, rotation: torch.Tensor,
                     translation: torch.Tensor) -> torch.Tensor:
    """Same as :func:`apply_viewpoint` with rotation and translation given apart."""
    _check_pose(pose)
    if translation.shape[-1] != 3:
        raise ValueError(f"translation must have shape (..., 3), got {tuple(translation.shape)}")
    return euler_to_matrix(rotation) @ pose + translation.unsqueeze(-1)


def invert_viewpoint(view_pose: torch.Tensor, view: torch.Tensor) -> torch.Tensor:
    """Recover canonical features: ``R^T @ (pose - T)``."""
    _check_pose(view_pose)
    rot = euler_to_matrix(view[..., :3])
    return rot.transpose(-1, -2) @ (view_pose - view[..., 3:].unsqueeze(-1))


def pixel_shift_to_feature_shift(shift: ShiftVector, width: int, height: int) -> tuple[float, float, float]:
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    return (2.0 * shift.dx / width, 2.0 * shift.dy / height, 0.0)


def shifts_to_tensor(shifts, width: int, height: int, dtype=torch.float32) -> torch.Tensor:
    """Stack a sequence of pixel shifts into a ``(B, 3)`` feature-shift tensor."""
    return torch.tensor(
        [pixel_shift_to_feature_shift(s, width, height) for s in shifts], dtype=dtype
    )


def shift_view_specific(pose: torch.Tensor, delta) -> torch.Tensor:
    """Add ``delta[..., 0]`` to the x-row and ``delta[..., 1]`` to the y-row.

    The z component of ``delta`` is ignored; the z-row is returned unchanged.
    """
    _check_pose(pose)
    delta = torch.as_tensor(delta, dtype=pose.dtype, device=pose.device)
    if delta.shape[-1] != 3:
        raise ValueError(f"delta must have shape (..., 3), got {tuple(delta.shape)}")
    offset = torch.cat([delta[..., :2], torch.zeros_like(delta[..., 2:])], -1)
    return pose + offset.unsqueeze(-1)
