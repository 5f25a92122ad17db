"""Pose encoder, viewpoint encoder and decoder of the auto-encoder.

Layer stacks follow the published table; paddings and strides are chosen so
that a ``res x res`` input reaches a ``res/8`` grid in the pose encoder and the
decoder upsamples that grid back to ``res``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .geometry import apply_viewpoint, rotate_translate

CHECKPOINT_FORMAT = "viewpose-ckpt-v1"


@dataclass
class ModelConfig:
    n_features: int = 70
    resolution: int = 128
    dropout_rate: float = 0.5
    pose_channels: tuple[int, ...] = (64, 128, 256, 512)
    pose_fc: tuple[int, int] = (1024, 512)
    view_channels: tuple[int, int] = (128, 256)
    view_fc: int = 512
    decoder_channels: tuple[int, int, int, int] = (512, 256, 128, 64)

    def __post_init__(self):
        self.pose_channels = tuple(self.pose_channels)
        self.pose_fc = tuple(self.pose_fc)
        self.view_channels = tuple(self.view_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        if self.n_features <= 0:
            raise ValueError("n_features must be positive")
        if self.resolution <= 0 or self.resolution % 8:
            raise ValueError(f"resolution must be a positive multiple of 8, got {self.resolution}")
        if self.resolution < 8:
            raise ValueError("resolution too small for the viewpoint encoder pooling")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if len(self.pose_channels) != 4 or len(self.decoder_channels) != 4:
            raise ValueError("pose_channels and decoder_channels need four entries")

    @classmethod
    def scaled(cls, divisor: int, **kwargs) -> "ModelConfig":
        """Table widths divided by ``divisor`` (desk-scale runs)."""
        base = cls()
        div = lambda xs: tuple(max(1, x // divisor) for x in xs)  # noqa: E731
        return cls(
            pose_channels=div(base.pose_channels),
            pose_fc=div(base.pose_fc),
            view_channels=div(base.view_channels),
            view_fc=max(1, base.view_fc // divisor),
            decoder_channels=div(base.decoder_channels),
            **kwargs,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _conv_bn_relu(cin, cout, k, bn=True):
    layers = [nn.Conv2d(cin, cout, k, stride=1, padding=k // 2)]
    if bn:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU(inplace=True))
    return layers


def _convt_bn_relu(cin, cout, stride):
    return [
        nn.ConvTranspose2d(cin, cout, 3, stride=stride, padding=1,
                           output_padding=1 if stride == 2 else 0),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    ]


def _check_images(images: torch.Tensor, resolution: int) -> None:
    if images.dim() != 4 or images.shape[1] != 3:
        raise ValueError(f"expected images of shape (B, 3, H, W), got {tuple(images.shape)}")
    if images.shape[-2:] != (resolution, resolution):
        raise ValueError(
            f"image resolution {tuple(images.shape[-2:])} does not match "
            f"configured {resolution}x{resolution}"
        )


class PoseEncoder(nn.Module):
    """Image -> canonical pose features ``(B, 3, N)``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.pose_channels
        self.features = nn.Sequential(
            *_conv_bn_relu(3, c1, 3), *_conv_bn_relu(c1, c1, 3), nn.MaxPool2d(2),
            *_conv_bn_relu(c1, c2, 3), *_conv_bn_relu(c2, c2, 3), nn.MaxPool2d(2),
            *_conv_bn_relu(c2, c3, 3), *_conv_bn_relu(c3, c3, 3), nn.MaxPool2d(2),
            *_conv_bn_relu(c3, c4, 3),
            *_conv_bn_relu(c4, c4, 3, bn=False),
        )
        grid = cfg.resolution // 8
        f1, f2 = cfg.pose_fc
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(c4 * grid * grid, f1), nn.ReLU(inplace=True),
            nn.Linear(f1, f2), nn.ReLU(inplace=True),
            nn.Linear(f2, 3 * cfg.n_features),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_images(images, self.cfg.resolution)
        out = self.head(self.features(images))
        return out.view(-1, 3, self.cfg.n_features)


class ViewpointEncoder(nn.Module):
    """Image -> ``(B, 6)``: Euler angles (radians) then translation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2 = cfg.view_channels
        self.features = nn.Sequential(
            *_conv_bn_relu(3, c1, 5), *_conv_bn_relu(c1, c1, 5),
            nn.MaxPool2d(7),
            *_conv_bn_relu(c1, c2, 5), *_conv_bn_relu(c2, c2, 5),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Sequential(
            nn.Linear(c2, cfg.view_fc), nn.ReLU(inplace=True), nn.Dropout(cfg.dropout_rate),
            nn.Linear(cfg.view_fc, 6),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_images(images, self.cfg.resolution)
        return self.head(self.features(images))


class Decoder(nn.Module):
    """View-specific pose ``(B, 3, N)`` -> image in (-1, 1)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.decoder_channels
        self.grid = cfg.resolution // 8
        self.bottleneck = c0
        self.fc = nn.Sequential(
            nn.Linear(3 * cfg.n_features, c0 * self.grid * self.grid),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout_rate),
        )
        self.body = nn.Sequential(
            *_conv_bn_relu(c0, c1, 3), *_conv_bn_relu(c1, c1, 3),
            *_convt_bn_relu(c1, c2, 2), *_convt_bn_relu(c2, c2, 1),
            *_convt_bn_relu(c2, c3, 2), *_convt_bn_relu(c3, c3, 1),
            *_convt_bn_relu(c3, 3, 2),
            # last layer: no BN/ReLU so tanh can reach negative values
            nn.ConvTranspose2d(3, 3, 3, stride=1, padding=1),
            nn.Tanh(),
        )

    def forward(self, pose: torch.Tensor) -> torch.Tensor:
        n = self.cfg.n_features
        if pose.dim() != 3 or pose.shape[1:] != (3, n):
            raise ValueError(f"expected pose of shape (B, 3, {n}), got {tuple(pose.shape)}")
        x = self.fc(pose.flatten(1))
        x = x.view(-1, self.bottleneck, self.grid, self.grid)
        return self.body(x)


def init_weights(module: nn.Module) -> None:
    """Kaiming-normal weights (ReLU gain) and zero biases."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ViewPoseAutoEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.pose_encoder = PoseEncoder(self.cfg)
        self.view_encoder = ViewpointEncoder(self.cfg)
        self.decoder = Decoder(self.cfg)
        self.apply(init_weights)

    def encode_pose(self, images: torch.Tensor) -> torch.Tensor:
        return self.pose_encoder(images)

    def encode_viewpoint(self, images: torch.Tensor) -> torch.Tensor:
        return self.view_encoder(images)

    def decode(self, view_pose: torch.Tensor) -> torch.Tensor:
        return self.decoder(view_pose)

    def reconstruct(self, images: torch.Tensor, rotation_source: torch.Tensor | None = None) -> torch.Tensor:
        """Decode ``images`` using the rotation estimated on ``rotation_source``.

        Translation always comes from ``images`` itself.
        """
        pose = self.encode_pose(images)
        view = self.encode_viewpoint(images)
        if rotation_source is None or rotation_source is images:
            return self.decode(apply_viewpoint(pose, view))
        rotation = self.encode_viewpoint(rotation_source)[:, :3]
        return self.decode(rotate_translate(pose, rotation, view[:, 3:]))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.reconstruct(images)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_checkpoint(path, model: ViewPoseAutoEncoder, optimizer=None, epoch: int = 0,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.cfg.to_dict(),
        "pose_encoder": model.pose_encoder.state_dict(),
        "view_encoder": model.view_encoder.state_dict(),
        "decoder": model.decoder.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "extra": extra or {},
    }
    try:
        torch.save(blob, path)
    except OSError as exc:
        raise OSError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path, optimizer=None) -> tuple[ViewPoseAutoEncoder, dict]:
    """Rebuild the auto-encoder stored at ``path``; returns ``(model, blob)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    model = ViewPoseAutoEncoder(ModelConfig(**blob["model_config"]))
    model.pose_encoder.load_state_dict(blob["pose_encoder"])
    model.view_encoder.load_state_dict(blob["view_encoder"])
    model.decoder.load_state_dict(blob["decoder"])
    if optimizer is not None and blob["optimizer"] is not None:
        optimizer.load_state_dict(blob["optimizer"])
    return model, blob


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
