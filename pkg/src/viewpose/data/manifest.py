"""Dataset manifests: one JSON file plus per-frame image files.

Schema::

    {
      "format": "viewpose-manifest-v1",
      "resolution": 64,
      "views_per_scene": 2,
      "modality": "synthetic" | "rgb-map" | "depth-mask",
      "azimuths": [0.0, 90.0] | null,
      "meta": {...},
      "sequences": [
        {"scene_id": "...", "subject_id": 0, "label": 1, "motion_class": 1,
         "views": [["v0/scene/0000.png", ...], ["v1/scene/0000.png", ...]]}
      ]
    }

Image paths are relative to the manifest's directory. RGB images are 8-bit;
depth masks may be 8- or 16-bit grayscale. Pixel values map linearly to
[-1, 1].
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import FileFrames, MultiViewDataset, SequencePair

MANIFEST_FORMAT = "viewpose-manifest-v1"
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    pass


def write_manifest(dataset: MultiViewDataset, directory) -> Path:
    """Write every frame as PNG and the manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for seq in dataset.sequences:
        view_paths = []
        for vi, frames in enumerate(seq.views):
            raw = frames.raw()
            rel_dir = Path(f"view{vi}") / seq.scene_id
            (directory / rel_dir).mkdir(parents=True, exist_ok=True)
            paths = []
            for f in range(len(raw)):
                rel = rel_dir / f"{f:05d}.png"
                Image.fromarray(raw[f].transpose(1, 2, 0)).save(directory / rel, optimize=False)
                paths.append(rel.as_posix())
            view_paths.append(paths)
        records.append({
            "scene_id": seq.scene_id,
            "subject_id": int(seq.subject_id),
            "label": None if seq.label is None else int(seq.label),
            "motion_class": None if seq.motion_class is None else int(seq.motion_class),
            "views": view_paths,
        })
    manifest = {
        "format": MANIFEST_FORMAT,
        "resolution": dataset.resolution,
        "views_per_scene": dataset.views_per_scene,
        "modality": dataset.modality,
        "azimuths": dataset.azimuths,
        "meta": dataset.meta,
        "sequences": records,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_manifest(path) -> MultiViewDataset:
    """Load and validate a manifest; frames are read lazily on access."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: expected format {MANIFEST_FORMAT!r}, got {doc.get('format')!r}")
    root = path.parent
    res = int(doc["resolution"])
    n_views = int(doc["views_per_scene"])
    sequences = []
    for rec in doc["sequences"]:
        sid = rec.get("scene_id", "?")
        views = rec.get("views", [])
        if len(views) != n_views:
            raise ManifestError(f"scene {sid}: expected {n_views} views, found {len(views)}")
        lengths = [len(v) for v in views]
        if len(set(lengths)) != 1:
            raise ManifestError(f"scene {sid}: views have unequal frame counts {lengths}")
        if lengths[0] == 0:
            raise ManifestError(f"scene {sid}: no frames")
        frame_sets = []
        for vi, rels in enumerate(views):
            paths = [root / r for r in rels]
            for p in paths:
                if not p.exists():
                    raise ManifestError(f"scene {sid}, view {vi}: missing frame {p}")
                with Image.open(p) as im:
                    if im.size != (res, res):
                        raise ManifestError(
                            f"scene {sid}, view {vi}: frame {p.name} is {im.size[0]}x{im.size[1]}, "
                            f"expected {res}x{res}"
                        )
            frame_sets.append(FileFrames(paths, res))
        sequences.append(SequencePair(
            views=frame_sets, scene_id=sid, subject_id=int(rec.get("subject_id", 0)),
            label=rec.get("label"), motion_class=rec.get("motion_class"),
        ))
    return MultiViewDataset(
        sequences=sequences, resolution=res, modality=doc.get("modality", "synthetic"),
        azimuths=doc.get("azimuths"), meta=doc.get("meta", {}),
    )


def datasets_equal(a: MultiViewDataset, b: MultiViewDataset) -> bool:
    """Metadata and pixel equality of two datasets."""
    if (a.resolution, a.modality, a.views_per_scene, len(a)) != (b.resolution, b.modality, b.views_per_scene, len(b)):
        return False
    if (a.azimuths is None) != (b.azimuths is None) or (a.azimuths and list(a.azimuths) != list(b.azimuths)):
        return False
    for sa, sb in zip(a.sequences, b.sequences):
        if (sa.scene_id, sa.subject_id, sa.label, sa.motion_class) != (sb.scene_id, sb.subject_id, sb.label, sb.motion_class):
            return False
        for va, vb in zip(sa.views, sb.views):
            if not np.array_equal(va.raw(), vb.raw()):
                return False
    return True
