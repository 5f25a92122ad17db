from .dataset import ArrayFrames, FileFrames, MultiViewDataset, SequencePair
from .manifest import ManifestError, datasets_equal, load_manifest, write_manifest
from .sampling import (
    TrainingTuple,
    clip_split_16,
    collate_tuples,
    hflip,
    make_training_tuple,
    shift_image,
    subsample_16,
    subsample_indices,
)
from .synthetic import SyntheticSceneSpec, generate_synthetic

__all__ = [
    "ArrayFrames", "FileFrames", "MultiViewDataset", "SequencePair",
    "ManifestError", "datasets_equal", "load_manifest", "write_manifest",
    "TrainingTuple", "clip_split_16", "collate_tuples", "hflip", "make_training_tuple",
    "shift_image", "subsample_16", "subsample_indices",
    "SyntheticSceneSpec", "generate_synthetic",
]
