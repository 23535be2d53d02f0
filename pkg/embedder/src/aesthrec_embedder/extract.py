"""Batch VGG-19 inference: export raw feature maps and Gram style vectors."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import vgg
from .formats import feature_file_bytes, map_file_bytes, write_atomic

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionJob:
    """One corpus pass: which images, layers, weights, and output directory."""

    images_dir: Path
    out_dir: Path
    layers: tuple = (8,)
    weights: str = "imagenet"
    deterministic: bool = True
    batch_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "images_dir", Path(self.images_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "layers", tuple(vgg.validate_layer(l) for l in self.layers))
        if not self.layers:
            raise ValueError("at least one layer index is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def gram_vector(feature_map):
    """Flattened G = F F^T / (C M) for a C x M map, float32 row-major."""
    f = np.asarray(feature_map, dtype=np.float64)
    c, m = f.shape
    return ((f @ f.T) / (c * m)).astype(np.float32).reshape(-1)


def _load_images(job, pipeline):
    paths = sorted(p for p in job.images_dir.iterdir() if p.is_file())
    for path in paths:
        try:
            with Image.open(path) as image:
                tensor = pipeline(image.convert("RGB"))
        except (OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            continue
        yield path.stem, tensor


def _run_inference(job):
    if job.deterministic:
        torch.set_num_threads(1)
    trunk = vgg.build_feature_extractor(job.weights)
    pipeline = vgg.preprocess()
    per_layer = {layer: {} for layer in job.layers}
    batch_ids = []
    batch_tensors = []

    def flush():
        if not batch_ids:
            return
        stacked = torch.stack(batch_tensors)
        activations = vgg.activation_maps(trunk, stacked, job.layers)
        for layer, tensor in activations.items():
            arrays = tensor.numpy()
            for row, photo_id in enumerate(batch_ids):
                fmap = arrays[row]
                per_layer[layer][photo_id] = fmap.reshape(fmap.shape[0], -1).astype(np.float32)
        batch_ids.clear()
        batch_tensors.clear()

    for photo_id, tensor in _load_images(job, pipeline):
        if photo_id in per_layer[job.layers[0]]:
            raise ValueError(f"duplicate photo id {photo_id!r} in {job.images_dir}")
        batch_ids.append(photo_id)
        batch_tensors.append(tensor)
        if len(batch_ids) >= job.batch_size:
            flush()
    flush()
    if not per_layer[job.layers[0]]:
        raise ValueError(f"no decodable images in {job.images_dir}")
    return per_layer


def _manifest(job, kinds, files):
    return json.dumps(
        {
            "kinds": list(kinds),
            "images_dir": str(job.images_dir),
            "layers": list(job.layers),
            "weights": job.weights,
            "deterministic": job.deterministic,
            "resize_policy": {
                "short_side": vgg.RESIZE_SHORT_SIDE,
                "crop": vgg.CROP_SIZE,
                "mean": list(vgg.CHANNEL_MEAN),
                "std": list(vgg.CHANNEL_STD),
            },
            "files": files,
        },
        indent=2,
        sort_keys=True,
    ) + "\n"


def run_job(job, exports=("style",)):
    """One inference pass over the corpus; write the requested outputs.

    exports is any subset of {"maps", "style"}. Returns the written paths
    (manifest last).
    """
    exports = tuple(exports)
    for kind in exports:
        if kind not in ("maps", "style"):
            raise ValueError(f"exports must be 'maps' or 'style', got {kind!r}")
    if not exports:
        raise ValueError("nothing to export")
    per_layer = _run_inference(job)
    written = []
    for layer in job.layers:
        maps = per_layer[layer]
        if "maps" in exports:
            records = [(photo_id, layer, maps[photo_id]) for photo_id in sorted(maps)]
            path = job.out_dir / f"maps_layer{layer:02d}.phfm"
            write_atomic(path, map_file_bytes(records))
            written.append(path)
        if "style" in exports:
            vectors = {pid: gram_vector(fmap) for pid, fmap in maps.items()}
            path = job.out_dir / f"style_layer{layer:02d}.phfv"
            write_atomic(path, feature_file_bytes(vectors))
            written.append(path)
    manifest_path = job.out_dir / "manifest.json"
    write_atomic(
        manifest_path, _manifest(job, exports, [p.name for p in written]).encode("utf-8")
    )
    return written + [manifest_path]


def extract(job):
    """Write one consolidated raw-map file per layer; returns written paths."""
    return run_job(job, exports=("maps",))


def export_style(job):
    """Write one style feature file per layer; returns written paths."""
    return run_job(job, exports=("style",))
