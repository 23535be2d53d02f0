import numpy as np
import pytest
from PIL import Image

from aesthrec_embedder import ExtractionJob, run_job


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(90125)
    for i in range(3):
        pixels = rng.integers(0, 256, size=(260, 300, 3)).astype(np.uint8)
        Image.fromarray(pixels).save(root / f"pic{i}.png")
    Image.new("RGB", (280, 280), (200, 30, 30)).save(root / "solid.png")
    return root


@pytest.fixture(scope="session")
def exported(image_dir, tmp_path_factory):
    """One corpus pass over layers 1 and 8 with seeded random weights."""
    out = tmp_path_factory.mktemp("exported")
    job = ExtractionJob(
        images_dir=image_dir, out_dir=out, layers=(1, 8), weights="random:0", batch_size=2
    )
    run_job(job, exports=("maps", "style"))
    return out
