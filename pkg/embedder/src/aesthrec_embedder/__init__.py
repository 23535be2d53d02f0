"""VGG-19 feature-map and style-vector exporter for the shared feature formats."""

__version__ = "0.1.0"

from .extract import ExtractionJob, export_style, extract, gram_vector, run_job
from .vgg import LAYER_COUNT, LAYER_TABLE, SetupError, layer_channels
