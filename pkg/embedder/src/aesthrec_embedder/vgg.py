"""VGG-19 backbone access: layer table, weight loading, preprocessing."""

from pathlib import Path

import torch
from torchvision import models, transforms


class SetupError(RuntimeError):
    """Weights or model resources are unavailable."""


# Layer indices 1-10 walk the first two convolutions of each block
# (conv1_1 .. conv5_2); 11-16 cover the remaining block-3/4/5 convolutions.
# Index 8 is pinned to conv4_2. Each entry: (name, features-module index of
# the convolution, output channels).
LAYER_TABLE = {
    1: ("conv1_1", 0, 64),
    2: ("conv1_2", 2, 64),
    3: ("conv2_1", 5, 128),
    4: ("conv2_2", 7, 128),
    5: ("conv3_1", 10, 256),
    6: ("conv3_2", 12, 256),
    7: ("conv4_1", 19, 512),
    8: ("conv4_2", 21, 512),
    9: ("conv5_1", 28, 512),
    10: ("conv5_2", 30, 512),
    11: ("conv3_3", 14, 256),
    12: ("conv3_4", 16, 256),
    13: ("conv4_3", 23, 512),
    14: ("conv4_4", 25, 512),
    15: ("conv5_3", 32, 512),
    16: ("conv5_4", 34, 512),
}

LAYER_COUNT = len(LAYER_TABLE)

# shortest side, crop size, and channel statistics of the pretrained regime
RESIZE_SHORT_SIDE = 256
CROP_SIZE = 224
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


def layer_channels(layer_index):
    """Output channel count of a 1-based layer index."""
    return LAYER_TABLE[validate_layer(layer_index)][2]


def validate_layer(layer_index):
    if layer_index not in LAYER_TABLE:
        raise ValueError(f"layer index must lie in 1..{LAYER_COUNT}, got {layer_index}")
    return layer_index


def build_feature_extractor(weights="imagenet"):
    """Convolutional trunk of VGG-19 in eval mode.

    weights: 'imagenet' (pretrained download), 'random:SEED' (deterministic
    seeded initialization, mainly for tests and format work), or a path to a
    torchvision-format state dict. Weights are consumed as-is, never trained.
    """
    spec = str(weights)
    if spec == "imagenet":
        try:
            model = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise SetupError(f"could not load pretrained weights: {exc}") from exc
    elif spec.startswith("random:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise SetupError(f"bad random weights spec {spec!r}, expected random:SEED") from None
        torch.manual_seed(seed)
        model = models.vgg19(weights=None)
    else:
        path = Path(spec)
        if not path.exists():
            raise SetupError(f"weights file not found: {path}")
        model = models.vgg19(weights=None)
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    trunk = model.features.eval()
    for parameter in trunk.parameters():
        parameter.requires_grad_(False)
    return trunk


def preprocess():
    """Standard pretrained-regime input pipeline (resize, crop, normalize)."""
    return transforms.Compose(
        [
            transforms.Resize(RESIZE_SHORT_SIDE, antialias=True),
            transforms.CenterCrop(CROP_SIZE),
            transforms.ToTensor(),
            transforms.Normalize(CHANNEL_MEAN, CHANNEL_STD),
        ]
    )


def activation_maps(trunk, batch, layer_indices):
    """Post-ReLU activations at the requested layers for one input batch.

    Returns {layer_index: tensor of shape (batch, C, H, W)}.
    """
    wanted = {}
    for layer in layer_indices:
        _, conv_idx, _ = LAYER_TABLE[validate_layer(layer)]
        wanted[conv_idx + 1] = layer  # module after the conv is its ReLU
    out = {}
    x = batch
    last = max(wanted) if wanted else -1
    with torch.no_grad():
        for idx, module in enumerate(trunk):
            x = module(x)
            if idx in wanted:
                out[wanted[idx]] = x
            if idx == last:
                break
    return out
