"""Model assembly: encoder, diagnostic classifier, demographic head."""
import hashlib

import torch
from torch import nn
from torchvision.models import DenseNet121_Weights, densenet121

FEATURE_WIDTH = 1024  # pooled output width of the densenet121 trunk


def build_diagnostic_model(n_labels, pretrained=True):
    """densenet121 with its classifier replaced by an n_labels head."""
    weights = DenseNet121_Weights.IMAGENET1K_V1 if pretrained else None
    model = densenet121(weights=weights)
    model.classifier = nn.Linear(FEATURE_WIDTH, n_labels)
    return model


def pooled_features(model, x):
    """(B, FEATURE_WIDTH) globally pooled encoder activations."""
    fmap = model.features(x)
    fmap = torch.relu(fmap)
    return torch.nn.functional.adaptive_avg_pool2d(fmap, 1).flatten(1)


def build_race_head(n_groups, feature_width=FEATURE_WIDTH):
    """Single linear layer over pooled features; softmax applied by callers."""
    return nn.Linear(feature_width, n_groups)


def encoder_checksum(model):
    """SHA-256 over every encoder parameter and buffer, in name order.

    Covers buffers too, so drifting normalization statistics count as a
    mutation just like weight updates would.
    """
    digest = hashlib.sha256()
    items = list(model.features.named_parameters())
    items += list(model.features.named_buffers())
    for name, tensor in sorted(items, key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
