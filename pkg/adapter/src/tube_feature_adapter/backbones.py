"""Torchvision backbone registry: which layer to tap and its pixel stride."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torchvision.models import mobilenet_v3_small, resnet18
from torchvision.models.feature_extraction import create_feature_extractor


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    builder: object
    node: str  # graph node whose output is the tapped feature map
    stride: int  # cumulative pixel stride of that node

    @property
    def spatial_scale(self) -> float:
        return 1.0 / self.stride


REGISTRY = {
    "resnet18-layer3": BackboneSpec("resnet18-layer3", resnet18, "layer3", 16),
    "resnet18-layer4": BackboneSpec("resnet18-layer4", resnet18, "layer4", 32),
    "mobilenet_v3_small-12": BackboneSpec(
        "mobilenet_v3_small-12", mobilenet_v3_small, "features.12", 32
    ),
}


class BackboneError(RuntimeError):
    """Raised when the requested backbone cannot be constructed or loaded."""


def load_backbone(name: str, weights_path: str | None = None):
    """Build the tapped feature extractor; weights load from a local file when given.

    Without a weights file the backbone keeps its random initialization, which
    is enough for format-conformance runs; pass pretrained weights for real use.
    """
    if name not in REGISTRY:
        raise BackboneError(f"unknown backbone {name!r}; options: {sorted(REGISTRY)}")
    spec = REGISTRY[name]
    try:
        model = spec.builder(weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        model.eval()
        extractor = create_feature_extractor(model, return_nodes={spec.node: "map"})
    except (OSError, RuntimeError, ValueError) as exc:
        raise BackboneError(f"cannot load backbone {name!r}: {exc}") from exc
    return extractor, spec
