"""Backbone registry.

Every entry resolves an identifier string to a frozen feature extractor
with a known patch size and width. The hub entries pull pretrained
self-supervised ViTs through torch.hub (network required, load failure
aborts the export); ``toy-vit-8`` is a seeded random ViT that needs no
downloads and exists so the export path can be exercised offline. Its
features mean nothing, but its bytes are deterministic.
"""

from dataclasses import dataclass, field
from typing import Callable

import torch
from torch import nn

from .errors import BackboneLoadError


@dataclass
class Backbone:
    name: str
    patch_size: int
    feature_dim: int
    module: nn.Module = field(repr=False)
    _extract: Callable = field(repr=False)

    def extract(self, batch: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) normalized pixels -> (B, H/p, W/p, Z) patch tokens."""
        out = self._extract(self.module, batch)
        if out.shape[-1] != self.feature_dim:
            raise BackboneLoadError(
                f"{self.name} produced width {out.shape[-1]}, registry says {self.feature_dim}"
            )
        return out


class _TinyViT(nn.Module):
    # patch embed + two pre-norm transformer blocks; weights come from the
    # default initializers under a fixed torch seed
    def __init__(self, patch_size: int, width: int, depth: int, heads: int):
        super().__init__()
        self.patch_size = patch_size
        self.embed = nn.Conv2d(3, width, kernel_size=patch_size, stride=patch_size)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(width, heads, dim_feedforward=2 * width,
                                       dropout=0.0, batch_first=True, norm_first=True)
            for _ in range(depth)
        )
        self.norm = nn.LayerNorm(width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.embed(x)
        b, c, gh, gw = tokens.shape
        tokens = tokens.flatten(2).transpose(1, 2)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens).reshape(b, gh, gw, c)


def _load_toy(patch_size: int = 8, width: int = 32) -> nn.Module:
    torch.manual_seed(46716)
    return _TinyViT(patch_size, width, depth=2, heads=4)


def _extract_forward(module: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    return module(batch)


def _load_hub(repo: str, entry: str) -> nn.Module:
    try:
        return torch.hub.load(repo, entry)
    except Exception as exc:
        raise BackboneLoadError(f"could not load {entry} from {repo}: {exc}") from exc


def _extract_dinov2(module: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    # (B, Z, gh, gw) from the last block, channels first
    feats = module.get_intermediate_layers(batch, n=1, reshape=True)[0]
    return feats.permute(0, 2, 3, 1).contiguous()


def _extract_dino_v1(module: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    tokens = module.get_intermediate_layers(batch, n=1)[0][:, 1:]  # drop CLS
    b, n, z = tokens.shape
    gh = batch.shape[-2] // module.patch_embed.patch_size
    gw = batch.shape[-1] // module.patch_embed.patch_size
    return tokens.reshape(b, gh, gw, z).contiguous()


_REGISTRY = {
    "toy-vit-8": (8, 32, _load_toy, _extract_forward),
    "dinov2_vits14": (14, 384,
                      lambda: _load_hub("facebookresearch/dinov2", "dinov2_vits14"),
                      _extract_dinov2),
    "dinov2_vitb14": (14, 768,
                      lambda: _load_hub("facebookresearch/dinov2", "dinov2_vitb14"),
                      _extract_dinov2),
    "dinov2_vitl14": (14, 1024,
                      lambda: _load_hub("facebookresearch/dinov2", "dinov2_vitl14"),
                      _extract_dinov2),
    "dino_vitb16": (16, 768,
                    lambda: _load_hub("facebookresearch/dino:main", "dino_vitb16"),
                    _extract_dino_v1),
}


def list_backbones() -> list:
    return sorted(_REGISTRY)


def load_backbone(name: str) -> Backbone:
    """Build the named backbone frozen: eval mode, no parameter gradients."""
    if name not in _REGISTRY:
        raise BackboneLoadError(
            f"unknown backbone {name!r}; available: {', '.join(list_backbones())}"
        )
    patch_size, feature_dim, load, extract = _REGISTRY[name]
    try:
        module = load()
    except BackboneLoadError:
        raise
    except Exception as exc:
        raise BackboneLoadError(f"could not construct {name}: {exc}") from exc
    module.eval()
    for param in module.parameters():
        param.requires_grad_(False)
    return Backbone(name, patch_size, feature_dim, module, extract)
