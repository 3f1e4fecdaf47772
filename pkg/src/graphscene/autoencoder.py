"""3D convolutional autoencoder used by the evaluation metrics.

Reconstruction agreement gives the plausibility proxy (mIoU / mean accuracy)
and the mean-pooled 128-d bottleneck is the feature space for the Fréchet
scene distance.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .dataset import VoxelScene
from .diffusion import one_hot
from .palette import NUM_CLASSES


class SceneAutoencoder(nn.Module):
    def __init__(self, num_classes: int = NUM_CLASSES, widths: tuple[int, int] = (32, 64),
                 feature_dim: int = 128):
        super().__init__()
        self.init_kwargs = dict(num_classes=num_classes, widths=tuple(widths),
                                feature_dim=feature_dim)
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        w0, w1 = widths
        self.encoder = nn.Sequential(
            nn.Conv3d(num_classes, w0, 3, stride=2, padding=1), nn.GroupNorm(8, w0), nn.SiLU(),
            nn.Conv3d(w0, w1, 3, stride=2, padding=1), nn.GroupNorm(8, w1), nn.SiLU(),
            nn.Conv3d(w1, feature_dim, 3, stride=2, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose3d(feature_dim, w1, 2, stride=2), nn.GroupNorm(8, w1), nn.SiLU(),
            nn.ConvTranspose3d(w1, w0, 2, stride=2), nn.GroupNorm(8, w0), nn.SiLU(),
            nn.ConvTranspose3d(w0, num_classes, 2, stride=2),
        )

    def forward(self, z_onehot: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(z_onehot))

    def bottleneck(self, z_onehot: torch.Tensor) -> torch.Tensor:
        """Mean-pooled bottleneck features, [B, feature_dim]."""
        return self.encoder(z_onehot).mean(dim=(2, 3, 4))


def scenes_to_onehot(scenes: list[VoxelScene]) -> torch.Tensor:
    grids = torch.stack([torch.from_numpy(s.grid.copy()).long() for s in scenes])
    return one_hot(grids, NUM_CLASSES).permute(0, 4, 1, 2, 3)


def encode_features(scenes: list[VoxelScene], model: SceneAutoencoder,
                    chunk: int = 32) -> torch.Tensor:
    feats = []
    with torch.no_grad():
        for start in range(0, len(scenes), chunk):
            feats.append(model.bottleneck(scenes_to_onehot(scenes[start:start + chunk])))
    return torch.cat(feats)


def reconstruct(scene: VoxelScene, model: SceneAutoencoder) -> VoxelScene:
    with torch.no_grad():
        logits = model(scenes_to_onehot([scene]))
    return VoxelScene(logits[0].argmax(dim=0).numpy().astype("uint8"))
