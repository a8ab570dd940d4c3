"""Segmentation model contract and the bundled reference network.

The training loop only relies on the small contract below, so any
segmentation backbone can be plugged in. The bundled network is a compact
encoder-decoder (3 downsampling and 3 upsampling conv blocks with skip
connections, sigmoid head, well under 500k parameters) sized so the whole
pipeline runs at desk scale on a CPU.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import parameters_to_vector, vector_to_parameters


@runtime_checkable
class SegmentationModel(Protocol):
    """What the trainer needs from a model.

    forward maps a (B, C, H, W) image batch to (B, H, W) foreground
    probabilities in (0, 1) and must be deterministic given parameters in
    evaluation mode. Parameters are exposed as one flat vector.
    """

    def forward(self, x: torch.Tensor) -> torch.Tensor: ...

    def parameter_vector(self) -> torch.Tensor: ...

    def load_parameter_vector(self, vec: torch.Tensor) -> None: ...

    def step(self, loss: torch.Tensor, lr: float) -> None: ...


def _gn(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class _Block(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            _gn(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class ReferenceNet(nn.Module):
    """Small U-shaped binary segmentation network.

    GroupNorm keeps single-sample training stable and leaves the module
    buffer-free, so the flat parameter vector is the complete model state.
    Inputs whose sides are not multiples of 8 are padded and the output
    cropped back, so output shape always equals input shape.
    """

    def __init__(self, in_channels: int = 1, widths=(8, 16, 32, 64)):
        super().__init__()
        c0, c1, c2, c3 = widths
        self.stem = _Block(in_channels, c0)
        self.down1 = _Block(c0, c1)
        self.down2 = _Block(c1, c2)
        self.down3 = _Block(c2, c3)
        self.pool = nn.MaxPool2d(2)
        self.up1 = nn.ConvTranspose2d(c3, c2, 2, stride=2)
        self.dec1 = _Block(2 * c2, c2)
        self.up2 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.dec2 = _Block(2 * c1, c1)
        self.up3 = nn.ConvTranspose2d(c1, c0, 2, stride=2)
        self.dec3 = _Block(2 * c0, c0)
        self.head = nn.Conv2d(c0, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        ph, pw = (-h) % 8, (-w) % 8
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        s0 = self.stem(x)
        s1 = self.down1(self.pool(s0))
        s2 = self.down2(self.pool(s1))
        b = self.down3(self.pool(s2))
        y = self.dec1(torch.cat([self.up1(b), s2], dim=1))
        y = self.dec2(torch.cat([self.up2(y), s1], dim=1))
        y = self.dec3(torch.cat([self.up3(y), s0], dim=1))
        out = torch.sigmoid(self.head(y)).squeeze(1)
        return out[..., :h, :w]

    # -- contract methods ---------------------------------------------------

    def parameter_vector(self) -> torch.Tensor:
        return parameters_to_vector(self.parameters()).detach().clone()

    def load_parameter_vector(self, vec: torch.Tensor) -> None:
        vector_to_parameters(vec.to(next(self.parameters()).dtype), self.parameters())

    def step(self, loss: torch.Tensor, lr: float) -> None:
        """One plain SGD update from a scalar loss."""
        self.zero_grad(set_to_none=True)
        loss.backward()
        with torch.no_grad():
            for p in self.parameters():
                if p.grad is not None:
                    p.add_(p.grad, alpha=-lr)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def image_batch_to_tensor(images) -> torch.Tensor:
    """Stack H x W x C float arrays into a (B, C, H, W) float32 tensor."""
    arrs = [np.asarray(im.pixels if hasattr(im, "pixels") else im) for im in images]
    batch = np.stack(arrs).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))


@torch.no_grad()
def predict_probs(model, images, batch_size: int = 16) -> list:
    """Evaluation-mode forward over a list of images -> list of H x W arrays."""
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        probs = model.forward(image_batch_to_tensor(chunk))
        out.extend(np.asarray(probs[j].numpy()) for j in range(probs.shape[0]))
    if was_training and hasattr(model, "train"):
        model.train()
    return out
