"""The image pathway: encoder, decoder, discriminator, mask head, and fusion.

edit() composes everything: text encoding, mask prediction (where), routed
feature transformation (how), gated fusion, and decoding.
"""

from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError
from .routing import (
    RouteParams,
    RoutedNetwork,
    RoutingConfig,
    apply_route,
    generate_route_params,
)
from .text import TextEncoder, TextFeatures, Vocabulary

VARIANTS = ("full", "no_where", "no_how", "no_text_adaptive")


@dataclass
class ModelConfig:
    canvas: int = 64
    channels: int = 32          # feature channels C at 1/8 resolution
    d0: int = 64                # token embedding width
    d: int = 64                 # pooled text feature width
    layers: int = 2
    blocks: int = 3
    tau: float = 1.0
    hard_eval: bool = False
    max_len: int = 12
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.canvas % 8 != 0:
            raise ValueError("canvas must be divisible by 8")

    def routing(self) -> RoutingConfig:
        return RoutingConfig(
            layers=self.layers, blocks=self.blocks, channels=self.channels,
            tau=self.tau, hard_eval=self.hard_eval,
        )


class ImageEncoder(nn.Module):
    """Three stride-2 3x3 convs, each with instance norm and a rectifier.

    Two fixed coordinate channels (linspace over -1..1) are appended to the
    input so downstream heads can resolve absolute position — the spatial
    mask must be able to select an instruction's target cell even when the
    cell is empty and the content gives no cue.
    """

    def __init__(self, channels: int, canvas: int):
        super().__init__()
        self.canvas = canvas
        ramp = torch.linspace(-1.0, 1.0, canvas)
        rows = ramp.view(1, 1, canvas, 1).expand(1, 1, canvas, canvas)
        cols = ramp.view(1, 1, 1, canvas).expand(1, 1, canvas, canvas)
        self.register_buffer("coords", torch.cat([rows, cols], dim=1))
        widths = (32, 64, channels)
        layers: list[nn.Module] = []
        c_in = 5
        for c_out in widths:
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.InstanceNorm2d(c_out),
                nn.ReLU(),
            ]
            c_in = c_out
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != 3 or x.shape[2] != self.canvas or x.shape[3] != self.canvas:
            raise ShapeError(f"expected 3x{self.canvas}x{self.canvas} image, got {tuple(x.shape[1:])}")
        coords = self.coords.expand(x.shape[0], -1, -1, -1).to(x.dtype)
        out = self.net(torch.cat([x, coords], dim=1))
        return out.squeeze(0) if squeeze else out


class ResBlock(nn.Module):
    """Two 3x3 convs with instance norm and ReLU, identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(x + h)


class ImageDecoder(nn.Module):
    """Two residual blocks, three stride-2 transposed convs, final sigmoid."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.res1 = ResBlock(channels)
        self.res2 = ResBlock(channels)
        self.up1 = nn.ConvTranspose2d(channels, 128, 3, stride=2, padding=1, output_padding=1)
        self.norm1 = nn.InstanceNorm2d(128)
        self.up2 = nn.ConvTranspose2d(128, 64, 3, stride=2, padding=1, output_padding=1)
        self.norm2 = nn.InstanceNorm2d(64)
        self.up3 = nn.ConvTranspose2d(64, 3, 3, stride=2, padding=1, output_padding=1)
        # start at the canvas background gray so flat regions reconstruct immediately
        with torch.no_grad():
            self.up3.bias.fill_(math.log(0.8 / 0.2))

    def forward(self, phi: torch.Tensor) -> torch.Tensor:
        squeeze = phi.dim() == 3
        if squeeze:
            phi = phi.unsqueeze(0)
        if phi.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} feature channels, got {phi.shape[1]}")
        h = self.res2(self.res1(phi))
        h = F.relu(self.norm1(self.up1(h)))
        h = F.relu(self.norm2(self.up2(h)))
        img = torch.sigmoid(self.up3(h))
        return img.squeeze(0) if squeeze else img


class Discriminator(nn.Module):
    """Patch discriminator: three stride-2 3x3 convs + ReLU, 1x1 score conv."""

    def __init__(self, canvas: int):
        super().__init__()
        self.canvas = canvas
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(64, 1, 1),
        )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        if img.shape[1] != 3 or img.shape[2] != self.canvas or img.shape[3] != self.canvas:
            raise ShapeError(f"expected 3x{self.canvas}x{self.canvas} image")
        out = self.net(img)
        return out.squeeze(0) if squeeze else out


class MaskHead(nn.Module):
    """Spatial mask from image features and phi_where.

    v = ResBlock(phi_x); e = MLP(phi_where) with two rectified layers; the
    mask is sigmoid of a 1x1 conv over e (broadcast) * v. Left unnormalized.
    """

    def __init__(self, channels: int, d: int):
        super().__init__()
        self.res = ResBlock(channels)
        self.mlp = nn.Sequential(
            nn.Linear(d, 2 * d), nn.ReLU(),
            nn.Linear(2 * d, channels), nn.ReLU(),
        )
        self.w_m = nn.Conv2d(channels, 1, 1)

    def forward(self, phi_x: torch.Tensor, phi_where: torch.Tensor) -> torch.Tensor:
        squeeze = phi_x.dim() == 3
        if squeeze:
            phi_x = phi_x.unsqueeze(0)
            phi_where = phi_where.unsqueeze(0)
        if phi_where.shape[0] != phi_x.shape[0]:
            raise ShapeError("batch mismatch between phi_x and phi_where")
        v = self.res(phi_x)
        e = self.mlp(phi_where).unsqueeze(-1).unsqueeze(-1)  # (B, C, 1, 1)
        mask = torch.sigmoid(self.w_m(e * v))  # (B, 1, H, W)
        return mask.squeeze(0) if squeeze else mask


class FixedEditNet(nn.Module):
    """Routing-free stand-in operator for the no_how ablation.

    Same depth as the routed network; consumes phi_x concatenated with
    phi_how broadcast over spatial positions.
    """

    def __init__(self, channels: int, d: int, blocks: int):
        super().__init__()
        # hidden width chosen for parameter parity with the routed conv
        # stack it replaces: 9(C+d)h + 9hC + 3h + C == layers*blocks*(9C^2+C)
        hidden = (blocks * channels) // 2
        self.conv1 = nn.Conv2d(channels + d, hidden, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(hidden, affine=True)
        self.conv2 = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, phi_x: torch.Tensor, phi_how: torch.Tensor) -> torch.Tensor:
        b, _, h, w = phi_x.shape
        text = phi_how.unsqueeze(-1).unsqueeze(-1).expand(b, -1, h, w)
        out = F.relu(self.norm1(self.conv1(torch.cat([phi_x, text], dim=1))))
        return self.conv2(out)


def fuse(phi_x: torch.Tensor, mask: torch.Tensor, phi_edit: torch.Tensor) -> torch.Tensor:
    """Gated identity blend: (1 - M) * phi_x + M * phi_edit, M broadcast over channels."""
    if phi_x.shape != phi_edit.shape:
        raise ShapeError("phi_x and phi_edit must share a shape")
    if mask.shape[-2:] != phi_x.shape[-2:]:
        raise ShapeError("mask spatial dims must match the features")
    return (1.0 - mask) * phi_x + mask * phi_edit


@dataclass
class EditResult:
    y_hat: torch.Tensor
    mask: torch.Tensor
    text: TextFeatures
    route: RouteParams
    phi_x: torch.Tensor
    phi_y_hat: torch.Tensor


class TimGanModel(nn.Module):
    """Everything needed to run and train edit(x, t) -> y_hat."""

    def __init__(self, vocab: Vocabulary, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.text_encoder = TextEncoder(vocab, d0=cfg.d0, d=cfg.d, max_len=cfg.max_len)
        self.encoder = ImageEncoder(cfg.channels, cfg.canvas)
        self.decoder = ImageDecoder(cfg.channels)
        self.mask_head = MaskHead(cfg.channels, cfg.d)
        self.routing = RoutedNetwork(cfg.routing(), cfg.d)
        self.discriminator = Discriminator(cfg.canvas)
        # variant-specific modules are constructed last so the shared-module
        # init stream is identical across variants under one seed
        if cfg.variant == "no_how":
            self.fixed_edit = FixedEditNet(cfg.channels, cfg.d, cfg.blocks)
        if cfg.variant == "no_text_adaptive":
            shape = (cfg.layers, cfg.blocks, cfg.channels)
            self.free_beta = nn.Parameter(torch.zeros(shape))
            self.free_gamma = nn.Parameter(torch.ones(shape))

    @property
    def vocab(self) -> Vocabulary:
        return self.text_encoder.vocab

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def decode_feature(self, phi: torch.Tensor) -> torch.Tensor:
        return self.decoder(phi)

    def predict_mask(self, phi_x: torch.Tensor, phi_where: torch.Tensor) -> torch.Tensor:
        return self.mask_head(phi_x, phi_where)

    def discriminate(self, img: torch.Tensor) -> torch.Tensor:
        return self.discriminator(img)

    def apply_operator(
        self,
        phi_x: torch.Tensor,
        phi_how: torch.Tensor,
        rng: Optional[torch.Generator],
    ) -> tuple[torch.Tensor, RouteParams]:
        """Run the how-operator for the active variant; phi_x is (B, C, H, W)."""
        cfg = self.config.routing()
        params = generate_route_params(phi_how, self.routing, cfg, rng)
        if self.config.variant == "no_how":
            return self.fixed_edit(phi_x, phi_how), params
        if self.config.variant == "no_text_adaptive":
            b = phi_x.shape[0]
            params = RouteParams(
                alpha=params.alpha,
                beta=self.free_beta.unsqueeze(0).expand(b, -1, -1, -1),
                gamma=self.free_gamma.unsqueeze(0).expand(b, -1, -1, -1),
                pi_logits=params.pi_logits,
            )
        return apply_route(phi_x, params, self.routing), params

    def forward_batch(
        self,
        x: torch.Tensor,
        instructions: list[str],
        rng: Optional[torch.Generator] = None,
    ) -> EditResult:
        text, _, _ = self.text_encoder.encode_batch(instructions)
        phi_x = self.encoder(x)
        if self.config.variant == "no_where":
            mask = torch.ones(
                (x.shape[0], 1, phi_x.shape[-2], phi_x.shape[-1]), dtype=phi_x.dtype
            )
        else:
            mask = self.mask_head(phi_x, text.phi_where)
        phi_edit, route = self.apply_operator(phi_x, text.phi_how, rng)
        phi_y_hat = fuse(phi_x, mask, phi_edit)
        y_hat = self.decoder(phi_y_hat)
        return EditResult(y_hat, mask, text, route, phi_x, phi_y_hat)

    def edit(
        self,
        x: torch.Tensor,
        instruction: str,
        rng: Optional[torch.Generator] = None,
    ) -> EditResult:
        """Single-sample pipeline returning all intermediates for inspection."""
        result = self.forward_batch(x.unsqueeze(0), [instruction], rng)
        return EditResult(
            y_hat=result.y_hat.squeeze(0),
            mask=result.mask.squeeze(0),
            text=TextFeatures(
                phi_where=result.text.phi_where.squeeze(0),
                phi_how=result.text.phi_how.squeeze(0),
                attn_where=result.text.attn_where.squeeze(0),
                attn_how=result.text.attn_how.squeeze(0),
            ),
            route=RouteParams(
                alpha=result.route.alpha.squeeze(0),
                beta=result.route.beta.squeeze(0),
                gamma=result.route.gamma.squeeze(0),
                pi_logits=result.route.pi_logits.squeeze(0),
            ),
            phi_x=result.phi_x.squeeze(0),
            phi_y_hat=result.phi_y_hat.squeeze(0),
        )
