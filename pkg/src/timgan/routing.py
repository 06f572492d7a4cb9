"""Text-adaptive routing: Gumbel-softmax block selection and routed execution.

A routed network is l layers of m conv blocks. The instruction's pooled
feature generates, per layer, block-selection logits plus per-channel (beta,
gamma) used to modulate instance-normalized block outputs. Block kernels are
shared across all instructions; only the generated parameters vary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DomainError, ShapeError

GUMBEL_EPS = 1e-12
NORM_EPS = 1e-5


@dataclass
class RoutingConfig:
    layers: int = 2
    blocks: int = 3
    channels: int = 32  # p: normalization params per block, one per channel
    tau: float = 1.0
    hard_eval: bool = False

    def __post_init__(self):
        if self.layers < 1 or self.blocks < 1 or self.channels < 1:
            raise ValueError("layers, blocks, channels must be >= 1")
        if self.tau <= 0:
            raise DomainError("tau must be > 0")


@dataclass
class RouteParams:
    alpha: torch.Tensor      # (..., l, m), rows sum to 1
    beta: torch.Tensor       # (..., l, m, p)
    gamma: torch.Tensor      # (..., l, m, p)
    pi_logits: torch.Tensor  # (..., l, m), pre-noise logits, kept for export


def gumbel_sample(
    pi_logits: torch.Tensor,
    tau: float,
    rng: Optional[torch.Generator],
    hard_eval: bool = False,
) -> torch.Tensor:
    """Relaxed categorical sample over the last dimension.

    With an rng, adds Gumbel noise -log(-log(u)); with rng=None the draw is
    deterministic (softmax of logits / tau, or a one-hot argmax in hard mode,
    ties resolved to the lowest index).
    """
    if tau <= 0:
        raise DomainError("tau must be > 0")
    if rng is None:
        if hard_eval:
            idx = torch.argmax(pi_logits, dim=-1)
            return F.one_hot(idx, pi_logits.shape[-1]).to(pi_logits.dtype)
        return torch.softmax(pi_logits / tau, dim=-1)
    u = torch.rand(pi_logits.shape, generator=rng, dtype=pi_logits.dtype,
                   device=pi_logits.device)
    u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    g = -torch.log(-torch.log(u))
    return torch.softmax((pi_logits + g) / tau, dim=-1)


class RoutedNetwork(nn.Module):
    """Shared conv blocks plus the MLP that maps phi_how to route parameters."""

    def __init__(self, cfg: RoutingConfig, d: int):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.convs = nn.ModuleList(
            nn.Conv2d(c, c, kernel_size=3, padding=1)
            for _ in range(cfg.layers * cfg.blocks)
        )
        out_dim = cfg.layers * cfg.blocks * (1 + 2 * c)
        self.mlp = nn.Sequential(
            nn.Linear(d, 2 * d),
            nn.ReLU(),
            nn.Linear(2 * d, out_dim),
        )

    def conv(self, layer: int, block: int) -> nn.Conv2d:
        return self.convs[layer * self.cfg.blocks + block]


def generate_route_params(
    phi_how: torch.Tensor,
    net: RoutedNetwork,
    cfg: RoutingConfig,
    rng: Optional[torch.Generator],
) -> RouteParams:
    """Map phi_how (d,) or (B, d) to per-layer (alpha, beta, gamma).

    Gamma carries a +1 offset so a zero-initialized MLP yields identity-scale
    modulation; alpha rows come from gumbel_sample per layer.
    """
    if not torch.isfinite(phi_how).all():
        raise ShapeError("phi_how must be finite")
    l, m, p = cfg.layers, cfg.blocks, cfg.channels
    raw = net.mlp(phi_how)  # (..., l*m*(1+2p))
    lead = raw.shape[:-1]
    pi_logits = raw[..., : l * m].reshape(*lead, l, m)
    rest = raw[..., l * m:].reshape(*lead, l, m, 2 * p)
    beta = rest[..., :p]
    gamma = rest[..., p:] + 1.0
    alpha = gumbel_sample(pi_logits, cfg.tau, rng, hard_eval=cfg.hard_eval)
    return RouteParams(alpha=alpha, beta=beta, gamma=gamma, pi_logits=pi_logits)


def instance_norm(o: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Per-instance, per-channel standardization over spatial dims.

    Biased (population) variance; identical behavior at train and eval time.
    o: (B, C, H, W).
    """
    mu = o.mean(dim=(-2, -1), keepdim=True)
    var = o.var(dim=(-2, -1), unbiased=False, keepdim=True)
    return (o - mu) / torch.sqrt(var + eps)


def apply_route(
    phi_x: torch.Tensor, params: RouteParams, net: RoutedNetwork
) -> torch.Tensor:
    """Run the routed operator over image features.

    phi_x: (C, H, W) or (B, C, H, W). Each block's output is instance
    normalized, modulated by (gamma, beta), and blended by alpha; a rectifier
    sits between layers but not after the last.
    """
    cfg = net.cfg
    squeeze = phi_x.dim() == 3
    a = phi_x.unsqueeze(0) if squeeze else phi_x
    alpha, beta, gamma = params.alpha, params.beta, params.gamma
    if squeeze and alpha.dim() == 2:
        alpha = alpha.unsqueeze(0)
        beta = beta.unsqueeze(0)
        gamma = gamma.unsqueeze(0)
    if a.shape[1] != cfg.channels:
        raise ShapeError(
            f"expected {cfg.channels} channels, got {a.shape[1]}"
        )
    if alpha.shape[-2:] != (cfg.layers, cfg.blocks):
        raise ShapeError("route params do not match the network configuration")

    for i in range(cfg.layers):
        out = None
        for j in range(cfg.blocks):
            o = instance_norm(net.conv(i, j)(a))
            g = gamma[:, i, j].unsqueeze(-1).unsqueeze(-1)  # (B, C, 1, 1)
            b = beta[:, i, j].unsqueeze(-1).unsqueeze(-1)
            w = alpha[:, i, j].reshape(-1, 1, 1, 1)
            term = w * (g * o + b)
            out = term if out is None else out + term
        a = F.relu(out) if i < cfg.layers - 1 else out
    return a.squeeze(0) if squeeze else a
