"""Autoencoder pretraining, the four-term loss, and the alternating GAN loop.

The image encoder is pretrained jointly with the decoder and then frozen;
end-to-end training alternates one discriminator step and one generator step
per batch. Everything is seed-deterministic: data order, parameter init, and
Gumbel noise all derive from the config seed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .editor import EditResult, ModelConfig, TimGanModel, fuse
from .errors import ToleranceExceeded
from .routing import RouteParams, RoutedNetwork, RoutingConfig, apply_route
from .scenegen import EditSample
from .text import AttentionHead, Vocabulary, attention_pool


@dataclass
class LossWeights:
    lambda_gan: float = 1.0
    lambda_img: float = 10.0
    lambda_attn: float = 10.0
    lambda_feat: float = 10.0

    def __post_init__(self):
        if min(self.lambda_gan, self.lambda_img, self.lambda_attn, self.lambda_feat) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class TrainConfig:
    seed: int
    batch_size: int = 16
    lr: float = 0.002
    betas: tuple[float, float] = (0.5, 0.999)
    epochs: int = 20
    pretrain_batch: int = 8
    pretrain_lr: float = 0.002
    pretrain_epochs: int = 10
    tau: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.pretrain_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ValueError("learning rates must be positive")

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        weights = LossWeights(**raw.pop("weights", {}))
        model = ModelConfig(**raw.pop("model", {}))
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        return cls(weights=weights, model=model, **raw)


@dataclass
class LossBreakdown:
    d_loss: float
    g_adv: float
    l1_img: float
    l1_attn: float
    l1_feat: float
    total_g: float


def derive_true_mask(phi_x: torch.Tensor, phi_y: torch.Tensor) -> torch.Tensor:
    """Noisy supervision target: channel-mean of |phi_y - phi_x|, divided by
    its max (per sample); all-zero difference yields an all-zero mask."""
    if phi_x.shape != phi_y.shape:
        raise ValueError("feature shapes must match")
    squeeze = phi_x.dim() == 3
    if squeeze:
        phi_x, phi_y = phi_x.unsqueeze(0), phi_y.unsqueeze(0)
    m = (phi_y - phi_x).abs().mean(dim=1, keepdim=True)  # (B, 1, H, W)
    peak = m.amax(dim=(-2, -1), keepdim=True)
    mask = torch.where(peak > 0, m / peak.clamp(min=torch.finfo(m.dtype).tiny), torch.zeros_like(m))
    return mask.squeeze(0) if squeeze else mask


def lsgan_losses(
    d_real: torch.Tensor, d_fake_detached: torch.Tensor, d_fake: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares GAN objectives with targets real=1, fake=0.

    d_loss uses the detached fake scores; g_adv pushes attached fakes to 1.
    """
    d_loss = 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake_detached ** 2).mean()
    g_adv = 0.5 * ((d_fake - 1.0) ** 2).mean()
    return d_loss, g_adv


def compute_losses(
    model: TimGanModel,
    x: torch.Tensor,
    y: torch.Tensor,
    instructions: list[str],
    weights: LossWeights,
    rng: Optional[torch.Generator] = None,
    result: Optional[EditResult] = None,
) -> tuple[dict[str, torch.Tensor], EditResult]:
    """Generator-side loss terms for one batch. Returns tensors so callers can
    backpropagate; `result` may carry a precomputed forward pass."""
    if result is None:
        result = model.forward_batch(x, instructions, rng)
    with torch.no_grad():
        phi_y = model.encoder(y)
        true_mask = derive_true_mask(result.phi_x.detach(), phi_y)

    d_fake = model.discriminator(result.y_hat)
    g_adv = 0.5 * ((d_fake - 1.0) ** 2).mean()
    l1_img = (result.y_hat - y).abs().mean()
    if model.config.variant == "no_where":
        l1_attn = torch.zeros((), dtype=x.dtype)
    else:
        l1_attn = (result.mask - true_mask).abs().mean()
    l1_feat = (result.phi_y_hat - phi_y).abs().mean()
    total_g = (
        weights.lambda_gan * g_adv
        + weights.lambda_img * l1_img
        + weights.lambda_attn * l1_attn
        + weights.lambda_feat * l1_feat
    )
    terms = {
        "g_adv": g_adv, "l1_img": l1_img, "l1_attn": l1_attn,
        "l1_feat": l1_feat, "total_g": total_g,
    }
    return terms, result


def compute_loss_breakdown(
    model: TimGanModel,
    x: torch.Tensor,
    y: torch.Tensor,
    instructions: list[str],
    weights: LossWeights,
    rng: Optional[torch.Generator] = None,
) -> LossBreakdown:
    """Scalar view of one batch's losses (no gradients retained)."""
    with torch.no_grad():
        terms, result = compute_losses(model, x, y, instructions, weights, rng)
        d_real = model.discriminator(y)
        d_fake = model.discriminator(result.y_hat)
        d_loss, _ = lsgan_losses(d_real, d_fake, d_fake)
    return LossBreakdown(
        d_loss=float(d_loss),
        g_adv=float(terms["g_adv"]),
        l1_img=float(terms["l1_img"]),
        l1_attn=float(terms["l1_attn"]),
        l1_feat=float(terms["l1_feat"]),
        total_g=float(terms["total_g"]),
    )


def _check_finite(value: float, context: str) -> None:
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite loss ({value}) during {context}; aborting")


def _dataset_tensors(samples: list[EditSample]) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    x = torch.from_numpy(np.stack([s.x for s in samples]))
    y = torch.from_numpy(np.stack([s.y for s in samples]))
    return x, y, [s.instruction.text for s in samples]


def pretrain_autoencoder(
    samples: list[EditSample],
    cfg: TrainConfig,
    out_dir: str | Path,
    max_steps: Optional[int] = None,
) -> Path:
    """Train encoder+decoder to reconstruct all x and y images; saves a
    checkpoint (extra.kind = autoencoder) and a loss-curve CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    vocab = Vocabulary.from_grammar()
    model = TimGanModel(vocab, cfg.model)

    x, y, _ = _dataset_tensors(samples)
    images = torch.cat([x, y], dim=0)
    opt = torch.optim.Adam(
        list(model.encoder.parameters()) + list(model.decoder.parameters()),
        lr=cfg.pretrain_lr, betas=cfg.betas,
    )
    order_rng = torch.Generator().manual_seed(cfg.seed + 1)

    curve: list[tuple[int, float]] = []
    step = 0
    done = False
    epochs = cfg.pretrain_epochs if max_steps is None else 10 ** 9
    for epoch in range(epochs):
        perm = torch.randperm(images.shape[0], generator=order_rng)
        epoch_losses = []
        for start in range(0, images.shape[0], cfg.pretrain_batch):
            batch = images[perm[start:start + cfg.pretrain_batch]]
            recon = model.decoder(model.encoder(batch))
            loss = (recon - batch).abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            val = loss.detach().item()
            _check_finite(val, f"pretraining step {step}")
            epoch_losses.append(val)
            if max_steps is not None:
                curve.append((step, val))
                if step >= max_steps:
                    done = True
                    break
        if max_steps is None:
            curve.append((step, sum(epoch_losses) / len(epoch_losses)))
        if done:
            break

    with open(out_dir / "pretrain_loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l1_recon"])
        writer.writerows([(s, repr(v)) for s, v in curve])
    ckpt = out_dir / "autoencoder"
    save_checkpoint(model, ckpt, extra={"kind": "autoencoder", "seed": cfg.seed})
    return ckpt


def train(
    samples: list[EditSample],
    cfg: TrainConfig,
    pretrained: str | Path,
    out_dir: str | Path,
    max_steps: Optional[int] = None,
) -> Path:
    """End-to-end conditional GAN training on top of a pretrained autoencoder.

    The encoder is loaded from `pretrained` and frozen (excluded from the
    optimizer); one discriminator step and one generator step run per batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    vocab = Vocabulary.from_grammar()
    model_cfg = ModelConfig(**{**asdict(cfg.model), "tau": cfg.tau})
    model = TimGanModel(vocab, model_cfg)

    ae = load_checkpoint(pretrained)
    model.encoder.load_state_dict(ae.encoder.state_dict())
    model.decoder.load_state_dict(ae.decoder.state_dict())
    model.encoder.requires_grad_(False)

    x_all, y_all, texts = _dataset_tensors(samples)
    gen_params = [
        p for name, p in model.named_parameters()
        if not name.startswith("encoder.") and not name.startswith("discriminator.")
    ]
    opt_g = torch.optim.Adam(gen_params, lr=cfg.lr, betas=cfg.betas)
    opt_d = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.lr, betas=cfg.betas)
    order_rng = torch.Generator().manual_seed(cfg.seed + 2)
    gumbel_rng = torch.Generator().manual_seed(cfg.seed + 3)

    n = x_all.shape[0]
    rows = []
    step = 0
    done = False
    epochs = cfg.epochs if max_steps is None else 10 ** 9
    for epoch in range(epochs):
        perm = torch.randperm(n, generator=order_rng)
        sums = dict.fromkeys(("d_loss", "g_adv", "l1_img", "l1_attn", "l1_feat"), 0.0)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x = x_all[idx]
            y = y_all[idx]
            ins = [texts[i] for i in idx.tolist()]

            terms, result = compute_losses(model, x, y, ins, cfg.weights, rng=gumbel_rng)

            # discriminator step (fake scores detached)
            d_real = model.discriminator(y)
            d_fake_det = model.discriminator(result.y_hat.detach())
            d_loss = 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake_det ** 2).mean()
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # generator step against the updated discriminator
            d_fake = model.discriminator(result.y_hat)
            g_adv = 0.5 * ((d_fake - 1.0) ** 2).mean()
            total_g = (
                cfg.weights.lambda_gan * g_adv
                + cfg.weights.lambda_img * terms["l1_img"]
                + cfg.weights.lambda_attn * terms["l1_attn"]
                + cfg.weights.lambda_feat * terms["l1_feat"]
            )
            opt_g.zero_grad()
            opt_d.zero_grad()  # drop generator-step gradients that reached D
            total_g.backward()
            opt_g.step()

            _check_finite(d_loss.detach().item(), f"train step {step} (d_loss)")
            _check_finite(total_g.detach().item(), f"train step {step} (total_g)")
            sums["d_loss"] += d_loss.detach().item()
            sums["g_adv"] += g_adv.detach().item()
            for key in ("l1_img", "l1_attn", "l1_feat"):
                sums[key] += terms[key].detach().item()
            batches += 1
            step += 1
            if max_steps is not None and step >= max_steps:
                done = True
                break
        rows.append([epoch] + [repr(sums[k] / batches) for k in
                               ("d_loss", "g_adv", "l1_img", "l1_attn", "l1_feat")])
        if done:
            break

    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "d_loss", "g_adv", "l1_img", "l1_attn", "l1_feat"])
        writer.writerows(rows)
    ckpt = out_dir / "model"
    save_checkpoint(
        model, ckpt,
        extra={"kind": "editor", "seed": cfg.seed, "variant": model_cfg.variant},
    )
    return ckpt


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_grads(
    f: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor],
    h: float = 1e-5,
) -> dict[str, torch.Tensor]:
    """Central finite differences of a scalar-valued closure over each
    parameter element. Parameters must be float64 leaves."""
    grads = {}
    with torch.no_grad():
        for name, p in params.items():
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(f())
                flat[i] = orig - h
                down = float(f())
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
            grads[name] = g
    return grads


def analytic_grads(
    f: Callable[[], torch.Tensor], params: dict[str, torch.Tensor]
) -> dict[str, torch.Tensor]:
    values = list(params.values())
    grads = torch.autograd.grad(f(), values, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }


def relative_errors(
    analytic: dict[str, torch.Tensor], numeric: dict[str, torch.Tensor]
) -> dict[str, float]:
    """Per-tensor norm ratio ||ga - gn|| / (||ga|| + ||gn||).

    The denominator is floored at 1e-3 so exactly-zero gradients (e.g. a conv
    bias cancelled by instance norm) compare against finite-difference noise
    on an absolute scale."""
    errs = {}
    for name in analytic:
        ga, gn = analytic[name], numeric[name]
        denom = float(ga.norm() + gn.norm())
        errs[name] = float((ga - gn).norm()) / max(denom, 1e-3)
    return errs


def _projection(shape, gen) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _build_component(component: str, seed: int):
    """Returns (params dict, scalar closure) at float64 on tiny shapes."""
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)

    if component == "linear":
        w = torch.randn(4, 5, generator=gen, dtype=torch.float64, requires_grad=True)
        x = torch.randn(5, generator=gen, dtype=torch.float64)
        r = _projection((4,), gen)
        return {"weight": w}, lambda: (w @ x * r).sum()

    if component == "attention_pool":
        d0 = d = 4
        emb = torch.randn(7, d0, generator=gen, dtype=torch.float64, requires_grad=True)
        pos = torch.randn(3, d0, generator=gen, dtype=torch.float64, requires_grad=True)
        head = AttentionHead(d0, d).double()
        ids = torch.tensor([2, 5, 3])
        mask = torch.tensor([True, True, True])
        r = _projection((d,), gen)

        def f():
            s = emb[ids] + pos
            phi, _ = attention_pool(s, head, mask)
            return (phi * r).sum()

        params = {"E": emb, "P": pos}
        params.update({f"head.{k}": v for k, v in head.named_parameters()})
        return params, f

    if component == "apply_route":
        cfg = RoutingConfig(layers=2, blocks=2, channels=2, tau=1.0)
        net = RoutedNetwork(cfg, d=4).double()
        phi = torch.randn(2, 3, 3, generator=gen, dtype=torch.float64)
        pi = torch.randn(2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
        beta = torch.randn(2, 2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
        gamma = torch.randn(2, 2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
        r = _projection((2, 3, 3), gen)

        def f():
            alpha = torch.softmax(pi / cfg.tau, dim=-1)
            out = apply_route(phi, RouteParams(alpha, beta, gamma, pi), net)
            return (out * r).sum()

        params = {"pi_logits": pi, "beta": beta, "gamma": gamma}
        params.update({f"conv.{k}": v for k, v in net.convs.named_parameters()})
        return params, f

    if component == "predict_mask":
        from .editor import MaskHead

        head = MaskHead(channels=4, d=4).double()
        phi_x = torch.randn(4, 3, 3, generator=gen, dtype=torch.float64)
        phi_where = torch.randn(4, generator=gen, dtype=torch.float64, requires_grad=True)
        r = _projection((1, 3, 3), gen)

        def f():
            return (head(phi_x, phi_where) * r).sum()

        params = {"phi_where": phi_where}
        params.update(dict(head.named_parameters()))
        return params, f

    if component == "fuse_decode":
        from .editor import ImageDecoder

        dec = ImageDecoder(channels=3).double()
        # shrink hidden widths to keep the finite-difference sweep fast
        dec.up1 = nn.ConvTranspose2d(3, 6, 3, stride=2, padding=1, output_padding=1).double()
        dec.norm1 = nn.InstanceNorm2d(6)
        dec.up2 = nn.ConvTranspose2d(6, 5, 3, stride=2, padding=1, output_padding=1).double()
        dec.norm2 = nn.InstanceNorm2d(5)
        dec.up3 = nn.ConvTranspose2d(5, 3, 3, stride=2, padding=1, output_padding=1).double()
        phi_x = torch.randn(3, 2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
        phi_edit = torch.randn(3, 2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
        mask = torch.rand(1, 2, 2, generator=gen, dtype=torch.float64)
        r = _projection((3, 16, 16), gen)

        def f():
            return (dec(fuse(phi_x, mask, phi_edit)) * r).sum()

        params = {"phi_x": phi_x, "phi_edit": phi_edit}
        params.update({f"decoder.{k}": v for k, v in dec.named_parameters()})
        return params, f

    if component == "discriminate":
        from .editor import Discriminator

        disc = Discriminator(canvas=16)
        disc.net = nn.Sequential(
            nn.Conv2d(3, 4, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(4, 5, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(5, 6, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(6, 1, 1),
        )
        disc = disc.double()
        img = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64)
        r = _projection((1, 2, 2), gen)

        def f():
            return (disc(img) * r).sum()

        return dict(disc.named_parameters()), f

    if component == "pipeline":
        vocab = Vocabulary.from_grammar()
        cfg = ModelConfig(canvas=16, channels=4, d0=4, d=4, layers=2, blocks=2)
        model = TimGanModel(vocab, cfg).double()
        x = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64)
        r = _projection((3, 16, 16), gen)
        text = "add a small red circle to the top left"
        names = (
            "text_encoder.embedding.weight",
            "text_encoder.head_where.w_q.weight",
            "text_encoder.head_how.w_v.weight",
            "routing.mlp.0.weight",
            "routing.mlp.2.bias",
            "routing.convs.0.weight",
            "mask_head.mlp.2.weight",
            "mask_head.w_m.weight",
            "decoder.res1.conv1.weight",
        )
        all_params = dict(model.named_parameters())
        params = {n: all_params[n] for n in names}

        def f():
            return (model.edit(x, text, rng=None).y_hat * r).sum()

        return params, f

    raise ValueError(f"unknown gradient-check component {component!r}")


GRADCHECK_COMPONENTS = (
    "attention_pool", "apply_route", "predict_mask", "fuse_decode", "discriminate",
)


def gradient_check(component: str, tol: float = 1e-4, seed: int = 0, h: float = 1e-5) -> float:
    """Compare autograd gradients against central finite differences on a tiny
    float64 instance. Returns the max relative error; raises ToleranceExceeded
    naming the worst parameter if it exceeds tol."""
    params, f = _build_component(component, seed)
    analytic = analytic_grads(f, params)
    numeric = finite_diff_grads(f, params, h=h)
    errs = relative_errors(analytic, numeric)
    worst = max(errs, key=errs.get)
    if errs[worst] > tol:
        raise ToleranceExceeded(f"{component}.{worst}", errs[worst], tol)
    return errs[worst]
