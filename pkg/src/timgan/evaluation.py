"""Desk-scale metrics: Fréchet feature distance and retrieval score RS@N.

Features are the pretrained encoder's maps, global-average-pooled to one
value per channel. The Fréchet distance follows the autoencoder-feature
protocol; retrieval ranks a 1-target + (pool_size - 1)-distractor pool by
cosine similarity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .editor import TimGanModel
from .errors import EmptyPoolError, NumericalError, ShapeError
from .scenegen import EditSample
from .training import TrainConfig, pretrain_autoencoder, train

COV_REG = 1e-6
EIG_TOL = -1e-8


@dataclass
class EvalConfig:
    seed: int
    pool_size: int = 100
    ns: tuple[int, ...] = (1, 5)
    batch_size: int = 32


@dataclass
class EvalReport:
    frechet: float
    rs: dict[int, float]
    per_op: dict[str, dict[int, float]]
    n_queries: int
    pool_size: int
    seed: int

    def to_json(self, path: str | Path) -> None:
        payload = {
            "frechet": self.frechet,
            "rs": {str(n): v for n, v in self.rs.items()},
            "per_op": {op: {str(n): v for n, v in rs.items()} for op, rs in self.per_op.items()},
            "n_queries": self.n_queries,
            "pool_size": self.pool_size,
            "seed": self.seed,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _moments(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = feats.mean(axis=0)
    sigma = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
    sigma = sigma + COV_REG * np.eye(feats.shape[1])
    return mu, sigma


def _psd_sqrt(sym: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < EIG_TOL:
        raise NumericalError(f"matrix eigenvalue {vals.min():.3e} below tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Fréchet distance between the Gaussian moments of two feature
    sets (rows are samples). Covariances use the n-1 denominator plus 1e-6 I;
    the matrix square root comes from eigendecomposing S_a^1/2 S_b S_a^1/2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("feature sets must be 2-d with equal widths")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ShapeError("need at least two samples per set")
    mu_a, sig_a = _moments(a)
    mu_b, sig_b = _moments(b)
    root_a = _psd_sqrt(sig_a)
    inner = root_a @ sig_b @ root_a
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < EIG_TOL:
        raise NumericalError(f"product eigenvalue {vals.min():.3e} below tolerance")
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sig_a) + np.trace(sig_b) - 2.0 * trace_sqrt)
    return d2


def _cosine(query: np.ndarray, pool: np.ndarray) -> np.ndarray:
    qn = query / max(np.linalg.norm(query), 1e-12)
    pn = pool / np.maximum(np.linalg.norm(pool, axis=1, keepdims=True), 1e-12)
    return pn @ qn


def retrieval_score(
    queries: np.ndarray,
    targets: np.ndarray,
    distractors: np.ndarray,
    ns: tuple[int, ...],
    pool_size: int,
    rng: np.random.Generator,
    distractor_ids: Optional[np.ndarray] = None,
    target_ids: Optional[np.ndarray] = None,
    return_ranks: bool = False,
):
    """RS@N over a pool of the true target plus pool_size - 1 sampled
    distractors, ranked by cosine similarity (ties go to the lower pool
    index; the target sits at index 0)."""
    queries = np.asarray(queries, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    distractors = np.asarray(distractors, dtype=np.float64)
    if queries.shape != targets.shape:
        raise ShapeError("queries and targets must align")
    if distractors.ndim != 2 or distractors.shape[1] != queries.shape[1]:
        raise ShapeError("distractors must share the feature width")
    if distractor_ids is None:
        distractor_ids = np.arange(distractors.shape[0])
    if target_ids is None:
        target_ids = np.arange(targets.shape[0])

    ranks = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        legal = np.flatnonzero(distractor_ids != target_ids[i])
        need = pool_size - 1
        if legal.size < need:
            raise EmptyPoolError(
                f"pool needs {need} distractors, only {legal.size} available"
            )
        chosen = rng.choice(legal, size=need, replace=False)
        sims = _cosine(queries[i], np.vstack([targets[i:i + 1], distractors[chosen]]))
        # target is pool index 0; ties break toward the lower index
        ranks[i] = 1 + int(np.sum(sims[1:] > sims[0]))
    rs = {n: float(np.mean(ranks <= n)) for n in ns}
    if return_ranks:
        return rs, ranks
    return rs


def extract_features(model: TimGanModel, images: torch.Tensor, batch: int = 64) -> np.ndarray:
    """Encoder features, global-average-pooled to one value per channel."""
    outs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch):
            phi = model.encoder(images[start:start + batch])
            outs.append(phi.mean(dim=(-2, -1)).numpy())
    return np.concatenate(outs, axis=0)


def generate_edits(
    model: TimGanModel, samples: list[EditSample], batch: int = 32
) -> torch.Tensor:
    """Deterministic (rng=None) edited images for a split."""
    outs = []
    with torch.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start:start + batch]
            x = torch.from_numpy(np.stack([s.x for s in chunk]))
            ins = [s.instruction.text for s in chunk]
            outs.append(model.forward_batch(x, ins, rng=None).y_hat)
    return torch.cat(outs, dim=0)


def evaluate(
    checkpoint: str | Path,
    samples: list[EditSample],
    cfg: EvalConfig,
    report_path: Optional[str | Path] = None,
    generated: Optional[torch.Tensor] = None,
) -> EvalReport:
    """Edit every sample deterministically (hard routing), extract features
    through the frozen encoder, and compute Fréchet + RS@N with a per-op
    breakdown. `generated` may inject precomputed images (oracle tests)."""
    if not samples:
        raise ValueError("empty evaluation split")
    model = load_checkpoint(checkpoint)
    model.config.hard_eval = True
    if generated is None:
        generated = generate_edits(model, samples, cfg.batch_size)

    real = torch.from_numpy(np.stack([s.y for s in samples]))
    gen_feats = extract_features(model, generated)
    real_feats = extract_features(model, real)

    fre = frechet_distance(gen_feats, real_feats)
    rng = np.random.default_rng(cfg.seed)
    rs, ranks = retrieval_score(
        gen_feats, real_feats, real_feats, cfg.ns, cfg.pool_size, rng, return_ranks=True
    )
    per_op: dict[str, dict[int, float]] = {}
    ops = np.array([s.instruction.op for s in samples])
    for op in sorted(set(ops)):
        sel = ranks[ops == op]
        per_op[op] = {n: float(np.mean(sel <= n)) for n in cfg.ns}

    report = EvalReport(
        frechet=fre, rs=rs, per_op=per_op,
        n_queries=len(samples), pool_size=cfg.pool_size, seed=cfg.seed,
    )
    if report_path is not None:
        report.to_json(report_path)
    return report


ABLATION_VARIANTS = ("full", "no_where", "no_how", "no_text_adaptive")


def run_ablation(
    variant: str,
    train_samples: list[EditSample],
    test_samples: list[EditSample],
    cfg: TrainConfig,
    eval_cfg: EvalConfig,
    out_dir: str | Path,
    pretrained: Optional[str | Path] = None,
) -> EvalReport:
    """Train the requested variant under the shared seed/config and evaluate.

    variant="full" reruns the standard training path bit-identically.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    out_dir = Path(out_dir)
    if pretrained is None:
        pretrained = pretrain_autoencoder(train_samples, cfg, out_dir / "pretrain")
    from dataclasses import replace

    variant_cfg = replace(cfg, model=replace(cfg.model, variant=variant))
    ckpt = train(train_samples, variant_cfg, pretrained, out_dir / variant)
    return evaluate(ckpt, test_samples, eval_cfg, report_path=out_dir / variant / "report.json")


def export_routes(
    checkpoint: str | Path, samples: list[EditSample], csv_path: str | Path
) -> None:
    """CSV of deterministic route parameters per (instruction, layer, block):
    columns instruction_id, op, layer, block, alpha, pi_logit."""
    model = load_checkpoint(checkpoint)
    rows = []
    with torch.no_grad():
        for s in samples:
            res = model.edit(torch.from_numpy(s.x), s.instruction.text, rng=None)
            alpha = res.route.alpha
            logits = res.route.pi_logits
            for i in range(alpha.shape[0]):
                for j in range(alpha.shape[1]):
                    rows.append([
                        s.id, s.instruction.op, i, j,
                        repr(float(alpha[i, j])), repr(float(logits[i, j])),
                    ])
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["instruction_id", "op", "layer", "block", "alpha", "pi_logit"])
        writer.writerows(rows)
