"""Instruction tokenization, embedding, and attention pooling.

Two independent scaled dot-product heads pool the token embeddings into
phi_where (location words) and phi_how (operation words). PAD positions are
masked with -inf logits before the softmax.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import AllMaskedError
from .scenegen import grammar_tokens

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Vocabulary:
    """Closed-vocabulary token <-> id map; PAD is id 0, UNK id 1."""

    def __init__(self, tokens: list[str]):
        self.token_to_id = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        for tok in tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.token_to_id)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @classmethod
    def from_grammar(cls) -> "Vocabulary":
        return cls(grammar_tokens())

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.token_to_id, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "Vocabulary":
        mapping = json.loads(Path(path).read_text())
        vocab = cls.__new__(cls)
        vocab.token_to_id = {t: int(i) for t, i in mapping.items()}
        vocab.id_to_token = {i: t for t, i in vocab.token_to_id.items()}
        return vocab


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> tuple[list[int], int]:
    """Lowercased whitespace split, OOV -> UNK, padded/truncated to max_len.

    Returns (ids, true_length)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    words = text.lower().split()[:max_len]
    ids = [vocab.token_to_id.get(w, vocab.unk_id) for w in words]
    length = len(ids)
    ids.extend([vocab.pad_id] * (max_len - length))
    return ids, length


@dataclass
class TextFeatures:
    phi_where: torch.Tensor  # (d,) or (B, d)
    phi_how: torch.Tensor
    attn_where: torch.Tensor  # (l,) or (B, l)
    attn_how: torch.Tensor


class AttentionHead(nn.Module):
    """Scaled dot-product pooling head: W_Q, W_K, W_V of shape (d0, d)."""

    def __init__(self, d0: int, d: int):
        super().__init__()
        self.d = d
        self.w_q = nn.Linear(d0, d, bias=False)
        self.w_k = nn.Linear(d0, d, bias=False)
        self.w_v = nn.Linear(d0, d, bias=False)


def attention_pool(
    S: torch.Tensor, head: AttentionHead, pad_mask: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pool token embeddings S into a single vector.

    S: (l, d0) or (B, l, d0); pad_mask: same leading shape, True at real tokens.
    The query matrix is averaged over real tokens into q_hat; weights are
    softmax(K q_hat / sqrt(d)) with PAD logits at -inf; phi = V^T weights.
    """
    squeeze = S.dim() == 2
    if squeeze:
        S, pad_mask = S.unsqueeze(0), pad_mask.unsqueeze(0)
    if not pad_mask.any(dim=1).all():
        raise AllMaskedError("attention pooling needs at least one real token")

    q = head.w_q(S)  # (B, l, d)
    k = head.w_k(S)
    v = head.w_v(S)
    counts = pad_mask.sum(dim=1, keepdim=True).to(S.dtype)  # (B, 1)
    q_hat = (q * pad_mask.unsqueeze(-1)).sum(dim=1) / counts  # (B, d)

    logits = torch.einsum("bld,bd->bl", k, q_hat) / math.sqrt(head.d)
    logits = logits.masked_fill(~pad_mask, float("-inf"))
    weights = torch.softmax(logits, dim=1)  # (B, l)
    phi = torch.einsum("bld,bl->bd", v, weights)
    if squeeze:
        return phi.squeeze(0), weights.squeeze(0)
    return phi, weights


class TextEncoder(nn.Module):
    """Embedding table + learned positions + two independent pooling heads."""

    def __init__(self, vocab: Vocabulary, d0: int = 64, d: int = 64, max_len: int = 12):
        super().__init__()
        self.vocab = vocab
        self.d0 = d0
        self.d = d
        self.max_len = max_len
        self.embedding = nn.Embedding(len(vocab), d0)
        self.positional = nn.Embedding(max_len, d0)
        self.head_where = AttentionHead(d0, d)
        self.head_how = AttentionHead(d0, d)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """ids: (l,) or (B, l) int64 -> S: (..., l, d0); S[i] = E[ids[i]] + P[i]."""
        if int(ids.max()) >= len(self.vocab) or int(ids.min()) < 0:
            raise IndexError("token id out of vocabulary range")
        positions = torch.arange(ids.shape[-1], device=ids.device)
        return self.embedding(ids) + self.positional(positions)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> TextFeatures:
        S = self.embed(ids)
        phi_where, attn_where = attention_pool(S, self.head_where, pad_mask)
        phi_how, attn_how = attention_pool(S, self.head_how, pad_mask)
        return TextFeatures(phi_where, phi_how, attn_where, attn_how)

    def encode_text(self, instruction: str) -> TextFeatures:
        if not instruction.strip():
            raise AllMaskedError("empty instruction")
        ids, length = tokenize(instruction, self.vocab, self.max_len)
        ids_t = torch.tensor(ids, dtype=torch.long)
        mask = torch.zeros(self.max_len, dtype=torch.bool)
        mask[:length] = True
        return self(ids_t, mask)

    def encode_batch(self, instructions: list[str]) -> tuple[TextFeatures, torch.Tensor, torch.Tensor]:
        """Returns (features, ids, pad_mask) for a list of instructions."""
        rows, masks = [], []
        for text in instructions:
            ids, length = tokenize(text, self.vocab, self.max_len)
            rows.append(ids)
            m = [True] * length + [False] * (self.max_len - length)
            masks.append(m)
        ids_t = torch.tensor(rows, dtype=torch.long)
        mask_t = torch.tensor(masks, dtype=torch.bool)
        return self(ids_t, mask_t), ids_t, mask_t
