"""Tiny decoder-only transformer with optional low-rank adapters.

Small enough to fine-tune on a CPU in minutes, but a faithful causal LM:
token + position embeddings, pre-norm attention/MLP blocks, and a language
modeling head. Low-rank adapters (rank r, scaling alpha/r) can be injected
into every linear projection; with adapters active the base weights are
frozen and only adapter (and optionally embedding) parameters train.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ModelConfig:
    vocab_size: int
    dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 96
    dropout: float = 0.0

    def to_dict(self) -> dict:
        return self.__dict__.copy()


class LoraLinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update B A x * (alpha/r)."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scale = alpha / rank
        self.lora_a = nn.Parameter(torch.zeros(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x):
        return self.base(x) + F.linear(F.linear(x, self.lora_a), self.lora_b) * self.scale


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.attn_qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.attn_out = nn.Linear(cfg.dim, cfg.dim)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.mlp_in = nn.Linear(cfg.dim, 4 * cfg.dim)
        self.mlp_out = nn.Linear(4 * cfg.dim, cfg.dim)
        self.n_heads = cfg.n_heads
        self.dropout = cfg.dropout

    def forward(self, x):
        b, t, d = x.shape
        h = self.ln1(x)
        q, k, v = self.attn_qkv(h).split(d, dim=2)
        q = q.view(b, t, self.n_heads, -1).transpose(1, 2)
        k = k.view(b, t, self.n_heads, -1).transpose(1, 2)
        v = v.view(b, t, self.n_heads, -1).transpose(1, 2)
        attn = F.scaled_dot_product_attention(
            q, k, v, is_causal=True, dropout_p=self.dropout if self.training else 0.0
        )
        x = x + self.attn_out(attn.transpose(1, 2).reshape(b, t, d))
        x = x + self.mlp_out(F.gelu(self.mlp_in(self.ln2(x))))
        return x


class TinyCausalLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.dim)
        self.lm_head = nn.Linear(cfg.dim, cfg.vocab_size, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        b, t = ids.shape
        if t > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {t} exceeds max_seq_len {self.cfg.max_seq_len}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_f(x))

    @torch.no_grad()
    def generate(
        self,
        prefix: list[int],
        max_new_tokens: int,
        eos_id: int | None = None,
        temperature: float = 0.0,
        generator: torch.Generator | None = None,
    ) -> list[int]:
        """Continue ``prefix`` greedily (temperature 0) or by sampling."""
        self.eval()
        ids = list(prefix)
        out: list[int] = []
        for _ in range(max_new_tokens):
            window = ids[-self.cfg.max_seq_len :]
            logits = self(torch.tensor([window], dtype=torch.long))[0, -1]
            if temperature > 0:
                probs = F.softmax(logits / temperature, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=generator).item())
            else:
                nxt = int(torch.argmax(logits).item())
            if eos_id is not None and nxt == eos_id:
                break
            out.append(nxt)
            ids.append(nxt)
        return out


def apply_adapters(model: TinyCausalLM, rank: int, alpha: float, train_embeddings: bool) -> None:
    """Inject low-rank adapters into every linear projection in-place.

    Base projection weights are frozen; embeddings, positional table, the
    LM head, and layer norms stay trainable only when ``train_embeddings``
    is set (needed when the base checkpoint is randomly initialized rather
    than pre-trained).
    """
    if rank < 1:
        raise ValueError("adapter rank must be >= 1")
    for p in model.parameters():
        p.requires_grad_(False)
    for block in model.blocks:
        block.attn_qkv = LoraLinear(block.attn_qkv, rank, alpha)
        block.attn_out = LoraLinear(block.attn_out, rank, alpha)
        block.mlp_in = LoraLinear(block.mlp_in, rank, alpha)
        block.mlp_out = LoraLinear(block.mlp_out, rank, alpha)
    if train_embeddings:
        for module in (model.tok_emb, model.pos_emb, model.lm_head, model.ln_f):
            for p in module.parameters():
                p.requires_grad_(True)
        for block in model.blocks:
            for p in (*block.ln1.parameters(), *block.ln2.parameters()):
                p.requires_grad_(True)


def trainable_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
