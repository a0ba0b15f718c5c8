"""Adapter fine-tuning on (sanitized ‖ original) pairs.

The objective is the causal LM negative log-likelihood summed over every
token of the concatenated sequence, sanitized prefix included. A
prefix-masked variant (loss only on the original-text half) is available
behind ``mask_prefix`` and is recorded in the checkpoint manifest as a
deviation from the default objective.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import EncodedPair, Pair, build_tokenizer, collate, encode_pairs, read_pairs
from .model import ModelConfig, TinyCausalLM, apply_adapters, trainable_parameter_count
from .tokenizer import WordTokenizer

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Smoke-scale defaults; they are this runner's, not tuned to any target model."""

    base_checkpoint: str = ""  # empty: random init (seeded)
    adapter_rank: int = 0  # 0 disables adapters -> full fine-tune
    adapter_alpha: float = 16.0
    train_embeddings: bool = True
    mask_prefix: bool = False
    epochs: int = 10
    learning_rate: float = 3e-3
    batch_size: int = 32
    max_seq_len: int = 96
    validation_fraction: float = 0.1
    seed: int = 0
    dim: int = 128
    n_layers: int = 2
    n_heads: int = 4

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class TrainLog:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    dropped_pairs: int = 0
    trainable_parameters: int = 0


def _loss(model: TinyCausalLM, ids: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    logits = model(ids)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100
    )


def _epoch_loss(model, encoded, tokenizer, config) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(encoded), config.batch_size):
            batch = encoded[start : start + config.batch_size]
            ids, targets = collate(batch, tokenizer.pad_id, config.mask_prefix)
            n = int((targets != -100).sum())
            total += float(_loss(model, ids, targets)) * n
            count += n
    return total / max(count, 1)


def load_checkpoint(path) -> tuple[TinyCausalLM, WordTokenizer, dict]:
    path = Path(path)
    state = torch.load(path / "model.pt", map_location="cpu", weights_only=True)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    tokenizer = WordTokenizer(manifest["vocab"])
    model_cfg = ModelConfig(**manifest["model_config"])
    model = TinyCausalLM(model_cfg)
    train_cfg = manifest.get("train_config", {})
    if train_cfg.get("adapter_rank", 0) > 0:
        apply_adapters(
            model,
            train_cfg["adapter_rank"],
            train_cfg.get("adapter_alpha", 16.0),
            train_cfg.get("train_embeddings", True),
        )
    model.load_state_dict(state)
    model.eval()
    return model, tokenizer, manifest


def save_checkpoint(path, model, tokenizer, model_cfg: ModelConfig, config: TrainConfig, log: TrainLog):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / "model.pt")
    manifest = {
        "vocab": tokenizer.vocab,
        "model_config": model_cfg.to_dict(),
        "train_config": config.to_dict(),
        "loss_mode": "prefix_masked" if config.mask_prefix else "full_sequence",
        "train_losses": log.train_losses,
        "val_losses": log.val_losses,
        "dropped_pairs": log.dropped_pairs,
        "trainable_parameters": log.trainable_parameters,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def train_adapter(pairs_path, config: TrainConfig, out_dir) -> TrainLog:
    """Fine-tune on a pairs file and write a checkpoint directory.

    Deterministic under ``config.seed`` up to torch kernel nondeterminism.
    Zero epochs saves the initialized model untouched.
    """
    pairs = read_pairs(pairs_path)
    if not pairs:
        raise ValueError(f"no training pairs found in {pairs_path}")
    torch.manual_seed(config.seed)

    if config.base_checkpoint:
        model, tokenizer, base_manifest = load_checkpoint(config.base_checkpoint)
        model_cfg = ModelConfig(**base_manifest["model_config"])
    else:
        tokenizer = build_tokenizer(pairs)
        model_cfg = ModelConfig(
            vocab_size=tokenizer.vocab_size,
            dim=config.dim,
            n_layers=config.n_layers,
            n_heads=config.n_heads,
            max_seq_len=config.max_seq_len,
        )
        model = TinyCausalLM(model_cfg)

    encoded, dropped = encode_pairs(pairs, tokenizer, model_cfg.max_seq_len)
    if not encoded:
        raise ValueError("every pair exceeds max_seq_len; raise it or shorten the data")
    if dropped:
        logger.warning("dropped %d overlong pair(s)", dropped)

    from .model import LoraLinear

    already_adapted = isinstance(model.blocks[0].attn_qkv, LoraLinear)
    if config.adapter_rank > 0 and not already_adapted:
        apply_adapters(model, config.adapter_rank, config.adapter_alpha, config.train_embeddings)

    n_val = max(1, int(len(encoded) * config.validation_fraction)) if config.epochs else 0
    n_val = min(n_val, max(len(encoded) - 1, 0))
    val_set, train_set = encoded[:n_val], encoded[n_val:]
    log = TrainLog(dropped_pairs=dropped, trainable_parameters=trainable_parameter_count(model))

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=config.learning_rate) if params else None
    generator = torch.Generator().manual_seed(config.seed)
    try:
        for epoch in range(config.epochs):
            model.train()
            order = torch.randperm(len(train_set), generator=generator).tolist()
            running, batches = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[start : start + config.batch_size]]
                ids, targets = collate(batch, tokenizer.pad_id, config.mask_prefix)
                loss = _loss(model, ids, targets)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                running += float(loss.detach())
                batches += 1
            log.train_losses.append(running / max(batches, 1))
            log.val_losses.append(_epoch_loss(model, val_set, tokenizer, config))
            logger.info(
                "epoch %d: train %.4f val %.4f", epoch + 1, log.train_losses[-1], log.val_losses[-1]
            )
    except torch.cuda.OutOfMemoryError as exc:
        raise RuntimeError(
            "out of memory while fine-tuning; reduce batch_size or max_seq_len"
        ) from exc
    save_checkpoint(out_dir, model, tokenizer, model_cfg, config, log)
    return log
