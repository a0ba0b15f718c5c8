"""Training loop behavior on small synthetic pair sets."""

import json

import pytest
import torch

from finetune_runner.data import collate, encode_pairs, read_pairs
from finetune_runner.tokenizer import WordTokenizer
from finetune_runner.train import TrainConfig, load_checkpoint, train_adapter

from dataset_builders import SEPARATOR, canary_pairs, identity_pairs, write_pairs


def test_validation_loss_strictly_decreases_three_epochs(tmp_path):
    pairs, _ = canary_pairs(n=200, seed=3)
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    config = TrainConfig(epochs=3, learning_rate=3e-3, batch_size=32, max_seq_len=64, seed=0)
    log = train_adapter(path, config, tmp_path / "ckpt")
    assert len(log.val_losses) == 3
    assert log.val_losses[0] > log.val_losses[1] > log.val_losses[2]


def test_zero_epoch_checkpoint_equals_base_generation(tmp_path):
    pairs, _ = canary_pairs(n=40, seed=5)
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    train_adapter(path, TrainConfig(epochs=0, seed=0), tmp_path / "base")
    train_adapter(
        path,
        TrainConfig(base_checkpoint=str(tmp_path / "base"), adapter_rank=8, epochs=0, seed=0),
        tmp_path / "zero",
    )
    base_model, base_tok, _ = load_checkpoint(tmp_path / "base")
    zero_model, zero_tok, _ = load_checkpoint(tmp_path / "zero")
    for pair in pairs[:10]:
        prefix = base_tok.encode(pair["sanitized"] + SEPARATOR, bos=True)
        assert base_model.generate(prefix, 8, eos_id=base_tok.eos_id) == zero_model.generate(
            prefix, 8, eos_id=zero_tok.eos_id
        )


def test_overlong_pairs_dropped_and_counted(tmp_path):
    pairs = identity_pairs(5, words=10, seed=2)
    pairs.append(
        {
            "doc_id": "long",
            "sanitized": " ".join(f"w{i}" for i in range(100)),
            "original": "x",
            "separator": SEPARATOR,
        }
    )
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    log = train_adapter(path, TrainConfig(epochs=1, max_seq_len=48, seed=0), tmp_path / "ckpt")
    assert log.dropped_pairs == 1
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    assert manifest["dropped_pairs"] == 1


def test_empty_pairs_rejected(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text("")
    with pytest.raises(ValueError, match="no training pairs"):
        train_adapter(path, TrainConfig(epochs=1), tmp_path / "ckpt")


def test_loss_mode_recorded(tmp_path):
    pairs = identity_pairs(10, words=6, seed=4)
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    train_adapter(path, TrainConfig(epochs=1, mask_prefix=True, seed=0), tmp_path / "masked")
    manifest = json.loads((tmp_path / "masked" / "manifest.json").read_text())
    assert manifest["loss_mode"] == "prefix_masked"
    train_adapter(path, TrainConfig(epochs=1, seed=0), tmp_path / "full")
    manifest = json.loads((tmp_path / "full" / "manifest.json").read_text())
    assert manifest["loss_mode"] == "full_sequence"


def test_full_sequence_loss_covers_prefix_tokens():
    from finetune_runner.data import Pair

    raw = identity_pairs(4, words=5, seed=6)
    pairs = [Pair(p["sanitized"], p["original"], p["separator"]) for p in raw]
    tok = WordTokenizer.from_texts(p.concatenated for p in pairs)
    encoded, _ = encode_pairs(pairs, tok, 64)
    full_ids, full_targets = collate(encoded, tok.pad_id, mask_prefix=False)
    masked_ids, masked_targets = collate(encoded, tok.pad_id, mask_prefix=True)
    assert (full_targets != -100).sum() > (masked_targets != -100).sum()
    assert torch.equal(full_ids, masked_ids)


def test_adapter_training_touches_only_adapters_and_embeddings(tmp_path):
    pairs = identity_pairs(20, words=8, seed=7)
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    train_adapter(path, TrainConfig(epochs=0, seed=0), tmp_path / "base")
    config = TrainConfig(
        base_checkpoint=str(tmp_path / "base"),
        adapter_rank=4,
        train_embeddings=False,
        epochs=1,
        seed=0,
    )
    train_adapter(path, config, tmp_path / "tuned")
    base_model, _, _ = load_checkpoint(tmp_path / "base")
    tuned_model, _, _ = load_checkpoint(tmp_path / "tuned")
    base_state = base_model.state_dict()
    for name, tensor in tuned_model.state_dict().items():
        if "lora_" in name:
            continue
        stripped = name.replace(".base.", ".")
        assert torch.equal(tensor, base_state[stripped]), f"{name} changed"


def test_replay_same_seed_same_losses(tmp_path):
    pairs, _ = canary_pairs(n=30, seed=9)
    path = write_pairs(tmp_path / "pairs.jsonl", pairs)
    config = TrainConfig(epochs=2, seed=123)
    first = train_adapter(path, config, tmp_path / "a")
    second = train_adapter(path, config, tmp_path / "b")
    assert first.train_losses == second.train_losses
    assert first.val_losses == second.val_losses
