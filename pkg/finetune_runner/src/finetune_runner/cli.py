"""Command line for the fine-tune runner: train a checkpoint, serve it."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .serve import serve_generation
from .train import TrainConfig, train_adapter


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finetune-runner",
        description="Fine-tune a small causal LM on (sanitized, original) pairs and serve it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fine-tune on a pairs JSONL and save a checkpoint")
    train.add_argument("--pairs", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--base", default="", help="base checkpoint dir (default: random init)")
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--lr", type=float, default=3e-3)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--max-seq-len", type=int, default=96)
    train.add_argument("--adapter-rank", type=int, default=0, help="0 = full fine-tune")
    train.add_argument("--adapter-alpha", type=float, default=16.0)
    train.add_argument("--freeze-embeddings", action="store_true")
    train.add_argument("--mask-prefix", action="store_true",
                       help="loss on the original-text half only (deviation, recorded)")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--dim", type=int, default=128)
    train.add_argument("--layers", type=int, default=2)
    train.add_argument("--heads", type=int, default=4)

    serve = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    serve.add_argument("--checkpoint", required=True)
    serve.add_argument("--port", type=int, default=8711)
    serve.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = make_parser().parse_args(argv)
    if args.command == "train":
        config = TrainConfig(
            base_checkpoint=args.base,
            adapter_rank=args.adapter_rank,
            adapter_alpha=args.adapter_alpha,
            train_embeddings=not args.freeze_embeddings,
            mask_prefix=args.mask_prefix,
            epochs=args.epochs,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            max_seq_len=args.max_seq_len,
            seed=args.seed,
            dim=args.dim,
            n_layers=args.layers,
            n_heads=args.heads,
        )
        try:
            log = train_adapter(args.pairs, config, args.out)
        except (ValueError, RuntimeError) as exc:
            json.dump({"error": {"type": type(exc).__name__, "message": str(exc)}}, sys.stderr)
            sys.stderr.write("\n")
            return 1
        print(json.dumps({
            "checkpoint": args.out,
            "train_losses": log.train_losses,
            "val_losses": log.val_losses,
            "dropped_pairs": log.dropped_pairs,
            "trainable_parameters": log.trainable_parameters,
        }))
        return 0
    server = serve_generation(args.checkpoint, port=args.port, host=args.host)
    print(f"serving on {server.base_url}")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
