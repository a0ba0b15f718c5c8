"""Fine-tune a small causal LM on sanitized/original pairs; serve generation."""

__version__ = "0.1.0"

from .data import Pair, read_pairs  # noqa: F401
from .model import ModelConfig, TinyCausalLM, apply_adapters  # noqa: F401
from .serve import GenerationServer, serve_generation, validate_request  # noqa: F401
from .tokenizer import WordTokenizer  # noqa: F401
from .train import TrainConfig, load_checkpoint, train_adapter  # noqa: F401
