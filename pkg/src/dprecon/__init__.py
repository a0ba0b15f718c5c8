"""Differentially private text sanitizers, reconstruction attacks, metrics."""

__version__ = "0.1.0"

from .attacks import (  # noqa: F401
    AttackResult,
    DEFAULT_ATTACK_TEMPLATE,
    FinetunePair,
    InstructionTemplate,
    build_finetune_pairs,
    build_instruction_prompt,
    run_blackbox_attack,
    run_generation_eval,
)
from .corpus import Document, SplitSpec, load_corpus, split_corpus, truncate_doc  # noqa: F401
from .embeddings import EmbeddingTable, load_embeddings, nearest_word, nearest_words  # noqa: F401
from .gateway import ChatGateway, ChatRequest, ChatResponse, EndpointConfig, RetryPolicy  # noqa: F401
from .judge import JudgeConfig, judge_score, parse_score  # noqa: F401
from .metrics import CorpusReport, DocMetrics, aggregate, compute_doc_metrics, per_class_breakdown  # noqa: F401
from .pii import BuiltinRuleTagger, ExternalNerTagger, PiiClass, PiiSpan, extract_pii, normalize_pii, pii_set  # noqa: F401
from .records import SanitizationRecord, read_records_jsonl, write_records_jsonl  # noqa: F401
from .sentence_dp import (  # noqa: F401
    SentenceDpConfig,
    api_paraphrase,
    clip_logits,
    dp_decode,
    ldp_budget,
    temperature_distribution,
)
from .word_dp import (  # noqa: F401
    TokenizedText,
    WordDpConfig,
    detokenize,
    rng_for_doc,
    sample_laplace_noise,
    sanitize_word_level,
    tokenize,
)
