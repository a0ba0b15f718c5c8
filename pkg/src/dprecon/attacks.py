"""Reconstruction attacks against sanitized text.

Black-box path: an instruction prompt carrying one or more demonstration
(original, sanitized) pairs plus the target sanitized text is sent to a
chat model, and the completion is taken verbatim as the reconstruction.

White-box path: an auxiliary corpus is sanitized and exported as
(sanitized ‖ separator ‖ original) pairs for fine-tuning; a trained model
served behind a chat endpoint is then prompted with the sanitized target
plus the separator and its continuation is the reconstruction.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import Document
from .embeddings import EmbeddingTable
from .errors import AttackError, CorpusError, GatewayError, LeakageError, SanitizeError
from .gateway import ChatGateway, ChatRequest
from .judge import JudgeConfig, judge_score
from .metrics import DocMetrics, compute_doc_metrics
from .pii import pii_set
from .records import SanitizationRecord
from .word_dp import WordDpConfig, sanitize_word_level

ORIGINAL_SLOT = "{original text}"
EDITED_SLOT = "{edited text}"

DEFAULT_SEPARATOR = "\n###\n"

_DEFAULT_SYSTEM = (
    "You are a helpful assistant who can help users generate the original text based "
    "on the edited text, and you may have seen the original text. You must recover the "
    "original text based on edited text and output the original text. For example, you "
    "have known {original text}, for a user prompt with {edited text}, you should only "
    "output the {original text} directly."
)


@dataclass(frozen=True)
class InstructionTemplate:
    """Prompt template for the black-box attack.

    ``system`` is the preamble; its demonstration slots are filled with the
    demo pair. The demonstration itself travels as a user/assistant turn
    pair whose slots must each appear exactly once; the target sanitized
    text becomes the final user turn.
    """

    system: str = _DEFAULT_SYSTEM
    demo_user: str = EDITED_SLOT
    demo_assistant: str = ORIGINAL_SLOT

    def __post_init__(self):
        if self.demo_user.count(EDITED_SLOT) != 1:
            raise AttackError(f"demo user turn needs exactly one {EDITED_SLOT} slot")
        if self.demo_assistant.count(ORIGINAL_SLOT) != 1:
            raise AttackError(f"demo assistant turn needs exactly one {ORIGINAL_SLOT} slot")
        combined = self.system + self.demo_user + self.demo_assistant
        if EDITED_SLOT not in combined or ORIGINAL_SLOT not in combined:
            raise AttackError("template must mention both demonstration slots")


DEFAULT_ATTACK_TEMPLATE = InstructionTemplate()


def build_instruction_prompt(
    sanitized: str,
    template: InstructionTemplate,
    demos: list[tuple[str, str]] | tuple[str, str],
) -> tuple[tuple[str, str], ...]:
    """Chat messages for one black-box query.

    ``demos`` is one or more (original, sanitized) demonstration pairs; the
    target document itself must not be among them.
    """
    if isinstance(demos, tuple) and len(demos) == 2 and isinstance(demos[0], str):
        demos = [demos]
    if not demos:
        raise AttackError("at least one demonstration pair is required")
    for demo_original, demo_sanitized in demos:
        if demo_sanitized == sanitized or demo_original == sanitized:
            raise LeakageError("demonstration pair equals the target document")
    first_original, first_sanitized = demos[0]
    system = template.system.replace(ORIGINAL_SLOT, first_original).replace(
        EDITED_SLOT, first_sanitized
    )
    messages: list[tuple[str, str]] = [("system", system)]
    for demo_original, demo_sanitized in demos:
        messages.append(("user", template.demo_user.replace(EDITED_SLOT, demo_sanitized)))
        messages.append(
            ("assistant", template.demo_assistant.replace(ORIGINAL_SLOT, demo_original))
        )
    messages.append(("user", sanitized))
    return tuple(messages)


@dataclass
class AttackResult:
    doc_id: str
    sanitized: str
    reconstructed: str
    metrics: DocMetrics | None
    attack: str
    model: str
    budget: float
    score: int | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sanitized": self.sanitized,
            "reconstructed": self.reconstructed,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "attack": self.attack,
            "model": self.model,
            "budget": self.budget,
            "score": self.score,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttackResult":
        metrics = data.get("metrics")
        return cls(
            doc_id=data["doc_id"],
            sanitized=data["sanitized"],
            reconstructed=data["reconstructed"],
            metrics=None if metrics is None else DocMetrics.from_dict(metrics),
            attack=data["attack"],
            model=data["model"],
            budget=data["budget"],
            score=data.get("score"),
            error=data.get("error"),
        )


def write_results_jsonl(results: list[AttackResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps(res.to_dict(), ensure_ascii=False) + "\n")


def read_results_jsonl(path) -> list[AttackResult]:
    results = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                results.append(AttackResult.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}: bad result on line {lineno}: {exc}") from exc
    return results


def _assert_no_leak(record: SanitizationRecord, messages) -> None:
    # An original identical to its sanitized copy is inherently visible in
    # the prompt and is not a leak; anything else must never appear.
    if record.original == record.sanitized:
        return
    for _, content in messages:
        if record.original in content:
            raise LeakageError(
                f"outgoing request would contain the original text of doc {record.doc_id!r}"
            )


def _score_and_pack(
    record: SanitizationRecord,
    reconstructed: str,
    attack: str,
    model: str,
    tagger,
    gateway: ChatGateway,
    judge_config: JudgeConfig | None,
) -> AttackResult:
    if not reconstructed.strip():
        return AttackResult(
            doc_id=record.doc_id,
            sanitized=record.sanitized,
            reconstructed="",
            metrics=None,
            attack=attack,
            model=model,
            budget=record.budget,
            error="empty completion",
        )
    metrics = compute_doc_metrics(
        pii_set(tagger.tag(record.original)),
        pii_set(tagger.tag(record.sanitized)),
        pii_set(tagger.tag(reconstructed)),
    )
    score = None
    if judge_config is not None:
        score = judge_score(record.original, reconstructed, gateway, judge_config)
    return AttackResult(
        doc_id=record.doc_id,
        sanitized=record.sanitized,
        reconstructed=reconstructed,
        metrics=metrics,
        attack=attack,
        model=model,
        budget=record.budget,
        score=score,
    )


def _run_parallel(records, worker, concurrency: int, max_error_fraction: float, attack: str):
    results: dict[str, AttackResult] = {}
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        for result in pool.map(worker, records):
            results[result.doc_id] = result
    ordered = [results[r.doc_id] for r in sorted(records, key=lambda r: r.doc_id)]
    n_errors = sum(1 for r in ordered if r.error is not None)
    if records and n_errors / len(records) > max_error_fraction:
        raise AttackError(
            f"{attack}: {n_errors}/{len(records)} documents failed, "
            f"above the {max_error_fraction:.0%} tolerance"
        )
    return ordered


def run_blackbox_attack(
    records: list[SanitizationRecord],
    gateway: ChatGateway,
    model: str,
    demos: list[SanitizationRecord],
    template: InstructionTemplate = DEFAULT_ATTACK_TEMPLATE,
    tagger=None,
    judge_config: JudgeConfig | None = None,
    temperature: float = 0.0,
    max_tokens: int | None = None,
    max_error_fraction: float = 0.1,
) -> list[AttackResult]:
    """Instruction attack over a sanitized corpus; one result per document.

    Results are ordered by doc_id regardless of completion order. Per-document
    gateway failures are recorded and the run keeps going unless more than
    ``max_error_fraction`` of the documents fail.
    """
    if tagger is None:
        raise AttackError("a PII tagger is required")
    if not demos:
        raise AttackError("at least one demonstration record is required")
    target_ids = {r.doc_id for r in records}
    for demo in demos:
        if demo.doc_id in target_ids:
            raise LeakageError(f"demonstration doc {demo.doc_id!r} is among the targets")
    demo_pairs = [(d.original, d.sanitized) for d in demos]

    def worker(record: SanitizationRecord) -> AttackResult:
        try:
            messages = build_instruction_prompt(record.sanitized, template, demo_pairs)
            _assert_no_leak(record, messages)
            response = gateway.complete_chat(
                ChatRequest(
                    model=model,
                    messages=messages,
                    temperature=temperature,
                    max_tokens=max_tokens,
                )
            )
            return _score_and_pack(
                record, response.content, "blackbox_instruction", model, tagger, gateway, judge_config
            )
        except (GatewayError, LeakageError) as exc:
            return AttackResult(
                doc_id=record.doc_id,
                sanitized=record.sanitized,
                reconstructed="",
                metrics=None,
                attack="blackbox_instruction",
                model=model,
                budget=record.budget,
                error=str(exc),
            )

    return _run_parallel(records, worker, gateway.concurrency, max_error_fraction, "blackbox")


@dataclass
class FinetunePair:
    """One (sanitized ‖ separator ‖ original) training example."""

    sanitized: str
    original: str
    separator: str = DEFAULT_SEPARATOR
    doc_id: str = ""
    seed: int | None = None
    budget: float | None = None
    mechanism: str = "word_level"

    @property
    def concatenated(self) -> str:
        return self.sanitized + self.separator + self.original

    def __post_init__(self):
        if self.separator in self.sanitized or self.separator in self.original:
            raise AttackError(
                f"separator occurs inside the text of doc {self.doc_id!r}"
            )

    def split_back(self) -> tuple[str, str]:
        left, _, right = self.concatenated.partition(self.separator)
        return left, right


def _pick_separator(texts: list[str], base: str = DEFAULT_SEPARATOR) -> str:
    sep = base
    while any(sep in t for t in texts):
        sep = sep.replace("\n", "") + "#"
        sep = f"\n{sep}\n"
    return sep


def build_finetune_pairs(
    docs: list[Document],
    table: EmbeddingTable,
    config: WordDpConfig,
    separator: str = DEFAULT_SEPARATOR,
) -> list[FinetunePair]:
    """Sanitize an auxiliary corpus and pair each output with its original.

    Deterministic under the config seed. If the requested separator occurs
    inside any text, a longer fence is picked for the whole dataset so the
    first-occurrence split always round-trips.
    """
    records = [
        sanitize_word_level(doc.text, table, config, doc_id=doc.id) for doc in docs
    ]
    texts = [r.original for r in records] + [r.sanitized for r in records]
    separator = _pick_separator(texts, separator)
    return [
        FinetunePair(
            sanitized=r.sanitized,
            original=r.original,
            separator=separator,
            doc_id=r.doc_id,
            seed=config.seed,
            budget=config.epsilon,
            mechanism="word_level",
        )
        for r in records
    ]


def write_pairs_jsonl(pairs: list[FinetunePair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {
                        "doc_id": pair.doc_id,
                        "sanitized": pair.sanitized,
                        "original": pair.original,
                        "separator": pair.separator,
                        "seed": pair.seed,
                        "budget": pair.budget,
                        "mechanism": pair.mechanism,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_pairs_jsonl(path) -> list[FinetunePair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    FinetunePair(
                        sanitized=obj["sanitized"],
                        original=obj["original"],
                        separator=obj["separator"],
                        doc_id=obj.get("doc_id", ""),
                        seed=obj.get("seed"),
                        budget=obj.get("budget"),
                        mechanism=obj.get("mechanism", "word_level"),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}: bad pair on line {lineno}: {exc}") from exc
    return pairs


def run_generation_eval(
    records: list[SanitizationRecord],
    gateway: ChatGateway,
    model: str,
    separator: str = DEFAULT_SEPARATOR,
    tagger=None,
    judge_config: JudgeConfig | None = None,
    temperature: float = 0.0,
    max_tokens: int | None = None,
    max_error_fraction: float = 0.1,
) -> list[AttackResult]:
    """Evaluate a fine-tuned generation endpoint on a sanitized test split.

    Each prompt is the sanitized text plus the training separator; the
    completion (or, if the endpoint echoes, the part after the separator)
    is the reconstruction.
    """
    if tagger is None:
        raise AttackError("a PII tagger is required")

    def worker(record: SanitizationRecord) -> AttackResult:
        try:
            prompt = record.sanitized + separator
            response = gateway.complete_chat(
                ChatRequest(
                    model=model,
                    messages=(("user", prompt),),
                    temperature=temperature,
                    max_tokens=max_tokens,
                )
            )
            content = response.content
            if separator in content:
                content = content.split(separator, 1)[1]
            return _score_and_pack(
                record, content, "whitebox_finetune", model, tagger, gateway, judge_config
            )
        except GatewayError as exc:
            return AttackResult(
                doc_id=record.doc_id,
                sanitized=record.sanitized,
                reconstructed="",
                metrics=None,
                attack="whitebox_finetune",
                model=model,
                budget=record.budget,
                error=str(exc),
            )

    return _run_parallel(records, worker, gateway.concurrency, max_error_fraction, "whitebox")
