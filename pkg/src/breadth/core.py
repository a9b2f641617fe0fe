"""Shared domain types and answer canonicalization.

All types here are immutable value objects (frozen dataclasses) and are safe
to share across threads. Each type serializes to a stable JSON schema via
``to_dict`` / ``from_dict`` with the field names given in the dataclass.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Optional, Sequence

logger = logging.getLogger(__name__)

CANONICAL_COT_PROMPT = "Let's think step by step."

TIE_BREAK_FIRST_OCCURRENCE = "first_occurrence"

# Benchmark choice labels run A..E; anything past E is accepted but flagged.
_EXPECTED_LABELS = "ABCDE"


class AnswerFormat(str, Enum):
    NUMERIC = "numeric"
    MULTIPLE_CHOICE = "multiple_choice"
    YES_NO = "yes_no"
    FREE_FORM = "free_form"


class StrategyKind(str, Enum):
    ZERO_SHOT = "zero_shot"
    COT = "cot"
    DEEP_COT = "deep_cot"
    SC = "sc"
    QUESTION_C = "questionc"
    PROMPT_C = "promptc"
    QUESTION_C_SC = "questionc_sc"
    PROMPT_C_SC = "promptc_sc"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        """Accept both CLI spellings (``questionc-sc``) and enum values."""
        return cls(name.strip().lower().replace("-", "_"))


BREADTH_KINDS = frozenset(
    {
        StrategyKind.SC,
        StrategyKind.QUESTION_C,
        StrategyKind.PROMPT_C,
        StrategyKind.QUESTION_C_SC,
        StrategyKind.PROMPT_C_SC,
    }
)


class StopRule(str, Enum):
    FIXED_T = "fixed_t"
    STABLE_STOP = "stable_stop"

    @classmethod
    def parse(cls, name: str) -> "StopRule":
        aliases = {"fixed": cls.FIXED_T, "stable": cls.STABLE_STOP}
        key = name.strip().lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class Usage:
    """Token accounting for one or more generation calls."""

    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Usage":
        return cls(int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))


@dataclass(frozen=True)
class Answer:
    """A canonicalized answer, or an abstention when nothing could be parsed.

    ``value`` is always the canonical string form for the given kind:
    canonical decimal for numeric, an upper-case label for multiple choice,
    ``yes``/``no``, or a folded free-form string. Equal semantic answers
    compare equal.
    """

    kind: AnswerFormat
    value: str = ""
    abstain: bool = False

    def __post_init__(self):
        if self.abstain and self.value:
            raise ValueError("abstaining answers carry no value")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value, "abstain": self.abstain}

    @classmethod
    def from_dict(cls, d: dict) -> "Answer":
        return cls(AnswerFormat(d["kind"]), d.get("value", ""), bool(d.get("abstain", False)))

    @classmethod
    def abstained(cls, kind: AnswerFormat) -> "Answer":
        return cls(kind=kind, value="", abstain=True)


_NUMBER_TOKEN = re.compile(r"[-+]?(?:\d[\d,]*\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_PAREN_LABEL = re.compile(r"\(([A-Za-z])\)")
_STANDALONE_UPPER = re.compile(r"(?<![A-Za-z0-9])([A-Z])(?![A-Za-z0-9])")
_YES_NO = re.compile(r"\b(yes|no)\b")
_TERMINAL_PUNCT = ".,;:!?"


def _canonical_decimal(token: str) -> Optional[str]:
    token = token.replace(",", "")
    try:
        value = Decimal(token)
    except InvalidOperation:
        return None
    if not value.is_finite():
        return None
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", "", "-"):
        text = "0"
    return text


def _canonical_numeric(raw: str) -> Optional[str]:
    # Tolerate currency signs, percent, thousands separators, and "≈" prefixes.
    cleaned = raw.strip()
    for junk in ("approximately", "about", "around"):
        if cleaned.lower().startswith(junk):
            cleaned = cleaned[len(junk):].strip()
    cleaned = cleaned.lstrip("≈~").replace("$", "").replace("%", "").strip()
    match = _NUMBER_TOKEN.search(cleaned)
    if not match:
        return None
    return _canonical_decimal(match.group(0))


def _canonical_choice(raw: str) -> Optional[str]:
    text = raw.strip().strip(_TERMINAL_PUNCT).strip()
    if len(text) == 1 and text.isalpha():
        return text.upper()
    match = _PAREN_LABEL.search(text)
    if match:
        return match.group(1).upper()
    match = _STANDALONE_UPPER.search(text)
    if match:
        return match.group(1)
    return None


def _canonical_yes_no(raw: str) -> Optional[str]:
    match = _YES_NO.search(raw.lower())
    return match.group(1) if match else None


def _canonical_free_form(raw: str) -> Optional[str]:
    text = " ".join(raw.split()).strip().strip('"').strip()
    text = text.rstrip(_TERMINAL_PUNCT).strip().lower()
    return text or None


def canonical_answer(raw: str, fmt: AnswerFormat) -> Answer:
    """Normalize a raw answer fragment into a canonical :class:`Answer`.

    Deterministic and total: unparseable input yields an abstaining answer,
    never an exception. Idempotent on its own output.
    """
    if raw is None:
        return Answer.abstained(fmt)
    if fmt == AnswerFormat.NUMERIC:
        value = _canonical_numeric(raw)
    elif fmt == AnswerFormat.MULTIPLE_CHOICE:
        value = _canonical_choice(raw)
    elif fmt == AnswerFormat.YES_NO:
        value = _canonical_yes_no(raw)
    else:
        value = _canonical_free_form(raw)
    if value is None:
        return Answer.abstained(fmt)
    return Answer(kind=fmt, value=value)


@dataclass(frozen=True)
class Question:
    """One benchmark item with its answer format, choices, and gold answer."""

    id: str
    text: str
    answer_format: AnswerFormat
    gold: Answer
    choices: Optional[tuple] = None  # ordered (label, text) pairs

    def __post_init__(self):
        choices = self.choices
        if choices is not None:
            choices = tuple((str(l), str(t)) for l, t in choices)
            object.__setattr__(self, "choices", choices)
        is_mc = self.answer_format == AnswerFormat.MULTIPLE_CHOICE
        if is_mc:
            if not choices:
                raise ValueError(f"question {self.id}: multiple choice requires choices")
            labels = [l for l, _ in choices]
            if len(set(labels)) != len(labels):
                raise ValueError(f"question {self.id}: duplicate choice labels")
            if any(l not in _EXPECTED_LABELS for l in labels):
                logger.warning("question %s: choice labels beyond A-E: %s", self.id, labels)
        elif choices:
            raise ValueError(f"question {self.id}: choices only valid for multiple choice")
        self._check_gold()

    def _check_gold(self):
        gold = self.gold
        if gold.abstain or gold.kind != self.answer_format:
            raise ValueError(f"question {self.id}: gold not parseable under {self.answer_format}")
        if self.answer_format == AnswerFormat.MULTIPLE_CHOICE:
            labels = {l for l, _ in self.choices}
            if gold.value not in labels:
                raise ValueError(f"question {self.id}: gold label {gold.value!r} not in choices")
        elif canonical_answer(gold.value, self.answer_format) != gold:
            raise ValueError(f"question {self.id}: gold {gold.value!r} is not canonical")

    def choice_labels(self) -> Optional[Sequence[str]]:
        if self.choices is None:
            return None
        return [l for l, _ in self.choices]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "answer_format": self.answer_format.value,
            "choices": [list(c) for c in self.choices] if self.choices else None,
            "gold": self.gold.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        choices = d.get("choices")
        return cls(
            id=d["id"],
            text=d["text"],
            answer_format=AnswerFormat(d["answer_format"]),
            gold=Answer.from_dict(d["gold"]),
            choices=tuple((c[0], c[1]) for c in choices) if choices else None,
        )


@dataclass(frozen=True)
class PromptVariant:
    """A reasoning-trigger prompt and where it came from."""

    text: str
    origin: str = "canonical"  # canonical | bank | reformulated
    bank_index: Optional[int] = None  # 1-based position in the fixed bank
    seed_text: Optional[str] = None  # original text a rewrite started from
    variant_index: Optional[int] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt variant text must be non-empty")
        if self.origin == "bank" and not (self.bank_index and 1 <= self.bank_index <= 10):
            raise ValueError("bank prompts carry a 1..10 index")

    @classmethod
    def canonical(cls, text: str = CANONICAL_COT_PROMPT) -> "PromptVariant":
        return cls(text=text, origin="canonical")

    def to_dict(self) -> dict:
        origin: dict = {"kind": self.origin}
        if self.bank_index is not None:
            origin["bank_index"] = self.bank_index
        if self.seed_text is not None:
            origin["seed_text"] = self.seed_text
            origin["variant_index"] = self.variant_index
        return {"text": self.text, "origin": origin}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptVariant":
        origin = d.get("origin", {"kind": "canonical"})
        return cls(
            text=d["text"],
            origin=origin.get("kind", "canonical"),
            bank_index=origin.get("bank_index"),
            seed_text=origin.get("seed_text"),
            variant_index=origin.get("variant_index"),
        )


@dataclass(frozen=True)
class ReasoningTrace:
    """One reasoning path: assembled input, generated reasoning, prediction.

    ``(question_id, round, reformulation_index, sample_index)`` is unique
    within a run; ``round`` counts iterations for depth strategies and is 1
    for breadth. The assembled input always starts with the question text.
    """

    question_id: str
    round: int
    reformulation_index: int
    sample_index: int
    assembled_input: str
    reasoning_text: str
    raw_prediction_text: str
    parsed: Answer
    usage: Usage = field(default_factory=Usage)
    latency_ms: int = 0

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round starts at 1")
        if self.reformulation_index < 0 or self.sample_index < 0:
            raise ValueError("path indices are non-negative")
        if self.latency_ms < 0:
            raise ValueError("latency_ms is non-negative")

    def path_key(self) -> tuple:
        return (self.question_id, self.round, self.reformulation_index, self.sample_index)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "round": self.round,
            "reformulation_index": self.reformulation_index,
            "sample_index": self.sample_index,
            "assembled_input": self.assembled_input,
            "reasoning_text": self.reasoning_text,
            "raw_prediction_text": self.raw_prediction_text,
            "parsed": self.parsed.to_dict(),
            "usage": self.usage.to_dict(),
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReasoningTrace":
        return cls(
            question_id=d["question_id"],
            round=d["round"],
            reformulation_index=d["reformulation_index"],
            sample_index=d["sample_index"],
            assembled_input=d["assembled_input"],
            reasoning_text=d["reasoning_text"],
            raw_prediction_text=d["raw_prediction_text"],
            parsed=Answer.from_dict(d["parsed"]),
            usage=Usage.from_dict(d.get("usage", {})),
            latency_ms=d.get("latency_ms", 0),
        )


@dataclass(frozen=True)
class StrategyConfig:
    """Which pipeline to run and its knobs.

    ``n_reformulations`` is the number of reworded contexts, ``m_samples``
    the samples drawn per context, ``max_iterations`` the depth cap, and
    ``iteration_guide`` the prompt that steers refinement rounds (empty
    string means: reuse the canonical prompt).
    """

    kind: StrategyKind
    n_reformulations: int = 1
    m_samples: int = 1
    max_iterations: int = 1
    stop_rule: StopRule = StopRule.FIXED_T
    temperature: float = 1.0
    canonical_prompt: PromptVariant = field(default_factory=PromptVariant.canonical)
    iteration_guide: str = ""

    def __post_init__(self):
        if self.n_reformulations < 1 or self.m_samples < 1 or self.max_iterations < 1:
            raise ValueError("n_reformulations, m_samples, max_iterations must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_reformulations": self.n_reformulations,
            "m_samples": self.m_samples,
            "max_iterations": self.max_iterations,
            "stop_rule": self.stop_rule.value,
            "temperature": self.temperature,
            "canonical_prompt": self.canonical_prompt.to_dict(),
            "iteration_guide": self.iteration_guide,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        kwargs = dict(d)
        kwargs["kind"] = StrategyKind.parse(kwargs["kind"])
        if "stop_rule" in kwargs:
            kwargs["stop_rule"] = StopRule.parse(kwargs["stop_rule"])
        if "canonical_prompt" in kwargs and isinstance(kwargs["canonical_prompt"], dict):
            kwargs["canonical_prompt"] = PromptVariant.from_dict(kwargs["canonical_prompt"])
        return cls(**kwargs)


# Sampling-based strategies default to the lower sampling temperature; plain
# CoT, depth rounds, and single-sample context rewrites run at 1.0.
_DEFAULT_TEMPERATURES = {
    StrategyKind.SC: 0.8,
    StrategyKind.QUESTION_C_SC: 0.8,
    StrategyKind.PROMPT_C_SC: 0.8,
}

# Headline comparison setup: three iterations for depth, three paths for
# breadth (hybrids default to three rewrites at one sample each).
_DEFAULT_KNOBS = {
    StrategyKind.DEEP_COT: {"max_iterations": 3},
    StrategyKind.SC: {"m_samples": 3},
    StrategyKind.QUESTION_C: {"n_reformulations": 3},
    StrategyKind.PROMPT_C: {"n_reformulations": 3},
    StrategyKind.QUESTION_C_SC: {"n_reformulations": 3},
    StrategyKind.PROMPT_C_SC: {"n_reformulations": 3},
}


def default_config(kind: StrategyKind, **overrides: Any) -> StrategyConfig:
    """Build a config with per-kind defaults, then apply overrides."""
    kwargs: dict = {"temperature": _DEFAULT_TEMPERATURES.get(kind, 1.0)}
    kwargs.update(_DEFAULT_KNOBS.get(kind, {}))
    base = StrategyConfig(kind=kind, **kwargs)
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class VoteResult:
    """Aggregated majority vote over parsed answers.

    ``counts`` lists (answer, count) pairs in first-occurrence order;
    abstentions are excluded from counting but tallied in ``abstained``.
    """

    winner: Answer
    counts: tuple  # ordered (Answer, count) pairs
    total_paths: int
    abstained: int
    tie: bool
    tie_break: str = TIE_BREAK_FIRST_OCCURRENCE

    def __post_init__(self):
        counted = sum(c for _, c in self.counts)
        if counted + self.abstained != self.total_paths:
            raise ValueError("counts plus abstentions must cover every path")

    def to_dict(self) -> dict:
        return {
            "winner": self.winner.to_dict(),
            "counts": [[a.to_dict(), c] for a, c in self.counts],
            "total_paths": self.total_paths,
            "abstained": self.abstained,
            "tie": self.tie,
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VoteResult":
        return cls(
            winner=Answer.from_dict(d["winner"]),
            counts=tuple((Answer.from_dict(a), c) for a, c in d["counts"]),
            total_paths=d["total_paths"],
            abstained=d["abstained"],
            tie=d["tie"],
            tie_break=d.get("tie_break", TIE_BREAK_FIRST_OCCURRENCE),
        )
