"""Semantic-preserving rewrites of questions and prompts, plus the fixed
ten-prompt bank used by the prompt-rewording diversity factor.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from .llmio import Backend, CompletionRequest

logger = logging.getLogger(__name__)

QUESTION_INSTRUCTION = (
    "Significantly rephrase the following question to change its wording and "
    "structure while maintaining the same meaning and intent. Ensure that the "
    "core problem remains unchanged."
)
PROMPT_INSTRUCTION = (
    "Rephrase the following sentence to change its wording and structure while "
    "maintaining the same meaning. Ensure the core sentence remains unchanged."
)

# Fixed bank of alternative reasoning triggers, in canonical order (1..10).
PROMPT_BANK = (
    "Here are the steps we can follow to achieve our goal.",
    "How about we break it down into smaller parts?",
    "How would you like to approach this situation in a methodical manner?",
    "Let's break down the problem into smaller parts and tackle each one separately.",
    "Here are some thoughtful steps to consider.",
    "Let's take it one step at a time.",
    "Let's take a thoughtful approach.",
    "In a systematic approach, let's work through the following stages.",
    "In a systematic manner, let us consider each detail.",
    "Let's think step by step.",
)

_DEDUP_RETRIES = 2
_CHOICES_SPLIT = re.compile(r"\n?Answer Choices:", re.IGNORECASE)


class ReformulationTarget(str, Enum):
    QUESTION = "question"
    PROMPT = "prompt"


@dataclass(frozen=True)
class ReformulationSpec:
    """How many rewrites to produce and with which instruction.

    ``n_variants`` counts the returned list, including the original when
    ``include_original`` is set. An empty ``instruction_text`` falls back to
    the per-target default.
    """

    target: ReformulationTarget
    n_variants: int
    include_original: bool = False
    instruction_text: str = ""

    def __post_init__(self):
        if self.n_variants < 1:
            raise ValueError("n_variants must be >= 1")

    def instruction(self) -> str:
        if self.instruction_text:
            return self.instruction_text
        if self.target == ReformulationTarget.QUESTION:
            return QUESTION_INSTRUCTION
        return PROMPT_INSTRUCTION


def prompt_bank() -> List[str]:
    """The ten fixed alternative prompts, order-stable across calls."""
    return list(PROMPT_BANK)


def bank_prompt(index: int) -> str:
    """One bank entry by its 1-based index."""
    if not 1 <= index <= len(PROMPT_BANK):
        raise IndexError(f"bank index {index} out of range 1..{len(PROMPT_BANK)}")
    return PROMPT_BANK[index - 1]


def split_choice_block(text: str) -> tuple:
    """Split a question into (stem, choices block); block is '' if absent.

    The choices block defines the label space, so rewrites must leave it
    untouched.
    """
    match = _CHOICES_SPLIT.search(text)
    if not match:
        return text, ""
    return text[: match.start()], text[match.start():]


def _normalized(text: str) -> str:
    return " ".join(text.split()).lower()


def reformulate(text: str, spec: ReformulationSpec, backend: Backend,
                temperature: float = 1.0,
                model: Optional[str] = None) -> List[str]:
    """Generate ``spec.n_variants`` rewrites of ``text`` (element 0 is the
    verbatim original when ``include_original`` is set).

    One backend call per variant; blank or normalized-duplicate outputs are
    regenerated up to a small retry budget and then kept with a logged flag.
    Never returns fewer than ``n_variants`` strings.
    """
    if not text:
        raise ValueError("cannot reformulate empty text")
    stem, choices_block = ("", "")
    if spec.target == ReformulationTarget.QUESTION:
        stem, choices_block = split_choice_block(text)
    else:
        stem = text

    variants: List[str] = []
    seen = set()
    if spec.include_original:
        variants.append(text)
        seen.add(_normalized(text))
    needed = spec.n_variants - len(variants)
    if needed <= 0:
        return variants[: spec.n_variants]

    instruction = spec.instruction()
    prompt_text = f"{instruction}\n{stem}"
    model_name = model or backend.model

    for index in range(needed):
        candidate = ""
        for attempt in range(_DEDUP_RETRIES + 1):
            request = CompletionRequest(
                model=model_name,
                user_text=prompt_text,
                temperature=temperature,
                sample_batch_id=index * (_DEDUP_RETRIES + 1) + attempt,
            )
            candidate = backend.complete(request).texts[0].strip()
            if not candidate:
                logger.warning("blank reformulation for variant %d, regenerating", index)
                continue
            if _normalized(candidate) in seen:
                logger.warning("duplicate reformulation for variant %d, regenerating", index)
                continue
            break
        if not candidate:
            logger.warning("variant %d stayed blank after retries, keeping original", index)
            candidate = stem
        elif _normalized(candidate) in seen:
            logger.warning("variant %d still a duplicate after retries, keeping it", index)
        seen.add(_normalized(candidate))
        if choices_block:
            candidate = candidate.rstrip() + "\n" + choices_block.lstrip("\n")
        variants.append(candidate)
    return variants
