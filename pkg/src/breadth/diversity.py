"""Diversity factor study: how much do question rewording, prompt rewording,
model perturbation, and sampling each spread the predictions?

Diversity is measured as Shannon entropy (natural log) of the prediction
multiset per question; abstentions form their own outcome class so failed
parses register as diversity rather than silence. The model-perturbation
factor exists only as a tag: it needs direct weight access (a noisy final
linear layer, noise std 0.010-0.020 in 0.001 steps) and cannot run through
an API client.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Dict, List, Optional, Sequence

from .core import Answer, Question, StrategyConfig
from .extract import EmptyInputError
from .llmio import Backend
from .reformulate import ReformulationSpec, ReformulationTarget, prompt_bank, reformulate
from .strategy import run_contexts

SAMPLING_TEMPERATURE = 0.8
REWORDING_TEMPERATURE = 1.0

UNSUPPORTED_FACTOR_NOTE = (
    "model_perturbation requires replacing the final linear layer with a noisy "
    "one (std 0.010-0.020, step 0.001) on open weights; unsupported here"
)


class Factor(str, Enum):
    QUESTION_REWORDING = "question"
    PROMPT_REWORDING = "prompt"
    MODEL_PERTURBATION = "llms"
    SAMPLING = "sampling"

    @classmethod
    def parse(cls, name: str) -> "Factor":
        aliases = {
            "question": cls.QUESTION_REWORDING,
            "question_rewording": cls.QUESTION_REWORDING,
            "prompt": cls.PROMPT_REWORDING,
            "prompt_rewording": cls.PROMPT_REWORDING,
            "llms": cls.MODEL_PERTURBATION,
            "model": cls.MODEL_PERTURBATION,
            "model_perturbation": cls.MODEL_PERTURBATION,
            "sampling": cls.SAMPLING,
        }
        key = name.strip().lower().replace("-", "_")
        if key not in aliases:
            raise ValueError(f"unknown factor {name!r}")
        return aliases[key]


class UnsupportedFactorError(RuntimeError):
    """The factor is nameable but not runnable through this client."""


@dataclass(frozen=True)
class FactorSpec:
    """One diversity factor and the number of paths it should generate."""

    factor: Factor
    k_paths: int = 10

    def __post_init__(self):
        if self.k_paths < 1:
            raise ValueError("k_paths must be >= 1")


def prediction_entropy(answers: Sequence[Answer]) -> float:
    """Shannon entropy in nats over canonical-answer frequencies.

    Abstentions are one shared outcome class. Bounded by ln(len(answers)).
    """
    if not answers:
        raise EmptyInputError("prediction_entropy needs at least one answer")
    classes = Counter(
        ("abstain",) if a.abstain else (a.kind.value, a.value) for a in answers
    )
    total = sum(classes.values())
    entropy = 0.0
    for count in classes.values():
        p = count / total
        entropy -= p * math.log(p)
    return entropy


@dataclass(frozen=True)
class FactorResult:
    """Per-factor outcome over a question subset."""

    factor: Factor
    entropy_nats: float  # mean of per-question entropies
    pooled_entropy_nats: float  # entropy of all predictions pooled
    per_question: Dict[str, List[Answer]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "factor": self.factor.value,
            "entropy_nats": self.entropy_nats,
            "pooled_entropy_nats": self.pooled_entropy_nats,
            "per_question": {
                qid: [a.to_dict() for a in answers]
                for qid, answers in self.per_question.items()
            },
        }


@dataclass(frozen=True)
class FactorStudyReport:
    dataset: str
    results: Dict[Factor, FactorResult]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "results": {f.value: r.to_dict() for f, r in self.results.items()},
        }


def _factor_answers(q: Question, spec: FactorSpec, cfg: StrategyConfig,
                    backend: Backend) -> List[Answer]:
    from dataclasses import replace

    k = spec.k_paths
    prompt_text = cfg.canonical_prompt.text
    if spec.factor == Factor.QUESTION_REWORDING:
        variants = reformulate(
            q.text,
            ReformulationSpec(ReformulationTarget.QUESTION, k, include_original=True),
            backend,
        )
        contexts = [(v, prompt_text) for v in variants]
        run_cfg = replace(cfg, temperature=REWORDING_TEMPERATURE)
        traces = run_contexts(q, contexts, 1, run_cfg, backend)
    elif spec.factor == Factor.PROMPT_REWORDING:
        bank = prompt_bank()
        if k > len(bank):
            raise ValueError(f"prompt factor supports at most {len(bank)} paths")
        contexts = [(q.text, p) for p in bank[:k]]
        run_cfg = replace(cfg, temperature=REWORDING_TEMPERATURE)
        traces = run_contexts(q, contexts, 1, run_cfg, backend)
    elif spec.factor == Factor.SAMPLING:
        run_cfg = replace(cfg, temperature=SAMPLING_TEMPERATURE)
        traces = run_contexts(q, [(q.text, prompt_text)], k, run_cfg, backend)
    else:
        raise UnsupportedFactorError(UNSUPPORTED_FACTOR_NOTE)
    return [t.parsed for t in traces]


def run_factor_study(dataset: str, questions: Sequence[Question],
                     factors: Sequence[FactorSpec], cfg: StrategyConfig,
                     backend: Backend) -> FactorStudyReport:
    """Generate per-factor prediction multisets over a question subset and
    report mean per-question entropy (plus pooled entropy for audit)."""
    if not questions:
        raise EmptyInputError("factor study needs at least one question")
    results: Dict[Factor, FactorResult] = {}
    for spec in factors:
        per_question: Dict[str, List[Answer]] = {}
        for q in questions:
            per_question[q.id] = _factor_answers(q, spec, cfg, backend)
        entropies = [prediction_entropy(a) for a in per_question.values()]
        pooled = [a for answers in per_question.values() for a in answers]
        results[spec.factor] = FactorResult(
            factor=spec.factor,
            entropy_nats=sum(entropies) / len(entropies),
            pooled_entropy_nats=prediction_entropy(pooled),
            per_question=per_question,
        )
    return FactorStudyReport(dataset=dataset, results=results)


def report_to_csv(reports: Sequence[FactorStudyReport],
                  factors: Optional[Sequence[Factor]] = None) -> str:
    """Rows are datasets, columns are factors; unsupported factors render as
    a tag. A footer documents the out-of-scope perturbation setup."""
    if factors is None:
        seen = []
        for report in reports:
            for f in report.results:
                if f not in seen:
                    seen.append(f)
        factors = seen
    lines = ["dataset," + ",".join(f.value for f in factors)]
    for report in reports:
        cells = [report.dataset]
        for f in factors:
            if f == Factor.MODEL_PERTURBATION and f not in report.results:
                cells.append("unsupported")
            elif f in report.results:
                cells.append(f"{report.results[f].entropy_nats:.4f}")
            else:
                cells.append("")
        lines.append(",".join(cells))
    lines.append(f"# {UNSUPPORTED_FACTOR_NOTE}")
    return "\n".join(lines) + "\n"


def paper_reference_table() -> Dict[str, Dict[str, float]]:
    """Shipped reference entropies (nats, 10 paths); non-gating."""
    path = resources.files("breadth").joinpath("data/entropy_reference.json")
    with path.open("r", encoding="utf-8") as fh:
        data = json.load(fh)
    return data["rows"]
