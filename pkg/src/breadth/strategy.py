"""Reasoning engines: plain chain-of-thought, deep iterative refinement, and
the breadth family (self-consistency, question/prompt rewriting, hybrids).

Every pipeline is built from three pure assembly functions that concatenate
input parts with a single newline, in a fixed order:

- reasoning input:   question, prompt
- prediction input:  question, prompt, reasoning, answer trigger
- iteration input:   question, prompt, prior reasoning, prior prediction, guide

Prediction inputs for iteration round t carry only round t's reasoning;
earlier rounds' text is discarded.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .core import (
    Answer,
    AnswerFormat,
    BREADTH_KINDS,
    Question,
    ReasoningTrace,
    StopRule,
    StrategyConfig,
    StrategyKind,
    Usage,
    VoteResult,
)
from .extract import extract_answer, majority_vote
from .llmio import Backend, CompletionRequest, LlmIoError
from .reformulate import ReformulationSpec, ReformulationTarget, reformulate

logger = logging.getLogger(__name__)

SEPARATOR = "\n"

# Per-format phrases appended before the prediction call to elicit a
# parseable final answer. Overridable via run config.
DEFAULT_TRIGGERS: Dict[AnswerFormat, str] = {
    AnswerFormat.MULTIPLE_CHOICE: "Therefore, among A through E, the answer is",
    AnswerFormat.NUMERIC: "Therefore, the answer (arabic numerals) is",
    AnswerFormat.YES_NO: "Therefore, the answer (Yes or No) is",
    AnswerFormat.FREE_FORM: "Therefore, the answer is",
}

_PATH_RETRIES = 2


class StrategyError(LlmIoError):
    """A backend failure surfaced from a strategy run, tagged with the question."""

    def __init__(self, question_id: str, cause: Exception):
        super().__init__(f"question {question_id}: {cause}")
        self.question_id = question_id
        self.cause = cause


def answer_trigger(fmt: AnswerFormat,
                   triggers: Optional[Mapping[AnswerFormat, str]] = None) -> str:
    if triggers and fmt in triggers:
        return triggers[fmt]
    return DEFAULT_TRIGGERS[fmt]


def assemble_reasoning_input(question_text: str, prompt_text: str) -> str:
    """Question then prompt, newline-separated; pure and bit-exact."""
    return f"{question_text}{SEPARATOR}{prompt_text}"


def assemble_prediction_input(question_text: str, prompt_text: str,
                              reasoning_text: str, trigger: str) -> str:
    """Question, prompt, reasoning, then the answer trigger."""
    return SEPARATOR.join([question_text, prompt_text, reasoning_text, trigger])


def assemble_iteration_input(question_text: str, prompt_text: str,
                             prev_reasoning: str, prev_prediction: str,
                             guide_text: str) -> str:
    """The five refinement parts in fixed order, newline-separated."""
    return SEPARATOR.join(
        [question_text, prompt_text, prev_reasoning, prev_prediction, guide_text]
    )


def assemble_zero_shot_input(question_text: str, trigger: str) -> str:
    return f"{question_text}{SEPARATOR}{trigger}"


@dataclass(frozen=True)
class StrategyOutcome:
    """Everything one strategy run produced for one question."""

    question_id: str
    traces: tuple
    vote: VoteResult
    final: Answer
    rounds_executed: int = 1

    def usage(self) -> Usage:
        total = Usage()
        for trace in self.traces:
            total = total + trace.usage
        return total

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "traces": [t.to_dict() for t in self.traces],
            "vote": self.vote.to_dict(),
            "final": self.final.to_dict(),
            "rounds_executed": self.rounds_executed,
        }


def expected_trace_count(cfg: StrategyConfig) -> int:
    """The path-count law: how many traces a config must produce.

    Depth runs may stop early under the stability rule, so for ``DeepCoT``
    this is the upper bound (exact under a fixed iteration count).
    """
    kind = cfg.kind
    if kind in (StrategyKind.QUESTION_C_SC, StrategyKind.PROMPT_C_SC):
        return cfg.n_reformulations * cfg.m_samples
    if kind == StrategyKind.SC:
        return cfg.m_samples
    if kind in (StrategyKind.QUESTION_C, StrategyKind.PROMPT_C):
        return cfg.n_reformulations
    if kind == StrategyKind.DEEP_COT:
        return cfg.max_iterations
    return 1


def _complete(backend: Backend, cfg: StrategyConfig, user_text: str,
              n_samples: int = 1, batch_id: int = 0):
    request = CompletionRequest(
        model=backend.model,
        user_text=user_text,
        temperature=cfg.temperature,
        n_samples=n_samples,
        sample_batch_id=batch_id,
    )
    started = time.monotonic()
    response = backend.complete(request)
    elapsed_ms = 0 if backend.deterministic else int((time.monotonic() - started) * 1000)
    return response, elapsed_ms


def _split_usage(usage: Usage, texts: Sequence[str]) -> List[Usage]:
    # Per-sample attribution: prompt tokens on the first sample, completion
    # tokens split evenly with the remainder on the first.
    m = len(texts)
    if m == 1:
        return [usage]
    share, remainder = divmod(usage.completion_tokens, m)
    out = []
    for i in range(m):
        out.append(Usage(usage.prompt_tokens if i == 0 else 0,
                         share + (remainder if i == 0 else 0)))
    return out


def _warn_if_blank(q: Question):
    if not q.text.strip():
        logger.warning("question %s has empty text", q.id)


def run_cot(q: Question, cfg: StrategyConfig, backend: Backend,
            triggers: Optional[Mapping[AnswerFormat, str]] = None) -> StrategyOutcome:
    """Standard two-call chain of thought (or one-call zero-shot)."""
    _warn_if_blank(q)
    try:
        trace = _cot_trace(q, cfg, backend, triggers,
                           question_text=q.text,
                           prompt_text=cfg.canonical_prompt.text,
                           reformulation_index=0, sample_index=0)
    except LlmIoError as exc:
        raise StrategyError(q.id, exc) from exc
    vote = majority_vote([trace.parsed])
    return StrategyOutcome(
        question_id=q.id, traces=(trace,), vote=vote, final=trace.parsed,
        rounds_executed=1,
    )


def _cot_trace(q: Question, cfg: StrategyConfig, backend: Backend,
               triggers, question_text: str, prompt_text: str,
               reformulation_index: int, sample_index: int,
               reasoning_text: Optional[str] = None,
               assembled_input: Optional[str] = None,
               pre_usage: Usage = Usage(),
               round_index: int = 1) -> ReasoningTrace:
    """One full reasoning path. A pre-generated reasoning text (from a batched
    sampling call) skips the reasoning-stage request."""
    trigger = answer_trigger(q.answer_format, triggers)
    usage = pre_usage
    latency = 0
    if cfg.kind == StrategyKind.ZERO_SHOT:
        assembled = assemble_zero_shot_input(question_text, trigger)
        response, latency = _complete(backend, cfg, assembled)
        reasoning, raw_prediction = "", response.texts[0]
        usage = usage + response.usage
    else:
        if reasoning_text is None:
            assembled = assemble_reasoning_input(question_text, prompt_text)
            response, ms = _complete(backend, cfg, assembled)
            reasoning = response.texts[0]
            usage = usage + response.usage
            latency += ms
        else:
            assembled = assembled_input or assemble_reasoning_input(question_text, prompt_text)
            reasoning = reasoning_text
        prediction_input = assemble_prediction_input(
            question_text, prompt_text, reasoning, trigger)
        response, ms = _complete(backend, cfg, prediction_input)
        raw_prediction = response.texts[0]
        usage = usage + response.usage
        latency += ms
    parsed = extract_answer(raw_prediction, q.answer_format, q.choices)
    return ReasoningTrace(
        question_id=q.id, round=round_index,
        reformulation_index=reformulation_index, sample_index=sample_index,
        assembled_input=assembled, reasoning_text=reasoning,
        raw_prediction_text=raw_prediction, parsed=parsed,
        usage=usage, latency_ms=latency,
    )


def run_deep(q: Question, cfg: StrategyConfig, backend: Backend,
             triggers: Optional[Mapping[AnswerFormat, str]] = None) -> StrategyOutcome:
    """Iterative refinement: a CoT round, then refine rounds that feed the
    prior reasoning and prediction back in.

    Each round's prediction sees only that round's reasoning. Stops at the
    iteration cap, or one round after two consecutive equal (non-abstain)
    predictions under the stability rule.
    """
    _warn_if_blank(q)
    prompt_text = cfg.canonical_prompt.text
    guide_text = cfg.iteration_guide or prompt_text
    trigger = answer_trigger(q.answer_format, triggers)
    traces: List[ReasoningTrace] = []
    try:
        trace = _cot_trace(q, cfg, backend, triggers,
                           question_text=q.text, prompt_text=prompt_text,
                           reformulation_index=0, sample_index=0, round_index=1)
        traces.append(trace)
        for round_index in range(2, cfg.max_iterations + 1):
            if cfg.stop_rule == StopRule.STABLE_STOP and len(traces) >= 2:
                last, prev = traces[-1].parsed, traces[-2].parsed
                if not last.abstain and last == prev:
                    break
            prev = traces[-1]
            iteration_input = assemble_iteration_input(
                q.text, prompt_text, prev.reasoning_text,
                prev.raw_prediction_text, guide_text)
            response, ms = _complete(backend, cfg, iteration_input)
            reasoning = response.texts[0]
            usage = response.usage
            prediction_input = assemble_prediction_input(
                q.text, prompt_text, reasoning, trigger)
            pred_response, pms = _complete(backend, cfg, prediction_input)
            raw_prediction = pred_response.texts[0]
            parsed = extract_answer(raw_prediction, q.answer_format, q.choices)
            traces.append(ReasoningTrace(
                question_id=q.id, round=round_index,
                reformulation_index=0, sample_index=0,
                assembled_input=iteration_input, reasoning_text=reasoning,
                raw_prediction_text=raw_prediction, parsed=parsed,
                usage=usage + pred_response.usage, latency_ms=ms + pms,
            ))
    except LlmIoError as exc:
        raise StrategyError(q.id, exc) from exc
    final = traces[-1].parsed
    return StrategyOutcome(
        question_id=q.id, traces=tuple(traces), vote=majority_vote([final]),
        final=final, rounds_executed=len(traces),
    )


Reformulator = Callable[..., List[str]]


def _build_contexts(q: Question, cfg: StrategyConfig, backend: Backend,
                    reformulator: Reformulator) -> List[Tuple[str, str]]:
    """The (question_text, prompt_text) pairs the breadth run will explore.

    Rewriting strategies keep the original as context 0 and rewrite the rest.
    """
    prompt_text = cfg.canonical_prompt.text
    kind = cfg.kind
    if kind == StrategyKind.SC:
        return [(q.text, prompt_text)]
    spec_n = cfg.n_reformulations
    if kind in (StrategyKind.QUESTION_C, StrategyKind.QUESTION_C_SC):
        variants = reformulator(
            q.text,
            ReformulationSpec(ReformulationTarget.QUESTION, spec_n, include_original=True),
            backend,
        )
        return [(v, prompt_text) for v in variants]
    variants = reformulator(
        prompt_text,
        ReformulationSpec(ReformulationTarget.PROMPT, spec_n, include_original=True),
        backend,
    )
    return [(q.text, v) for v in variants]


def run_contexts(q: Question, contexts: Sequence[Tuple[str, str]], m_samples: int,
                 cfg: StrategyConfig, backend: Backend,
                 triggers: Optional[Mapping[AnswerFormat, str]] = None,
                 ) -> List[ReasoningTrace]:
    """Run ``m_samples`` CoT paths per (question, prompt) context.

    Samples for one context come from a single multi-sample reasoning call
    (the backend may batch or sequence it). A failing path is retried, then
    recorded as an abstaining trace so the vote proceeds over survivors.
    """
    traces: List[ReasoningTrace] = []
    for ctx_index, (question_text, prompt_text) in enumerate(contexts):
        reasoning_input = assemble_reasoning_input(question_text, prompt_text)
        samples: Optional[Sequence[str]] = None
        usage_shares: List[Usage] = []
        latency = 0
        for attempt in range(_PATH_RETRIES + 1):
            try:
                request = CompletionRequest(
                    model=backend.model, user_text=reasoning_input,
                    temperature=cfg.temperature, n_samples=m_samples,
                )
                started = time.monotonic()
                response = backend.complete(request)
                latency = 0 if backend.deterministic else int(
                    (time.monotonic() - started) * 1000)
                samples = response.texts
                usage_shares = _split_usage(response.usage, samples)
                break
            except LlmIoError as exc:
                logger.warning("question %s context %d reasoning failed (%s), attempt %d",
                               q.id, ctx_index, exc, attempt + 1)
        if samples is None:
            logger.error("question %s context %d abandoned after retries; "
                         "recording abstentions", q.id, ctx_index)
            for sample_index in range(m_samples):
                traces.append(ReasoningTrace(
                    question_id=q.id, round=1,
                    reformulation_index=ctx_index, sample_index=sample_index,
                    assembled_input=reasoning_input, reasoning_text="",
                    raw_prediction_text="",
                    parsed=Answer.abstained(q.answer_format),
                ))
            continue
        for sample_index, reasoning_text in enumerate(samples):
            trace = None
            for attempt in range(_PATH_RETRIES + 1):
                try:
                    trace = _cot_trace(
                        q, cfg, backend, triggers,
                        question_text=question_text, prompt_text=prompt_text,
                        reformulation_index=ctx_index, sample_index=sample_index,
                        reasoning_text=reasoning_text,
                        assembled_input=reasoning_input,
                        pre_usage=usage_shares[sample_index],
                    )
                    break
                except LlmIoError as exc:
                    logger.warning("question %s path (%d,%d) failed (%s), attempt %d",
                                   q.id, ctx_index, sample_index, exc, attempt + 1)
            if trace is None:
                logger.error("question %s path (%d,%d) abandoned; recording abstention",
                             q.id, ctx_index, sample_index)
                trace = ReasoningTrace(
                    question_id=q.id, round=1,
                    reformulation_index=ctx_index, sample_index=sample_index,
                    assembled_input=reasoning_input, reasoning_text=reasoning_text,
                    raw_prediction_text="",
                    parsed=Answer.abstained(q.answer_format),
                    usage=usage_shares[sample_index], latency_ms=latency,
                )
            traces.append(trace)
    return traces


def vote_from_traces(traces: Sequence[ReasoningTrace]) -> VoteResult:
    """Aggregate by path indices, not arrival order, so concurrent completion
    never changes the result."""
    ordered = sorted(traces, key=lambda t: (t.round, t.reformulation_index, t.sample_index))
    return majority_vote([t.parsed for t in ordered])


def run_breadth(q: Question, cfg: StrategyConfig, backend: Backend,
                reformulator: Optional[Reformulator] = None,
                triggers: Optional[Mapping[AnswerFormat, str]] = None,
                ) -> StrategyOutcome:
    """The breadth family: diverse initial paths, majority-voted.

    Context counts follow the config: self-consistency keeps one canonical
    context with ``m_samples`` paths; rewriting strategies build
    ``n_reformulations`` contexts at one path each; the hybrids take
    ``m_samples`` per rewritten context.
    """
    if cfg.kind not in BREADTH_KINDS:
        raise ValueError(f"not a breadth strategy: {cfg.kind}")
    _warn_if_blank(q)
    reformulator = reformulator or reformulate
    contexts = _build_contexts(q, cfg, backend, reformulator)
    per_context = cfg.m_samples if cfg.kind in (
        StrategyKind.SC, StrategyKind.QUESTION_C_SC, StrategyKind.PROMPT_C_SC) else 1
    traces = run_contexts(q, contexts, per_context, cfg, backend, triggers)
    vote = vote_from_traces(traces)
    return StrategyOutcome(
        question_id=q.id, traces=tuple(traces), vote=vote, final=vote.winner,
        rounds_executed=1,
    )


def run_strategy(q: Question, cfg: StrategyConfig, backend: Backend,
                 reformulator: Optional[Reformulator] = None,
                 triggers: Optional[Mapping[AnswerFormat, str]] = None,
                 ) -> StrategyOutcome:
    """Dispatch a question to the engine matching the config's kind."""
    if cfg.kind in BREADTH_KINDS:
        return run_breadth(q, cfg, backend, reformulator, triggers)
    if cfg.kind == StrategyKind.DEEP_COT:
        return run_deep(q, cfg, backend, triggers)
    return run_cot(q, cfg, backend, triggers)


def plan_paths(q: Question, cfg: StrategyConfig,
               triggers: Optional[Mapping[AnswerFormat, str]] = None) -> List[dict]:
    """Dry-run view: the paths a run would take, with assembled inputs.

    Rewritten contexts are shown with placeholder text since producing them
    needs backend calls.
    """
    prompt_text = cfg.canonical_prompt.text
    trigger = answer_trigger(q.answer_format, triggers)
    if cfg.kind == StrategyKind.ZERO_SHOT:
        return [{"round": 1, "reformulation_index": 0, "sample_index": 0,
                 "input": assemble_zero_shot_input(q.text, trigger)}]
    if cfg.kind in (StrategyKind.COT, StrategyKind.DEEP_COT):
        rounds = cfg.max_iterations if cfg.kind == StrategyKind.DEEP_COT else 1
        plans = [{"round": 1, "reformulation_index": 0, "sample_index": 0,
                  "input": assemble_reasoning_input(q.text, prompt_text)}]
        for r in range(2, rounds + 1):
            plans.append({
                "round": r, "reformulation_index": 0, "sample_index": 0,
                "input": assemble_iteration_input(
                    q.text, prompt_text, f"<round {r - 1} reasoning>",
                    f"<round {r - 1} prediction>",
                    cfg.iteration_guide or prompt_text),
            })
        return plans
    if cfg.kind == StrategyKind.SC:
        contexts = [(q.text, prompt_text)]
    elif cfg.kind in (StrategyKind.QUESTION_C, StrategyKind.QUESTION_C_SC):
        contexts = [(q.text, prompt_text)] + [
            (f"<question rewrite #{i}>", prompt_text)
            for i in range(1, cfg.n_reformulations)]
    else:
        contexts = [(q.text, prompt_text)] + [
            (q.text, f"<prompt rewrite #{i}>")
            for i in range(1, cfg.n_reformulations)]
    per_context = cfg.m_samples if cfg.kind in (
        StrategyKind.SC, StrategyKind.QUESTION_C_SC, StrategyKind.PROMPT_C_SC) else 1
    plans = []
    for i, (qt, pt) in enumerate(contexts):
        for j in range(per_context):
            plans.append({"round": 1, "reformulation_index": i, "sample_index": j,
                          "input": assemble_reasoning_input(qt, pt)})
    return plans
