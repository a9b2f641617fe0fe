"""Benchmark ingestion, synthetic generators, the experiment runner, pilot
subset filtering, and report emission.

Upstream dataset schemas vary, so each loader is a small data-driven field
map in ``ADAPTERS``. Runs persist every trace to
``runs/<run_id>/traces.jsonl`` plus a ``summary.json``, are resumable
(completed questions are skipped on restart), and are byte-reproducible
under a deterministic backend.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import dataclass, replace
from importlib import resources
from typing import Dict, List, Optional, Sequence, Union

from .core import (
    Answer,
    AnswerFormat,
    Question,
    ReasoningTrace,
    StrategyConfig,
    StrategyKind,
    Usage,
    canonical_answer,
)
from .llmio import Backend
from .strategy import (
    Reformulator,
    StrategyError,
    run_strategy,
    vote_from_traces,
)

logger = logging.getLogger(__name__)


class MissingFileError(FileNotFoundError):
    pass


class SchemaError(ValueError):
    """A dataset record did not match its adapter's field map."""

    def __init__(self, dataset: str, index: int, message: str):
        super().__init__(f"{dataset}[{index}]: {message}")
        self.index = index


class MismatchedQuestionSetsError(ValueError):
    pass


@dataclass(frozen=True)
class FileSource:
    path: str
    format_name: str  # adapter key


@dataclass(frozen=True)
class GeneratorSource:
    kind: str  # coinflip | lastletters
    n: int
    seed: int = 0


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    answer_format: AnswerFormat
    expected_count: int
    source: Union[FileSource, GeneratorSource]


@dataclass(frozen=True)
class FieldMap:
    """Where to find the question text, gold answer, and choices in a record."""

    container: str  # json_list | jsonl | json_examples
    question_fields: tuple
    gold_field: str
    gold_kind: str  # number | number_list | gsm8k_hash | label | target_scores
    choices_field: str = ""
    choices_layout: str = ""  # label_paren_text | label_text_pairs


ADAPTERS: Dict[str, FieldMap] = {
    "singleeq": FieldMap("json_list", ("sQuestion",), "lSolutions", "number_list"),
    "addsub": FieldMap("json_list", ("sQuestion",), "lSolutions", "number_list"),
    "multiarith": FieldMap("json_list", ("sQuestion",), "lSolutions", "number_list"),
    "gsm8k": FieldMap("jsonl", ("question",), "answer", "gsm8k_hash"),
    "aqua": FieldMap("jsonl", ("question",), "correct", "label",
                     choices_field="options", choices_layout="label_paren_text"),
    "svamp": FieldMap("json_list", ("Body", "Question"), "Answer", "number"),
    "commonsenseqa": FieldMap("jsonl", ("question.stem",), "answerKey", "label",
                              choices_field="question.choices",
                              choices_layout="label_text_pairs"),
    "strategyqa": FieldMap("json_examples", ("input",), "target_scores", "target_scores"),
}

# name -> (answer format, expected count, default filename or generator kind)
DATASET_TABLE: Dict[str, tuple] = {
    "singleeq": (AnswerFormat.NUMERIC, 508, "questions.json"),
    "addsub": (AnswerFormat.NUMERIC, 395, "AddSub.json"),
    "multiarith": (AnswerFormat.NUMERIC, 600, "MultiArith.json"),
    "gsm8k": (AnswerFormat.NUMERIC, 1319, "test.jsonl"),
    "aqua": (AnswerFormat.MULTIPLE_CHOICE, 254, "test.jsonl"),
    "svamp": (AnswerFormat.NUMERIC, 1000, "SVAMP.json"),
    "commonsenseqa": (AnswerFormat.MULTIPLE_CHOICE, 1221, "dev_rand_split.jsonl"),
    "strategyqa": (AnswerFormat.YES_NO, 2290, "task.json"),
    "lastletters": (AnswerFormat.FREE_FORM, 500, "generator"),
    "coinflip": (AnswerFormat.YES_NO, 500, "generator"),
}

GENERATOR_DATASETS = ("lastletters", "coinflip")


def dataset_spec(name: str, path: Optional[str] = None, n: Optional[int] = None,
                 seed: int = 0) -> DatasetSpec:
    """Build a spec from the built-in table; file datasets need a path."""
    key = name.strip().lower()
    if key not in DATASET_TABLE:
        raise KeyError(f"unknown dataset {name!r}; known: {sorted(DATASET_TABLE)}")
    fmt, expected, default_file = DATASET_TABLE[key]
    if key in GENERATOR_DATASETS:
        return DatasetSpec(key, fmt, expected,
                           GeneratorSource(kind=key, n=n or expected, seed=seed))
    if path is None:
        raise MissingFileError(f"dataset {key} needs a source file (default name "
                               f"{default_file!r}); pass --data-path")
    if os.path.isdir(path):
        path = os.path.join(path, default_file)
    return DatasetSpec(key, fmt, expected, FileSource(path=path, format_name=key))


def _dig(record: dict, dotted: str):
    value = record
    for part in dotted.split("."):
        if not isinstance(value, dict) or part not in value:
            raise KeyError(dotted)
        value = value[part]
    return value


def _parse_choices(record: dict, fmap: FieldMap, dataset: str, index: int) -> tuple:
    raw = _dig(record, fmap.choices_field)
    choices = []
    if fmap.choices_layout == "label_paren_text":
        # entries like "A)24" or "A) 24"
        for entry in raw:
            label, _, text = str(entry).partition(")")
            label = label.strip().strip("(").upper()
            if not label:
                raise SchemaError(dataset, index, f"unparseable option {entry!r}")
            choices.append((label, text.strip()))
    elif fmap.choices_layout == "label_text_pairs":
        for entry in raw:
            choices.append((str(entry["label"]).upper(), str(entry["text"])))
    else:
        raise SchemaError(dataset, index, f"unknown choices layout {fmap.choices_layout!r}")
    return tuple(choices)


def _format_choices_block(choices: Sequence[tuple]) -> str:
    rendered = " ".join(f"({label}) {text}" for label, text in choices)
    return f"Answer Choices: {rendered}"


def _parse_gold(record: dict, fmap: FieldMap, fmt: AnswerFormat,
                dataset: str, index: int) -> Answer:
    raw = _dig(record, fmap.gold_field)
    if fmap.gold_kind == "number":
        gold = canonical_answer(str(raw), AnswerFormat.NUMERIC)
    elif fmap.gold_kind == "number_list":
        if not raw:
            raise SchemaError(dataset, index, "empty solution list")
        gold = canonical_answer(str(raw[0]), AnswerFormat.NUMERIC)
    elif fmap.gold_kind == "gsm8k_hash":
        _, sep, tail = str(raw).rpartition("####")
        if not sep:
            raise SchemaError(dataset, index, "missing #### answer marker")
        gold = canonical_answer(tail.strip(), AnswerFormat.NUMERIC)
    elif fmap.gold_kind == "label":
        gold = canonical_answer(str(raw), AnswerFormat.MULTIPLE_CHOICE)
    elif fmap.gold_kind == "target_scores":
        if not isinstance(raw, dict):
            raise SchemaError(dataset, index, "target_scores must be a mapping")
        best = max(raw.items(), key=lambda kv: kv[1])[0]
        gold = canonical_answer(str(best), AnswerFormat.YES_NO)
    else:
        raise SchemaError(dataset, index, f"unknown gold kind {fmap.gold_kind!r}")
    if gold.abstain:
        raise SchemaError(dataset, index, f"gold value {raw!r} unparseable as {fmt.value}")
    return gold


def _records_from_file(path: str, fmap: FieldMap, dataset: str) -> List[dict]:
    if not os.path.exists(path):
        raise MissingFileError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        if fmap.container == "jsonl":
            return [json.loads(line) for line in fh if line.strip()]
        data = json.load(fh)
    if fmap.container == "json_examples":
        data = data.get("examples", [])
    if not isinstance(data, list):
        raise SchemaError(dataset, 0, "expected a list of records")
    return data


def load_dataset(spec: DatasetSpec) -> List[Question]:
    """Normalize a dataset into Questions; warns (not errors) on a count
    mismatch against the built-in table."""
    if isinstance(spec.source, GeneratorSource):
        questions = generate_synthetic(spec.source.kind, spec.source.n, spec.source.seed)
    else:
        fmap = ADAPTERS[spec.source.format_name]
        records = _records_from_file(spec.source.path, fmap, spec.name)
        questions = []
        for index, record in enumerate(records):
            try:
                parts = [str(_dig(record, f)).strip() for f in fmap.question_fields]
                text = " ".join(p for p in parts if p)
                choices = None
                if fmap.choices_field:
                    choices = _parse_choices(record, fmap, spec.name, index)
                    text = f"{text}\n{_format_choices_block(choices)}"
                gold = _parse_gold(record, fmap, spec.answer_format, spec.name, index)
                questions.append(Question(
                    id=f"{spec.name}-{index}", text=text,
                    answer_format=spec.answer_format, gold=gold, choices=choices,
                ))
            except SchemaError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(spec.name, index, str(exc)) from exc
    if len(questions) != spec.expected_count:
        logger.warning("dataset %s: loaded %d questions, expected %d",
                       spec.name, len(questions), spec.expected_count)
    return questions


def _name_pool(filename: str) -> List[str]:
    content = resources.files("breadth").joinpath(f"data/{filename}").read_text("utf-8")
    return [line.strip() for line in content.splitlines() if line.strip()]


def last_letters_gold(words: str) -> str:
    return "".join(w[-1].lower() for w in words.split())


def generate_synthetic(kind: str, n: int, seed: int = 0) -> List[Question]:
    """Seed-deterministic symbolic items: coin-flip parity or last-letter
    concatenation, four names each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    kind = kind.strip().lower()
    rng = random.Random(seed)
    first_names = _name_pool("names.txt")
    surnames = _name_pool("surnames.txt")
    questions = []
    if kind == "coinflip":
        for i in range(n):
            people = rng.sample(first_names, 4)
            flips = [rng.random() < 0.5 for _ in people]
            sentences = ["A coin is heads up."]
            for person, flipped in zip(people, flips):
                verb = "flips" if flipped else "does not flip"
                sentences.append(f"{person} {verb} the coin.")
            sentences.append('Is the coin still heads up? Note that "flip" here '
                             'means "reverse".')
            gold = "yes" if sum(flips) % 2 == 0 else "no"
            questions.append(Question(
                id=f"coinflip-{i}", text=" ".join(sentences),
                answer_format=AnswerFormat.YES_NO,
                gold=Answer(AnswerFormat.YES_NO, gold),
            ))
    elif kind == "lastletters":
        for i in range(n):
            words = " ".join([
                rng.choice(first_names), rng.choice(surnames),
                rng.choice(first_names), rng.choice(surnames),
            ])
            text = (f'Take the last letters of each word in "{words}" '
                    "and concatenate them.")
            questions.append(Question(
                id=f"lastletters-{i}", text=text,
                answer_format=AnswerFormat.FREE_FORM,
                gold=Answer(AnswerFormat.FREE_FORM, last_letters_gold(words)),
            ))
    else:
        raise ValueError(f"unknown generator kind {kind!r}")
    return questions


@dataclass(frozen=True)
class RunLimits:
    max_questions: Optional[int] = None
    max_total_tokens: Optional[int] = None


@dataclass(frozen=True)
class QuestionOutcome:
    question_id: str
    final: Answer
    correct: bool
    rounds: int = 1
    trace_count: int = 0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "question_id": self.question_id,
            "final": self.final.to_dict(),
            "correct": self.correct,
            "rounds": self.rounds,
            "trace_count": self.trace_count,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionOutcome":
        return cls(
            question_id=d["question_id"], final=Answer.from_dict(d["final"]),
            correct=d["correct"], rounds=d.get("rounds", 1),
            trace_count=d.get("trace_count", 0), error=d.get("error"),
        )


@dataclass(frozen=True)
class RunRecord:
    """One experiment run: config snapshot, per-question outcomes, totals."""

    run_id: str
    dataset: str
    config: dict
    outcomes: tuple
    accuracy: float
    usage: Usage
    wall_time_s: float
    partial: bool = False

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "config": self.config,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "accuracy": self.accuracy,
            "usage": self.usage.to_dict(),
            "wall_time_s": self.wall_time_s,
            "partial": self.partial,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            run_id=d["run_id"], dataset=d["dataset"], config=d["config"],
            outcomes=tuple(QuestionOutcome.from_dict(o) for o in d["outcomes"]),
            accuracy=d["accuracy"], usage=Usage.from_dict(d["usage"]),
            wall_time_s=d["wall_time_s"], partial=d.get("partial", False),
        )


def _run_dir(runs_dir: str, run_id: str) -> str:
    path = os.path.join(runs_dir, run_id)
    os.makedirs(path, exist_ok=True)
    return path


def _load_existing_traces(traces_path: str) -> Dict[str, List[ReasoningTrace]]:
    by_question: Dict[str, List[ReasoningTrace]] = {}
    if not os.path.exists(traces_path):
        return by_question
    with open(traces_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            trace = ReasoningTrace.from_dict(json.loads(line))
            by_question.setdefault(trace.question_id, []).append(trace)
    return by_question


def _outcome_from_traces(q: Question, cfg: StrategyConfig,
                         traces: Sequence[ReasoningTrace]) -> QuestionOutcome:
    """Rebuild a per-question outcome from persisted traces (resume path)."""
    if cfg.kind in (StrategyKind.ZERO_SHOT, StrategyKind.COT, StrategyKind.DEEP_COT):
        last = max(traces, key=lambda t: t.round)
        final = last.parsed
        rounds = last.round
    else:
        final = vote_from_traces(traces).winner
        rounds = 1
    return QuestionOutcome(
        question_id=q.id, final=final,
        correct=(not final.abstain) and final == q.gold,
        rounds=rounds, trace_count=len(traces),
    )


def run_experiment(dataset_name: str, questions: Sequence[Question],
                   cfg: StrategyConfig, backend: Backend,
                   limits: Optional[RunLimits] = None,
                   runs_dir: str = "runs", run_id: Optional[str] = None,
                   reformulator: Optional[Reformulator] = None,
                   triggers: Optional[dict] = None,
                   effective_config: Optional[dict] = None) -> RunRecord:
    """Execute a strategy over every question, persisting traces as it goes.

    Completed questions found in an existing trace store are skipped, so
    interrupted runs resume. Exceeding the token budget stops the run
    gracefully with the record flagged partial; single-question failures are
    recorded and skipped, never fatal.
    """
    limits = limits or RunLimits()
    if run_id is None:
        run_id = f"{dataset_name}-{cfg.kind.value}-{int(time.time())}"
    run_dir = _run_dir(runs_dir, run_id)
    traces_path = os.path.join(run_dir, "traces.jsonl")
    existing = _load_existing_traces(traces_path)

    selected = list(questions)
    if limits.max_questions is not None:
        selected = selected[: limits.max_questions]

    started = time.monotonic()
    outcomes: List[QuestionOutcome] = []
    total_usage = Usage()
    partial = False
    with open(traces_path, "a", encoding="utf-8") as trace_file:
        for q in selected:
            if q.id in existing:
                traces = existing[q.id]
                outcomes.append(_outcome_from_traces(q, cfg, traces))
                for t in traces:
                    total_usage = total_usage + t.usage
                continue
            if (limits.max_total_tokens is not None
                    and total_usage.total_tokens >= limits.max_total_tokens):
                logger.warning("run %s: token budget %d exhausted, stopping early",
                               run_id, limits.max_total_tokens)
                partial = True
                break
            try:
                outcome = run_strategy(q, cfg, backend, reformulator, triggers)
            except StrategyError as exc:
                logger.error("run %s: %s", run_id, exc)
                outcomes.append(QuestionOutcome(
                    question_id=q.id, final=Answer.abstained(q.answer_format),
                    correct=False, rounds=0, trace_count=0, error=str(exc),
                ))
                continue
            for trace in outcome.traces:
                trace_file.write(json.dumps(trace.to_dict(), sort_keys=True,
                                            separators=(",", ":")) + "\n")
            trace_file.flush()
            total_usage = total_usage + outcome.usage()
            outcomes.append(QuestionOutcome(
                question_id=q.id, final=outcome.final,
                correct=(not outcome.final.abstain) and outcome.final == q.gold,
                rounds=outcome.rounds_executed, trace_count=len(outcome.traces),
            ))

    wall = 0.0 if backend.deterministic else round(time.monotonic() - started, 3)
    accuracy = sum(1 for o in outcomes if o.correct) / len(outcomes) if outcomes else 0.0
    record = RunRecord(
        run_id=run_id, dataset=dataset_name,
        config=dict(effective_config or cfg.to_dict()),
        outcomes=tuple(outcomes), accuracy=accuracy,
        usage=total_usage, wall_time_s=wall, partial=partial,
    )
    with open(os.path.join(run_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return record


def recompute_accuracy(runs_dir: str, run_id: str, questions: Sequence[Question],
                       cfg: StrategyConfig) -> float:
    """Recompute accuracy from the persisted trace store (drift check)."""
    traces_path = os.path.join(runs_dir, run_id, "traces.jsonl")
    by_question = _load_existing_traces(traces_path)
    by_id = {q.id: q for q in questions}
    correct = 0
    total = 0
    for qid, traces in by_question.items():
        if qid not in by_id:
            continue
        outcome = _outcome_from_traces(by_id[qid], cfg, traces)
        total += 1
        correct += int(outcome.correct)
    return correct / total if total else 0.0


def load_run_record(runs_dir: str, run_id: str) -> RunRecord:
    path = os.path.join(runs_dir, run_id, "summary.json")
    if not os.path.exists(path):
        raise MissingFileError(f"no summary at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return RunRecord.from_dict(json.load(fh))


def pilot_subset(cot_record: RunRecord, deep_record: RunRecord) -> List[str]:
    """Question ids the plain CoT run got wrong but the deep run got right."""
    cot = {o.question_id: o for o in cot_record.outcomes}
    deep = {o.question_id: o for o in deep_record.outcomes}
    if set(cot) != set(deep):
        raise MismatchedQuestionSetsError(
            f"runs cover different questions: {len(cot)} vs {len(deep)}")
    return [qid for qid in cot if not cot[qid].correct and deep[qid].correct]


def sweep_grid(dataset_name: str, questions: Sequence[Question],
               base_cfg: StrategyConfig, n_values: Sequence[int],
               m_values: Sequence[int], backend_factory,
               runs_dir: str = "runs",
               reformulator: Optional[Reformulator] = None) -> List[RunRecord]:
    """Run the strategy over an N x M grid of reformulation/sample counts.

    ``backend_factory`` is called per cell so scripted backends start fresh.
    """
    records = []
    for n in n_values:
        for m in m_values:
            cfg = replace(base_cfg, n_reformulations=n, m_samples=m)
            run_id = f"{dataset_name}-{cfg.kind.value}-n{n}-m{m}"
            records.append(run_experiment(
                dataset_name, questions, cfg, backend_factory(),
                runs_dir=runs_dir, run_id=run_id, reformulator=reformulator,
            ))
    return records


def _method_label(record: RunRecord) -> str:
    return str(record.config.get("kind", "unknown"))


def emit_report(records: Sequence[RunRecord], fmt: str = "table",
                baselines: Sequence[str] = ()) -> str:
    """Methods as rows, datasets plus overall average as columns.

    With ``baselines``, each non-baseline method row is followed by one
    parenthesized signed-diff row per baseline, Table-style.
    """
    if fmt == "json":
        return json.dumps({"records": [r.to_dict() for r in records]},
                          sort_keys=True, indent=2) + "\n"
    datasets: List[str] = []
    methods: List[str] = []
    cells: Dict[str, Dict[str, float]] = {}
    for record in records:
        method = _method_label(record)
        if record.dataset not in datasets:
            datasets.append(record.dataset)
        if method not in methods:
            methods.append(method)
        cells.setdefault(method, {})[record.dataset] = record.accuracy * 100.0

    def row_values(method: str) -> List[Optional[float]]:
        values = [cells[method].get(d) for d in datasets]
        present = [v for v in values if v is not None]
        avg = sum(present) / len(present) if present else None
        return values + [avg]

    header = ["method"] + datasets + ["avg"]
    rows: List[List[str]] = []
    for method in methods:
        values = row_values(method)
        rows.append([method] + [f"{v:.1f}" if v is not None else "-" for v in values])
        for baseline in baselines:
            if baseline not in cells or method == baseline:
                continue
            base_values = row_values(baseline)
            delta_cells = []
            for value, base in zip(values, base_values):
                if value is None or base is None:
                    delta_cells.append("-")
                else:
                    delta_cells.append(f"({value - base:+.1f})")
            rows.append([f"  vs {baseline}"] + delta_cells)

    if fmt == "csv":
        lines = [",".join(header)] + [",".join(r) for r in rows]
        return "\n".join(lines) + "\n"
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
