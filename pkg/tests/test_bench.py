import json
import os

import pytest

from breadth.core import (
    Answer,
    AnswerFormat,
    StrategyKind,
    default_config,
)
from breadth.bench import (
    MismatchedQuestionSetsError,
    MissingFileError,
    RunLimits,
    RunRecord,
    SchemaError,
    dataset_spec,
    emit_report,
    generate_synthetic,
    last_letters_gold,
    load_dataset,
    load_run_record,
    pilot_subset,
    recompute_accuracy,
    run_experiment,
    sweep_grid,
)
from breadth.llmio import RecordingBackend, ReplayBackend, ReplayStore, ScriptedBackend
from breadth.strategy import (
    answer_trigger,
    assemble_prediction_input,
    assemble_reasoning_input,
)
from conftest import mc_question

PROMPT = "Let's think step by step."


# ---------------------------------------------------------------- fixtures


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Schema-faithful stand-in files with the documented per-dataset counts."""
    root = tmp_path_factory.mktemp("datasets")

    def solutions_file(name, count):
        path = root / name
        _write_json(path, [
            {"iIndex": i, "sQuestion": f"If a basket holds {i + 2} apples, how many in total?",
             "lSolutions": [float(i + 2)]}
            for i in range(count)
        ])

    solutions_file("questions.json", 508)    # singleeq
    solutions_file("AddSub.json", 395)
    solutions_file("MultiArith.json", 600)

    _write_jsonl(root / "gsm8k.jsonl", [
        {"question": f"Sam buys {i} pens. How many pens?",
         "answer": f"He buys them.\n#### {i}"}
        for i in range(1319)
    ])
    _write_jsonl(root / "aqua.jsonl", [
        {"question": f"Pick the number closest to {i}.",
         "options": ["A)1", "B)2", "C)3", "D)4", "E)5"],
         "correct": "ABCDE"[i % 5]}
        for i in range(254)
    ])
    _write_json(root / "SVAMP.json", [
        {"ID": f"svamp-{i}", "Body": f"There are {i + 1} birds.",
         "Question": "How many birds are there?", "Answer": float(i + 1)}
        for i in range(1000)
    ])
    _write_jsonl(root / "commonsenseqa.jsonl", [
        {"answerKey": "ABCDE"[i % 5],
         "question": {"stem": f"Where would you find item {i}?",
                      "choices": [{"label": l, "text": f"place {l}{i}"}
                                  for l in "ABCDE"]}}
        for i in range(1221)
    ])
    _write_json(root / "task.json", {
        "examples": [
            {"input": f"Is statement {i} true in practice?",
             "target_scores": {"Yes": 1, "No": 0} if i % 2 else {"Yes": 0, "No": 1}}
            for i in range(2290)
        ]
    })
    return root


# ---------------------------------------------------------------- loaders


LOADER_CASES = [
    ("singleeq", "questions.json", 508, AnswerFormat.NUMERIC),
    ("addsub", "AddSub.json", 395, AnswerFormat.NUMERIC),
    ("multiarith", "MultiArith.json", 600, AnswerFormat.NUMERIC),
    ("gsm8k", "gsm8k.jsonl", 1319, AnswerFormat.NUMERIC),
    ("aqua", "aqua.jsonl", 254, AnswerFormat.MULTIPLE_CHOICE),
    ("svamp", "SVAMP.json", 1000, AnswerFormat.NUMERIC),
    ("commonsenseqa", "commonsenseqa.jsonl", 1221, AnswerFormat.MULTIPLE_CHOICE),
    ("strategyqa", "task.json", 2290, AnswerFormat.YES_NO),
]


@pytest.mark.parametrize("name,filename,expected,fmt", LOADER_CASES)
def test_loader_counts_match_table(dataset_dir, name, filename, expected, fmt):
    spec = dataset_spec(name, path=str(dataset_dir / filename))
    questions = load_dataset(spec)
    assert len(questions) == expected == spec.expected_count
    assert all(q.answer_format == fmt for q in questions)
    assert all(not q.gold.abstain for q in questions)


def test_aqua_golds_are_labels_and_choices_parsed(dataset_dir):
    questions = load_dataset(dataset_spec("aqua", path=str(dataset_dir / "aqua.jsonl")))
    q = questions[0]
    assert q.gold.value == "A"
    assert q.choice_labels() == ["A", "B", "C", "D", "E"]
    assert "Answer Choices: (A) 1" in q.text


def test_gsm8k_gold_is_hash_value(dataset_dir):
    questions = load_dataset(dataset_spec("gsm8k", path=str(dataset_dir / "gsm8k.jsonl")))
    assert questions[5].gold == Answer(AnswerFormat.NUMERIC, "5")


def test_strategyqa_golds_are_yes_no(dataset_dir):
    questions = load_dataset(dataset_spec("strategyqa", path=str(dataset_dir / "task.json")))
    assert {q.gold.value for q in questions} == {"yes", "no"}


def test_count_mismatch_warns_but_loads(dataset_dir, tmp_path, caplog):
    short = tmp_path / "short.jsonl"
    _write_jsonl(short, [{"question": "q?", "answer": "#### 3"}])
    with caplog.at_level("WARNING"):
        questions = load_dataset(dataset_spec("gsm8k", path=str(short)))
    assert len(questions) == 1
    assert any("expected 1319" in r.message for r in caplog.records)


def test_missing_file_and_schema_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset(dataset_spec("gsm8k", path=str(tmp_path / "nope.jsonl")))
    bad = tmp_path / "bad.jsonl"
    _write_jsonl(bad, [{"question": "q?", "answer": "no marker"}])
    with pytest.raises(SchemaError) as err:
        load_dataset(dataset_spec("gsm8k", path=str(bad)))
    assert "[0]" in str(err.value)


def test_directory_path_uses_default_filename(dataset_dir, tmp_path):
    target = tmp_path / "gsm8k"
    target.mkdir()
    os.link(dataset_dir / "gsm8k.jsonl", target / "test.jsonl")
    questions = load_dataset(dataset_spec("gsm8k", path=str(target)))
    assert len(questions) == 1319


def test_unknown_dataset_rejected():
    with pytest.raises(KeyError):
        dataset_spec("mystery")


# ---------------------------------------------------------------- generators


def test_generators_emit_exactly_500_each():
    assert len(generate_synthetic("coinflip", 500, seed=1)) == 500
    assert len(generate_synthetic("lastletters", 500, seed=1)) == 500
    spec = dataset_spec("coinflip", seed=1)
    assert len(load_dataset(spec)) == spec.expected_count == 500


def test_generator_determinism():
    first = generate_synthetic("coinflip", 50, seed=9)
    second = generate_synthetic("coinflip", 50, seed=9)
    assert first == second
    different = generate_synthetic("coinflip", 50, seed=10)
    assert first != different


def test_coinflip_parity_rule():
    for q in generate_synthetic("coinflip", 200, seed=4):
        flips = q.text.count(" flips the coin.")
        assert q.text.startswith("A coin is heads up.")
        assert q.text.count("the coin.") == 4
        assert q.gold.value == ("yes" if flips % 2 == 0 else "no")


def test_last_letters_gold_rule():
    # brute-force check of the gold construction, plus the worked example
    assert last_letters_gold("Elon Musk Bill Gates") == "nkls"
    for q in generate_synthetic("lastletters", 100, seed=4):
        words = q.text.split('"')[1]
        assert len(words.split()) == 4
        expected = "".join(w[-1].lower() for w in words.split())
        assert q.gold.value == expected


def test_generator_rejects_bad_n():
    with pytest.raises(ValueError):
        generate_synthetic("coinflip", 0, seed=1)
    with pytest.raises(ValueError):
        generate_synthetic("telepathy", 5, seed=1)


# ---------------------------------------------------------------- runner


def _four_questions():
    return [mc_question(f"q{i}", f"Probe {i}. Answer Choices: (A) x (B) y", "A")
            for i in range(4)]


def _scripted_for(questions, answers):
    """One CoT path per question with the given answer labels."""
    backend = ScriptedBackend()
    trigger = answer_trigger(AnswerFormat.MULTIPLE_CHOICE)
    for q, label in zip(questions, answers):
        reasoning = f"reasoning for {q.id}"
        backend.add_exact(assemble_reasoning_input(q.text, PROMPT), [reasoning])
        backend.add_exact(
            assemble_prediction_input(q.text, PROMPT, reasoning, trigger),
            [f"the answer is ({label})"])
    return backend


def test_run_experiment_accuracy_and_persistence(tmp_path):
    questions = _four_questions()
    backend = _scripted_for(questions, ["A", "A", "A", "B"])
    cfg = default_config(StrategyKind.COT)
    record = run_experiment("toy", questions, cfg, backend,
                            runs_dir=str(tmp_path), run_id="toy-run")
    assert record.accuracy == pytest.approx(0.75)
    assert not record.partial
    assert record.wall_time_s == 0.0  # deterministic backend

    traces_path = tmp_path / "toy-run" / "traces.jsonl"
    lines = traces_path.read_text().splitlines()
    assert len(lines) == 4
    summary = json.loads((tmp_path / "toy-run" / "summary.json").read_text())
    assert summary["accuracy"] == pytest.approx(0.75)
    assert RunRecord.from_dict(summary) == record


def test_accuracy_recomputed_from_traces_matches(tmp_path):
    questions = _four_questions()
    backend = _scripted_for(questions, ["A", "B", "A", "A"])
    cfg = default_config(StrategyKind.COT)
    record = run_experiment("toy", questions, cfg, backend,
                            runs_dir=str(tmp_path), run_id="drift")
    assert recompute_accuracy(str(tmp_path), "drift", questions, cfg) == \
        pytest.approx(record.accuracy)


def test_token_budget_stops_gracefully_with_partial_flag(tmp_path):
    questions = _four_questions()
    backend = _scripted_for(questions, ["A", "A", "A", "A"])
    cfg = default_config(StrategyKind.COT)
    record = run_experiment(
        "toy", questions, cfg, backend,
        limits=RunLimits(max_total_tokens=25),
        runs_dir=str(tmp_path), run_id="budget")
    assert record.partial
    assert 0 < len(record.outcomes) < 4


def test_question_cap_is_not_partial(tmp_path):
    questions = _four_questions()
    backend = _scripted_for(questions, ["A", "A", "A", "A"])
    record = run_experiment(
        "toy", questions, default_config(StrategyKind.COT), backend,
        limits=RunLimits(max_questions=2), runs_dir=str(tmp_path), run_id="cap")
    assert len(record.outcomes) == 2
    assert not record.partial


def test_per_question_failure_recorded_not_fatal(tmp_path):
    questions = _four_questions()
    backend = _scripted_for(questions[:3], ["A", "A", "A"])  # q3 has no script
    record = run_experiment("toy", questions, default_config(StrategyKind.COT),
                            backend, runs_dir=str(tmp_path), run_id="failures")
    assert len(record.outcomes) == 4
    failed = [o for o in record.outcomes if o.error]
    assert len(failed) == 1 and failed[0].question_id == "q3"
    assert record.accuracy == pytest.approx(0.75)


def test_runs_resume_skipping_completed_questions(tmp_path):
    questions = _four_questions()
    first_backend = _scripted_for(questions[:2], ["A", "A"])
    cfg = default_config(StrategyKind.COT)
    run_experiment("toy", questions, cfg, first_backend,
                   limits=RunLimits(max_questions=2),
                   runs_dir=str(tmp_path), run_id="resume")
    # second backend only knows the remaining questions: resume must skip q0/q1
    second_backend = _scripted_for(questions[2:], ["A", "B"])
    record = run_experiment("toy", questions, cfg, second_backend,
                            runs_dir=str(tmp_path), run_id="resume")
    assert len(record.outcomes) == 4
    assert record.accuracy == pytest.approx(0.75)
    lines = (tmp_path / "resume" / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 4  # no duplicates


def test_replay_run_twice_is_byte_identical(tmp_path):
    questions = generate_synthetic("coinflip", 20, seed=2)
    cfg = default_config(StrategyKind.COT)
    trigger = answer_trigger(AnswerFormat.YES_NO)
    live = ScriptedBackend()
    for q in questions:
        reasoning = f"thinking about {q.id}"
        live.add_exact(assemble_reasoning_input(q.text, PROMPT), [reasoning])
        live.add_exact(assemble_prediction_input(q.text, PROMPT, reasoning, trigger),
                       [f"the answer is {q.gold.value}"])
    cache = str(tmp_path / "cache.jsonl")
    recorder = RecordingBackend(live, ReplayStore(cache))
    run_experiment("coinflip", questions, cfg, recorder,
                   runs_dir=str(tmp_path / "record"), run_id="r0")

    outputs = []
    for attempt in ("a", "b"):
        replay = ReplayBackend(ReplayStore(cache))
        run_dir = tmp_path / f"replay-{attempt}"
        record = run_experiment("coinflip", questions, cfg, replay,
                                runs_dir=str(run_dir), run_id="rerun")
        assert record.accuracy == pytest.approx(1.0)
        outputs.append((
            (run_dir / "rerun" / "traces.jsonl").read_bytes(),
            (run_dir / "rerun" / "summary.json").read_bytes(),
        ))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


# ---------------------------------------------------------------- pilot


def _record_with(outcomes_by_id, run_id="run", dataset="toy"):
    from breadth.bench import QuestionOutcome
    from breadth.core import Usage

    outcomes = tuple(
        QuestionOutcome(question_id=qid,
                        final=Answer(AnswerFormat.MULTIPLE_CHOICE, "A"),
                        correct=correct, trace_count=1)
        for qid, correct in outcomes_by_id.items()
    )
    correct_n = sum(1 for o in outcomes if o.correct)
    return RunRecord(run_id=run_id, dataset=dataset, config={"kind": "cot"},
                     outcomes=outcomes,
                     accuracy=correct_n / len(outcomes) if outcomes else 0.0,
                     usage=Usage(), wall_time_s=0.0)


def test_pilot_subset_selects_cot_wrong_deep_right():
    cot = _record_with({"q0": False, "q1": True})
    deep = _record_with({"q0": True, "q1": True})
    assert pilot_subset(cot, deep) == ["q0"]


def test_pilot_subset_empty_when_cot_all_correct():
    cot = _record_with({"q0": True, "q1": True})
    deep = _record_with({"q0": True, "q1": True})
    assert pilot_subset(cot, deep) == []


def test_pilot_subset_rejects_mismatched_sets():
    cot = _record_with({"q0": True})
    deep = _record_with({"q0": True, "q1": True})
    with pytest.raises(MismatchedQuestionSetsError):
        pilot_subset(cot, deep)


def _sc_backend_for_plateau(questions, answer_plan, m):
    """answer_plan: per question, a function from sample index to label."""
    backend = ScriptedBackend()
    trigger = answer_trigger(AnswerFormat.MULTIPLE_CHOICE)
    for q in questions:
        plan = answer_plan[q.id]
        reasonings = [f"path {j} for {q.id}" for j in range(m)]
        backend.add_exact(assemble_reasoning_input(q.text, PROMPT), reasonings)
        for j, reasoning in enumerate(reasonings):
            backend.add_exact(
                assemble_prediction_input(q.text, PROMPT, reasoning, trigger),
                [f"the answer is ({plan(j)})"])
    return backend


def test_pilot_plateau_half_recovered_then_rise_and_flat(tmp_path):
    """Self-consistency over a subset where one path fixes half the questions:
    accuracy over growing sample budgets rises then plateaus."""
    questions = _four_questions()  # gold A everywhere
    answer_plan = {
        "q0": lambda j: "A",                      # recovered at m=1
        "q1": lambda j: "A",                      # recovered at m=1
        "q2": lambda j: "B" if j == 0 else "A",   # recovered once majority flips
        "q3": lambda j: "B",                      # never recovered
    }
    accuracies = []
    for m in range(1, 7):
        backend = _sc_backend_for_plateau(questions, answer_plan, m)
        cfg = default_config(StrategyKind.SC, m_samples=m)
        record = run_experiment("subset", questions, cfg, backend,
                                runs_dir=str(tmp_path), run_id=f"sc-m{m}")
        accuracies.append(record.accuracy)
    assert accuracies[0] == pytest.approx(0.5)  # half at one path
    assert all(a <= b + 1e-9 for a, b in zip(accuracies, accuracies[1:]))
    assert accuracies[-1] == accuracies[-2] == accuracies[-3]  # plateau
    assert accuracies[-1] > accuracies[0]


def test_sweep_grid_covers_all_cells(tmp_path):
    questions = _four_questions()[:1]

    def factory():
        return ScriptedBackend({"": ["the answer is (A)"] * 200})

    records = sweep_grid("toy", questions, default_config(StrategyKind.SC),
                         n_values=[1], m_values=[1, 2, 3],
                         backend_factory=factory, runs_dir=str(tmp_path))
    assert [r.config["m_samples"] for r in records] == [1, 2, 3]
    assert all(r.accuracy == 1.0 for r in records)


# ---------------------------------------------------------------- reports


def test_emit_report_table_rows_methods_columns_datasets():
    records = [
        _record_with({"q0": True, "q1": True}, run_id="a", dataset="aqua"),
        _record_with({"q0": False, "q1": True}, run_id="b", dataset="gsm8k"),
    ]
    table = emit_report(records, fmt="table")
    lines = table.strip().splitlines()
    assert lines[0].split() == ["method", "aqua", "gsm8k", "avg"]
    assert len(lines) == 2  # one method row
    assert "100.0" in lines[1] and "50.0" in lines[1] and "75.0" in lines[1]


def test_emit_report_two_methods_two_datasets_is_two_by_three():
    def with_kind(record, kind):
        return RunRecord(**{**record.to_dict(), "outcomes": record.outcomes,
                            "usage": record.usage, "config": {"kind": kind}})

    records = [
        with_kind(_record_with({"q0": True}, run_id="a1", dataset="aqua"), "sc"),
        with_kind(_record_with({"q0": False}, run_id="a2", dataset="gsm8k"), "sc"),
        with_kind(_record_with({"q0": True}, run_id="b1", dataset="aqua"), "cot"),
        with_kind(_record_with({"q0": True}, run_id="b2", dataset="gsm8k"), "cot"),
    ]
    lines = emit_report(records, fmt="csv").strip().splitlines()
    assert lines[0] == "method,aqua,gsm8k,avg"
    assert len(lines) == 3  # header + one row per method
    assert lines[1] == "sc,100.0,0.0,50.0"
    assert lines[2] == "cot,100.0,100.0,100.0"


def test_emit_report_delta_rows_against_baseline():
    sc = _record_with({"q0": False, "q1": True}, run_id="sc", dataset="aqua")
    sc = RunRecord(**{**sc.to_dict(), "outcomes": sc.outcomes,
                      "usage": sc.usage, "config": {"kind": "sc"}})
    ours = _record_with({"q0": True, "q1": True}, run_id="ours", dataset="aqua")
    ours = RunRecord(**{**ours.to_dict(), "outcomes": ours.outcomes,
                        "usage": ours.usage, "config": {"kind": "promptc_sc"}})
    csv_text = emit_report([sc, ours], fmt="csv", baselines=["sc"])
    lines = csv_text.strip().splitlines()
    assert lines[0] == "method,aqua,avg"
    delta = [l for l in lines if "vs sc" in l]
    assert len(delta) == 1
    assert "(+50.0)" in delta[0]


def test_emit_report_json_round_trips():
    record = _record_with({"q0": True, "q1": False}, run_id="x", dataset="aqua")
    payload = json.loads(emit_report([record], fmt="json"))
    assert RunRecord.from_dict(payload["records"][0]) == record


def test_load_run_record_round_trip(tmp_path):
    questions = _four_questions()[:2]
    backend = _scripted_for(questions, ["A", "B"])
    record = run_experiment("toy", questions, default_config(StrategyKind.COT),
                            backend, runs_dir=str(tmp_path), run_id="io")
    assert load_run_record(str(tmp_path), "io") == record
