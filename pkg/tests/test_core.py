import random
import string

import pytest

from breadth.core import (
    Answer,
    AnswerFormat,
    PromptVariant,
    Question,
    ReasoningTrace,
    StopRule,
    StrategyConfig,
    StrategyKind,
    Usage,
    canonical_answer,
    default_config,
)
from breadth.extract import majority_vote


def test_numeric_canonicalization():
    assert canonical_answer("15.0", AnswerFormat.NUMERIC) == Answer(AnswerFormat.NUMERIC, "15")
    assert canonical_answer("$3,000", AnswerFormat.NUMERIC).value == "3000"
    assert canonical_answer("65,000.", AnswerFormat.NUMERIC).value == "65000"
    assert canonical_answer("25%", AnswerFormat.NUMERIC).value == "25"
    assert canonical_answer("≈15.8114", AnswerFormat.NUMERIC).value == "15.8114"
    assert canonical_answer("approximately 139", AnswerFormat.NUMERIC).value == "139"
    assert canonical_answer("-0.0", AnswerFormat.NUMERIC).value == "0"
    assert canonical_answer("1e3", AnswerFormat.NUMERIC).value == "1000"
    assert canonical_answer("no numbers here", AnswerFormat.NUMERIC).abstain


def test_choice_label_extraction():
    assert canonical_answer("(B)", AnswerFormat.MULTIPLE_CHOICE).value == "B"
    assert canonical_answer("b", AnswerFormat.MULTIPLE_CHOICE).value == "B"
    assert canonical_answer("(d) 65,000", AnswerFormat.MULTIPLE_CHOICE).value == "D"
    assert canonical_answer("Option D:", AnswerFormat.MULTIPLE_CHOICE).value == "D"
    assert canonical_answer("", AnswerFormat.MULTIPLE_CHOICE).abstain


def test_yes_no_fold():
    assert canonical_answer("Yes.", AnswerFormat.YES_NO).value == "yes"
    assert canonical_answer("NO", AnswerFormat.YES_NO).value == "no"
    assert canonical_answer("maybe", AnswerFormat.YES_NO).abstain


def test_free_form_fold_equates_case_and_punctuation():
    a = canonical_answer("yoga", AnswerFormat.FREE_FORM)
    b = canonical_answer("Yoga. ", AnswerFormat.FREE_FORM)
    assert a == b
    assert canonical_answer("  nk  ls ", AnswerFormat.FREE_FORM).value == "nk ls"
    assert canonical_answer("   ", AnswerFormat.FREE_FORM).abstain


def _random_text(rng):
    alphabet = string.ascii_letters + string.digits + " .,$()%-"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))


def test_canonical_answer_idempotent_over_random_strings():
    rng = random.Random(7)
    formats = list(AnswerFormat)
    for _ in range(500):
        raw = _random_text(rng)
        fmt = rng.choice(formats)
        first = canonical_answer(raw, fmt)
        if first.abstain:
            continue
        again = canonical_answer(first.value, fmt)
        assert again == first, (raw, fmt, first, again)


def test_answer_equality_is_equivalence_relation():
    rng = random.Random(11)
    pool = [canonical_answer(_random_text(rng), fmt)
            for fmt in AnswerFormat for _ in range(40)]
    for a in pool:
        assert a == a
    for a in pool:
        for b in pool:
            assert (a == b) == (b == a)
    for a in pool:
        for b in pool:
            if a != b:
                continue
            for c in pool:
                if b == c:
                    assert a == c


def test_abstain_answer_must_be_empty():
    with pytest.raises(ValueError):
        Answer(AnswerFormat.NUMERIC, "3", abstain=True)


def test_question_requires_choices_iff_multiple_choice():
    gold = Answer(AnswerFormat.MULTIPLE_CHOICE, "A")
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.MULTIPLE_CHOICE, gold=gold)
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.NUMERIC,
                 gold=Answer(AnswerFormat.NUMERIC, "3"), choices=(("A", "x"),))


def test_question_rejects_duplicate_labels_and_foreign_gold():
    gold = Answer(AnswerFormat.MULTIPLE_CHOICE, "A")
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.MULTIPLE_CHOICE,
                 gold=gold, choices=(("A", "1"), ("A", "2")))
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.MULTIPLE_CHOICE,
                 gold=Answer(AnswerFormat.MULTIPLE_CHOICE, "F"),
                 choices=(("A", "1"), ("B", "2")))


def test_labels_beyond_e_accepted_but_flagged(caplog):
    with caplog.at_level("WARNING"):
        q = Question(id="wide", text="t", answer_format=AnswerFormat.MULTIPLE_CHOICE,
                     gold=Answer(AnswerFormat.MULTIPLE_CHOICE, "F"),
                     choices=tuple((l, l.lower()) for l in "ABCDEF"))
    assert q.gold.value == "F"
    assert any("beyond A-E" in r.message for r in caplog.records)


def test_question_gold_must_parse_under_format():
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.NUMERIC,
                 gold=Answer(AnswerFormat.NUMERIC, "not-a-number"))
    with pytest.raises(ValueError):
        Question(id="q", text="t", answer_format=AnswerFormat.YES_NO,
                 gold=Answer.abstained(AnswerFormat.YES_NO))


def test_strategy_kind_parses_cli_spelling():
    assert StrategyKind.parse("questionc-sc") == StrategyKind.QUESTION_C_SC
    assert StrategyKind.parse("PromptC-SC") == StrategyKind.PROMPT_C_SC
    assert StopRule.parse("stable") == StopRule.STABLE_STOP


def test_default_config_temperatures():
    assert default_config(StrategyKind.SC).temperature == 0.8
    assert default_config(StrategyKind.PROMPT_C_SC).temperature == 0.8
    assert default_config(StrategyKind.COT).temperature == 1.0
    assert default_config(StrategyKind.DEEP_COT).temperature == 1.0
    assert default_config(StrategyKind.QUESTION_C).temperature == 1.0


def test_default_config_headline_knobs():
    # the standard comparison setup: three iterations deep, three paths wide
    assert default_config(StrategyKind.DEEP_COT).max_iterations == 3
    assert default_config(StrategyKind.SC).m_samples == 3
    assert default_config(StrategyKind.PROMPT_C_SC).n_reformulations == 3
    assert default_config(StrategyKind.PROMPT_C_SC).m_samples == 1
    assert default_config(StrategyKind.COT).max_iterations == 1
    assert default_config(StrategyKind.SC, m_samples=6).m_samples == 6


def test_config_validation():
    with pytest.raises(ValueError):
        StrategyConfig(kind=StrategyKind.SC, m_samples=0)
    with pytest.raises(ValueError):
        StrategyConfig(kind=StrategyKind.COT, temperature=-0.1)


def test_canonical_prompt_default_text():
    cfg = default_config(StrategyKind.COT)
    assert cfg.canonical_prompt.text == "Let's think step by step."
    assert cfg.canonical_prompt.origin == "canonical"


def test_serialization_round_trips(toy_shop_question):
    q = toy_shop_question
    assert Question.from_dict(q.to_dict()) == q

    variant = PromptVariant(text="alt", origin="bank", bank_index=3)
    assert PromptVariant.from_dict(variant.to_dict()) == variant

    trace = ReasoningTrace(
        question_id=q.id, round=2, reformulation_index=1, sample_index=0,
        assembled_input=q.text + "\nprompt", reasoning_text="r",
        raw_prediction_text="p", parsed=Answer(AnswerFormat.MULTIPLE_CHOICE, "A"),
        usage=Usage(10, 20), latency_ms=5,
    )
    assert ReasoningTrace.from_dict(trace.to_dict()) == trace

    cfg = default_config(StrategyKind.QUESTION_C_SC, n_reformulations=3, m_samples=2)
    assert StrategyConfig.from_dict(cfg.to_dict()) == cfg

    vote = majority_vote([Answer(AnswerFormat.MULTIPLE_CHOICE, "A"),
                          Answer.abstained(AnswerFormat.MULTIPLE_CHOICE)])
    from breadth.core import VoteResult
    assert VoteResult.from_dict(vote.to_dict()) == vote


def test_trace_validation():
    parsed = Answer(AnswerFormat.NUMERIC, "1")
    with pytest.raises(ValueError):
        ReasoningTrace(question_id="q", round=0, reformulation_index=0,
                       sample_index=0, assembled_input="q", reasoning_text="",
                       raw_prediction_text="", parsed=parsed)
    with pytest.raises(ValueError):
        ReasoningTrace(question_id="q", round=1, reformulation_index=0,
                       sample_index=0, assembled_input="q", reasoning_text="",
                       raw_prediction_text="", parsed=parsed, latency_ms=-1)


def test_vote_result_accounting_enforced():
    from breadth.core import VoteResult
    answer = Answer(AnswerFormat.NUMERIC, "1")
    with pytest.raises(ValueError):
        VoteResult(winner=answer, counts=((answer, 1),), total_paths=3,
                   abstained=1, tie=False)
