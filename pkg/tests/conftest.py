import pytest

from breadth.core import Answer, AnswerFormat, Question

MC_TRIGGER = "Therefore, among A through E, the answer is"

TOY_SHOP_TEXT = (
    "Alex and Jacob works at a toy shop that make toys. Alex takes 7 hours to "
    "make a toy, and Jacob takes 9 hours to make a toy. During a month, both of "
    "them makes 35 toys in total. If both of them have worked for almost similar "
    "number of hours how many toys have been prepared by Jacob? "
    "Answer Choices: (A) 15 (B) 16 (C) 17 (D) 18 (E) 19"
)

SPHERE_TEXT = (
    "A rectangular solid, 3 x 4 x 15, is inscribed in a sphere, so that all "
    "eight of its vertices are on the sphere. What is the diameter of the "
    "sphere? Answer Choices: (A) 13.3542 (B) 15.8113 (C) 18.3451 (D) 19.5667 "
    "(E) 20.8888"
)


def mc_question(qid: str, text: str, gold_label: str,
                choices=(("A", ""), ("B", ""), ("C", ""), ("D", ""), ("E", ""))):
    return Question(
        id=qid, text=text, answer_format=AnswerFormat.MULTIPLE_CHOICE,
        gold=Answer(AnswerFormat.MULTIPLE_CHOICE, gold_label), choices=choices,
    )


@pytest.fixture
def toy_shop_question():
    return mc_question("toy-shop", TOY_SHOP_TEXT, "A",
                       choices=(("A", "15"), ("B", "16"), ("C", "17"),
                                ("D", "18"), ("E", "19")))


@pytest.fixture
def sphere_question():
    return mc_question("sphere", SPHERE_TEXT, "B",
                       choices=(("A", "13.3542"), ("B", "15.8113"), ("C", "18.3451"),
                                ("D", "19.5667"), ("E", "20.8888")))
