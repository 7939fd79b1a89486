import numpy as np
import pytest

from transc.dataset import make_concept_tree
from transc.kg import KnowledgeGraph, TripleSet, Vocabulary


def make_toy_kg() -> KnowledgeGraph:
    """Four instances, a three-concept chain and two relations, all splits non-empty."""
    instances = Vocabulary(["rex", "tom", "felix", "fido"])
    concepts = Vocabulary(["animal", "mammal", "dog", "cat"])
    relations = Vocabulary(["friendOf", "livesWith"])
    train = TripleSet(
        relational=[(0, 0, 1), (1, 1, 2), (3, 0, 0), (2, 1, 1)],
        instance_of=[(0, 2), (3, 2), (1, 3), (2, 3)],
        sub_class_of=[(2, 1), (1, 0)],
    )
    valid = TripleSet(relational=[(0, 1, 3)], instance_of=[(0, 1)], sub_class_of=[(3, 1)])
    test = TripleSet(relational=[(3, 1, 0)], instance_of=[(1, 1)], sub_class_of=[(2, 0)])
    return KnowledgeGraph(instances, concepts, relations, {"train": train, "valid": valid, "test": test})


@pytest.fixture
def toy_kg():
    return make_toy_kg()


@pytest.fixture(scope="session")
def small_tree():
    return make_concept_tree(n_instances=30, n_relations=3, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``record(name, ok, detail)``: store one PASS/FAIL line (SKIP for ``ok=None``) and return ``ok``."""

    def record(name, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{status}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
