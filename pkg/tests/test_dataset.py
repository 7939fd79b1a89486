import numpy as np
import pytest

from transc.dataset import (
    RawExport, build_m_extension, build_subset, kg_to_raw, m_extension_triples, make_concept_tree,
    read_raw_export, relation_set, split, write_raw_export,
)
from transc.kg import KGError, KnowledgeGraph, TripleKind, TripleSet, Vocabulary


def test_build_subset_hand_trace():
    raw = RawExport([("a", "r", "b")], [("a", "c")], [("c", "d"), ("x", "y")])
    kg = build_subset(raw, 1)
    assert list(kg.instances) == ["a", "b"] and list(kg.concepts) == ["c"]
    assert kg.train.instance_of.tolist() == [[0, 0]]
    # d never enters C (only reachable as a super-concept), so (c, d) is dropped; (x, y) too
    assert len(kg.train.sub_class_of) == 0


def test_build_subset_keeps_subclass_between_collected_concepts():
    raw = RawExport([("a", "r", "b")], [("a", "c"), ("b", "d"), ("z", "q")], [("c", "d"), ("d", "q")])
    kg = build_subset(raw, None)
    assert list(kg.concepts) == ["c", "d"]
    assert kg.train.sub_class_of.tolist() == [[0, 1]]


def test_build_subset_empty_sample():
    raw = RawExport([("a", "r", "b")], [("a", "c")], [])
    kg = build_subset(raw, 0)
    assert kg.n_instances == 0 and kg.n_concepts == 0 and len(kg.train) == 0
    assert relation_set(kg) == ["instanceOf", "subClassOf"]


def test_build_subset_too_large():
    with pytest.raises(ValueError):
        build_subset(RawExport([("a", "r", "b")]), 2)


def test_build_subset_deterministic_and_deduplicated(small_tree):
    raw = kg_to_raw(small_tree.kg)
    raw.relational += raw.relational[:5]
    a = build_subset(raw, 40, seed=3)
    b = build_subset(raw, 40, seed=3)
    assert np.array_equal(a.train.relational, b.train.relational)
    assert len(a.train.relational) == 40
    assert len(set(map(tuple, a.train.relational.tolist()))) == 40


def test_raw_export_roundtrip(tmp_path):
    raw = RawExport([("a", "r", "b")], [("a", "c")], [("c", "d")])
    write_raw_export(raw, tmp_path)
    got = read_raw_export(tmp_path / "relational.tsv", tmp_path / "instanceOf.tsv", tmp_path / "subClassOf.tsv")
    assert got == raw
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(KGError, match="bad.tsv:1"):
        read_raw_export(tmp_path / "bad.tsv", tmp_path / "instanceOf.tsv", tmp_path / "subClassOf.tsv")


def _chain_kg(test_io, valid_io=(), train_sc=((0, 1), (1, 2)), test_sc=()):
    return KnowledgeGraph(
        Vocabulary(["i", "j"]), Vocabulary(["c", "d", "e", "f"]), Vocabulary(["r"]),
        {
            "train": TripleSet(instance_of=[(1, 0)], sub_class_of=list(train_sc)),
            "valid": TripleSet(instance_of=list(valid_io)),
            "test": TripleSet(instance_of=list(test_io), sub_class_of=list(test_sc)),
        },
    )


def test_m_extension_single_hop():
    kg = _chain_kg([(0, 0)], train_sc=[(0, 1)])
    ext = build_m_extension(kg)
    assert ext.test.instance_of.tolist() == [[0, 0], [0, 1]]


def test_m_extension_one_hop_only_on_chain():
    kg = _chain_kg([(0, 0)])
    new_e, _ = m_extension_triples(kg, "test")
    assert new_e.tolist() == [[0, 1]]
    closed, _ = m_extension_triples(kg, "test", closure=True)
    assert closed.tolist() == [[0, 1], [0, 2]]


def test_m_extension_subclass_and_train_exclusion():
    kg = _chain_kg([(1, 0)], test_sc=[(3, 0)])
    new_e, new_c = m_extension_triples(kg, "test")
    assert new_c.tolist() == [[3, 1]]
    assert new_e.tolist() == [[1, 1]]
    kg2 = kg.with_splits({**kg.splits, "train": TripleSet(instance_of=[(1, 0), (1, 1)], sub_class_of=[(0, 1)])})
    new_e, _ = m_extension_triples(kg2, "test", exclude_train=True)
    assert new_e.tolist() == []


def test_m_extension_negatives_balanced():
    kg = _chain_kg([(0, 0)], valid_io=[(0, 3)])
    ext = build_m_extension(kg, negative_seed=1)
    for name in ("valid", "test"):
        for kind in TripleKind:
            assert len(ext.negatives[name].triples[kind]) == len(ext.splits[name][kind])
    assert build_m_extension(kg, negative_seed=None).negatives == {}


def test_m_extension_matches_closure_oracle(small_tree):
    kg, _ = split(small_tree.kg, {"instanceOf": (5, 5), "subClassOf": (2, 2)}, seed=1)
    parents = {}
    for a, b in kg.train.sub_class_of.tolist():
        parents.setdefault(a, set()).add(b)
    new_e, new_c = m_extension_triples(kg, "test", closure=True)
    for rows, new in ((kg.test.instance_of, new_e), (kg.test.sub_class_of, new_c)):
        want, frontier = set(), {tuple(r) for r in rows.tolist()}
        seen = set(frontier)
        while frontier:
            nxt = {(x, p) for x, c in frontier for p in parents.get(c, ())} - seen
            want |= nxt
            seen |= nxt
            frontier = nxt
        assert set(map(tuple, new.tolist())) == want


def test_split_ratios_all_train(small_tree):
    kg, report = split(small_tree.kg, (1, 0, 0))
    assert len(kg.valid) == 0 and len(kg.test) == 0
    assert len(kg.train) == len(small_tree.kg.train)
    assert not any(report.violations.values())


def test_split_disjoint_complete_and_deterministic(small_tree):
    kg, report = split(small_tree.kg, (0.8, 0.1, 0.1), seed=4)
    again, _ = split(small_tree.kg, (0.8, 0.1, 0.1), seed=4)
    for kind in TripleKind:
        parts = [set(map(tuple, kg.splits[s][kind].tolist())) for s in ("train", "valid", "test")]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert set.union(*parts) == set(map(tuple, small_tree.kg.train[kind].tolist()))
        for s in ("train", "valid", "test"):
            assert np.array_equal(kg.splits[s][kind], again.splits[s][kind])
    assert report.sizes["valid"]["relational"] == round(0.1 * len(small_tree.kg.train.relational))


def test_split_keeps_entities_in_train(small_tree):
    kg, report = split(small_tree.kg, {"relational": (10, 10)}, seed=0)
    assert report.violations["relational"] == 0
    train_inst = set(kg.train.relational[:, [0, 2]].ravel().tolist()) | set(kg.train.instance_of[:, 0].tolist())
    assert set(kg.test.relational[:, [0, 2]].ravel().tolist()) <= train_inst


def test_split_rejects_bad_ratios(small_tree):
    with pytest.raises(ValueError):
        split(small_tree.kg, (0.5, 0.1, 0.1))
    with pytest.raises(ValueError):
        split(small_tree.kg, {"subClassOf": (100, 100)})


def test_concept_tree_shape():
    tree = make_concept_tree(seed=0)
    kg = tree.kg
    assert (kg.n_concepts, kg.n_instances, kg.n_relations) == (13, 100, 5)
    assert 1200 <= len(kg.train.relational) <= 1600
    # closure: 12 parent edges + 9 grandparent edges; every instance in 3 concepts
    assert len(kg.train.sub_class_of) == 21
    assert len(kg.train.instance_of) == 300
    assert np.array_equal(make_concept_tree(seed=0).kg.train.relational, kg.train.relational)
    no_closure = make_concept_tree(closure=False, seed=0).kg
    assert len(no_closure.train.sub_class_of) == 12 and len(no_closure.train.instance_of) == 100
