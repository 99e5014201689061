"""Domain state: hashing, trees, skeleton validation, coverage, checkpoints."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surveyforge.errors import CorruptCheckpoint, DuplicateMembership
from surveyforge.state import (
    CHECKPOINT_SCHEMA,
    Digest,
    Directive,
    ExecutionHistory,
    PipelineState,
    ReferenceDocument,
    ReferenceGroup,
    ResearchBrief,
    RevisionPlan,
    Skeleton,
    SkeletonNode,
    Suggestion,
    build_reference_tree,
    canonical_json,
    content_hash,
    hash_args,
    plan_coverage,
    restore,
    skeleton_coverage,
    snapshot,
    truncate_words,
    validate_skeleton,
)

# --- hashing ----------------------------------------------------------------

def test_content_hash_is_stable_and_input_sensitive():
    a = content_hash("title", "body")
    assert a == content_hash("title", "body")
    assert a != content_hash("title", "body2")
    assert a != content_hash("titleb", "ody")  # boundary must matter


def test_hash_args_ignores_key_order():
    assert hash_args({"a": 1, "b": [2, 3]}) == hash_args({"b": [2, 3], "a": 1})
    assert hash_args({"a": 1}) != hash_args({"a": 2})


def test_canonical_json_sorts_keys():
    assert canonical_json({"b": 1, "a": 2}) == '{"a":2,"b":1}'


def test_truncate_words_caps_at_eighty():
    text = " ".join(f"w{i}" for i in range(200))
    out = truncate_words(text)
    assert len(out.split()) <= 81  # 80 words plus the ellipsis marker
    assert out.split()[:80] == text.split()[:80]
    assert truncate_words("short text") == "short text"


def test_document_identity_follows_content():
    d1 = ReferenceDocument.create(title="T", body="B", source="s1")
    d2 = ReferenceDocument.create(title="T", body="B", source="s2")
    d3 = ReferenceDocument.create(title="T", body="B2", source="s1")
    assert d1.doc_id == d2.doc_id  # source does not change identity
    assert d1.doc_id != d3.doc_id


# --- reference tree ---------------------------------------------------------

def make_docs(n: int) -> list:
    return [ReferenceDocument.create(title=f"Doc {i}", body=f"body {i}", source=f"u{i}")
            for i in range(n)]


def test_tree_collects_ungrouped_docs_under_misc():
    docs = make_docs(3)
    group = ReferenceGroup(group_id="g1", label="theme", rationale="",
                           member_ids=[docs[0].doc_id])
    tree = build_reference_tree("topic", [group], docs)
    misc = [g for g in tree.groups if g.label.lower() in ("misc", "miscellaneous")]
    assert len(misc) == 1
    assert set(misc[0].member_ids) == {docs[1].doc_id, docs[2].doc_id}


def test_tree_rejects_double_membership():
    docs = make_docs(2)
    g1 = ReferenceGroup(group_id="g1", label="a", rationale="", member_ids=[docs[0].doc_id])
    g2 = ReferenceGroup(group_id="g2", label="b", rationale="", member_ids=[docs[0].doc_id])
    with pytest.raises(DuplicateMembership):
        build_reference_tree("topic", [g1, g2], docs)


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(0, 4), min_size=1, max_size=4))
def test_tree_partition_property(sizes):
    """Groups partition the corpus: every doc in exactly one group."""
    total = sum(sizes)
    docs = make_docs(total + 2)  # two extra end up in misc
    groups = []
    cursor = 0
    for i, size in enumerate(sizes):
        members = [d.doc_id for d in docs[cursor:cursor + size]]
        cursor += size
        groups.append(ReferenceGroup(group_id=f"g{i+1}", label=f"l{i+1}",
                                     rationale="", member_ids=members))
    tree = build_reference_tree("topic", groups, docs)
    claimed = [doc_id for g in tree.groups for doc_id in g.member_ids]
    assert sorted(claimed) == sorted(d.doc_id for d in docs)
    assert len(claimed) == len(set(claimed))


# --- skeleton ---------------------------------------------------------------

def sample_tree():
    docs = make_docs(4)
    groups = [
        ReferenceGroup(group_id="g1", label="alpha", rationale="",
                       member_ids=[docs[0].doc_id, docs[1].doc_id]),
        ReferenceGroup(group_id="g2", label="beta", rationale="",
                       member_ids=[docs[2].doc_id, docs[3].doc_id]),
    ]
    return build_reference_tree("topic", groups, docs), docs


def sample_skeleton(docs):
    return Skeleton(title="S", version=1, next_node_seq=5, nodes=[
        SkeletonNode(node_id="n1", heading="Introduction", intent="scope"),
        SkeletonNode(node_id="n2", heading="Alpha", intent="review", group_refs=["g1"],
                     citation_slots=[docs[0].doc_id],
                     children=[SkeletonNode(node_id="n4", heading="Alpha Depth",
                                            intent="", citation_slots=[docs[1].doc_id])]),
        SkeletonNode(node_id="n3", heading="Beta", intent="review", group_refs=["g2"],
                     citation_slots=[docs[2].doc_id]),
    ])


def test_new_node_id_sequences():
    skeleton = Skeleton(title="S")
    assert skeleton.new_node_id() == "n1"
    assert skeleton.new_node_id() == "n2"


def test_walk_is_depth_first_with_parents():
    _, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    walked = [(node.node_id, depth, parent.node_id if parent else None)
              for node, depth, parent in skeleton.walk()]
    assert walked == [("n1", 1, None), ("n2", 1, None), ("n4", 2, "n2"), ("n3", 1, None)]


def test_clone_is_independent():
    _, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    twin = skeleton.clone()
    twin.nodes[0].heading = "Changed"
    twin.nodes[1].citation_slots.append("zzz")
    assert skeleton.nodes[0].heading == "Introduction"
    assert "zzz" not in skeleton.nodes[1].citation_slots


def test_cited_doc_ids_spans_all_depths():
    _, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    assert skeleton.cited_doc_ids() == {docs[0].doc_id, docs[1].doc_id, docs[2].doc_id}


# --- validate_skeleton: targeted mutations against a known-clean base -------

def test_valid_skeleton_has_no_violations():
    tree, docs = sample_tree()
    assert validate_skeleton(sample_skeleton(docs), tree) == []


MUTATIONS = {
    "bad_version": lambda s, d: setattr(s, "version", 0),
    "duplicate_heading": lambda s, d: setattr(s.nodes[2], "heading", "  INTRODUCTION "),
    "duplicate_node_id": lambda s, d: setattr(s.nodes[2], "node_id", "n1"),
    "unresolved_group": lambda s, d: s.nodes[1].group_refs.append("g99"),
    "unresolved_citation": lambda s, d: s.nodes[1].citation_slots.append("f00d"),
    "depth_exceeded": lambda s, d: s.nodes[1].children[0].children.append(
        SkeletonNode(node_id="n9", heading="Deep", intent="",
                     children=[SkeletonNode(node_id="n10", heading="Deeper", intent="")])),
}


@pytest.mark.parametrize("rule", sorted(MUTATIONS))
def test_each_mutation_triggers_exactly_its_rule(rule):
    tree, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    MUTATIONS[rule](skeleton, docs)
    rules = {v.rule for v in validate_skeleton(skeleton, tree)}
    assert rule in rules
    assert rules <= {rule}, f"mutation for {rule} tripped unrelated rules: {rules}"


def test_validator_is_total_and_reports_everything():
    tree, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    for mutate in MUTATIONS.values():
        mutate(skeleton, docs)
    rules = {v.rule for v in validate_skeleton(skeleton, tree)}
    assert rules == set(MUTATIONS)


def test_sibling_heading_clash_ignores_case_and_space():
    tree, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    # same heading at different depths is legal
    skeleton.nodes[1].children[0].heading = "Introduction"
    assert validate_skeleton(skeleton, tree) == []


# --- coverage oracles -------------------------------------------------------

def test_skeleton_coverage_matches_brute_force():
    tree, docs = sample_tree()
    skeleton = sample_skeleton(docs)
    cited = {slot for node, _, _ in skeleton.walk() for slot in node.citation_slots}
    expected = len(cited & {d.doc_id for d in docs}) / len(docs)
    assert skeleton_coverage(skeleton, len(docs)) == pytest.approx(expected)
    assert skeleton_coverage(None, 10) == 0.0
    assert skeleton_coverage(skeleton, 0) == 0.0


def test_plan_coverage_unions_citations_and_directives():
    tree, docs = sample_tree()
    skeleton = sample_skeleton(docs)  # cites docs 0,1,2
    directives = [Directive(kind="add", text="cover the last doc",
                            supporting_doc_ids=[docs[3].doc_id])]
    corpus_ids = {d.doc_id for d in docs}
    assert plan_coverage(directives, skeleton, corpus_ids) == 1.0
    assert plan_coverage([], skeleton, corpus_ids) == pytest.approx(3 / 4)
    assert plan_coverage(directives, None, corpus_ids) == pytest.approx(1 / 4)
    assert plan_coverage(directives, skeleton, set()) == 0.0


@settings(max_examples=50, deadline=None)
@given(cited=st.sets(st.integers(0, 9)), supported=st.sets(st.integers(0, 9)))
def test_plan_coverage_property(cited, supported):
    docs = make_docs(10)
    corpus_ids = {d.doc_id for d in docs}
    skeleton = Skeleton(title="S", nodes=[
        SkeletonNode(node_id="n1", heading="H", intent="",
                     citation_slots=[docs[i].doc_id for i in sorted(cited)])])
    directives = [Directive(kind="emphasize", text="t",
                            supporting_doc_ids=[docs[i].doc_id for i in sorted(supported)])]
    got = plan_coverage(directives, skeleton, corpus_ids)
    assert got == pytest.approx(len(cited | supported) / 10)


# --- history ----------------------------------------------------------------

def test_history_appends_sequence_and_truncates():
    history = ExecutionHistory()
    first = history.append("a", "t.x", "h", "ok", True, 1.0)
    second = history.append("a", "t.y", "h", " ".join(["w"] * 200), False, 2.0)
    assert (first.seq, second.seq) == (1, 2)
    assert len(second.result_summary.split()) <= 81
    assert history.last() is history.entries[-1]


# --- checkpoints ------------------------------------------------------------

def full_state() -> PipelineState:
    tree, docs = sample_tree()
    state = PipelineState(
        stage="skeletonizing",
        brief=ResearchBrief(topic="t", goals="g", perspectives=["p1"]),
        tree=tree,
        skeleton=sample_skeleton(docs),
        digests=[Digest(digest_id="dg-1", doc_id=docs[0].doc_id, summary="s",
                        suggestions=[Suggestion(kind="add", text="x")])],
        plan=RevisionPlan(plan_id="plan-1", coverage_score=0.5, directives=[
            Directive(kind="add", text="d", supporting_doc_ids=[docs[0].doc_id])]),
        dialogue=[{"question": "q", "answer": "a"}],
        pending_feedback="merge sections 2 and 3",
    )
    state.history.append("skeleton", "digest.make", "h", "ok", True, 3.0)
    return state


def test_snapshot_restore_round_trip():
    state = full_state()
    rebuilt = restore(snapshot(state))
    assert rebuilt.to_dict() == state.to_dict()
    # idempotence: snapshotting the rebuilt state changes nothing
    assert snapshot(rebuilt) == snapshot(state)


def test_restore_rejects_bad_schema():
    with pytest.raises(CorruptCheckpoint):
        restore({"schema": CHECKPOINT_SCHEMA + 1, "state": {}})
    with pytest.raises(CorruptCheckpoint):
        restore({"state": {}})
    with pytest.raises(CorruptCheckpoint):
        restore("nope")


def test_state_clone_is_deep():
    state = full_state()
    twin = state.clone()
    twin.skeleton.nodes[0].heading = "Changed"
    twin.digests.append(twin.digests[0])
    twin.history.append("x", "t", "h", "s", True, 9.0)
    assert state.skeleton.nodes[0].heading == "Introduction"
    assert len(state.digests) == 1
    assert len(state.history.entries) == 1


def test_state_derived_metrics():
    state = full_state()
    assert state.corpus_size() == 4
    assert state.coverage() == pytest.approx(3 / 4)
    assert state.refine_layers_run() == 0
    assert state.last_layer_gain() is None
