"""Refine server: apply one refinement layer to the skeleton.

A layer is two passes: an intra-section pass applying plan directives to
their target nodes (structural kinds first, then additions, then emphasis),
and a cross-section pass that merges redundant sibling sections. Application
is transactional — on any invariant violation the input skeleton is returned
untouched and the call fails.
"""

from __future__ import annotations

import re

from ..errors import ToolFailed
from ..prompts import jaccard
from ..protocol.server import ToolServer
from ..protocol.tools import ok_json
from ..state import (
    MAX_SKELETON_DEPTH,
    Directive,
    ReferenceTree,
    RefinementReport,
    RevisionPlan,
    Skeleton,
    SkeletonNode,
    skeleton_coverage,
    validate_skeleton,
)

HEADING_MERGE_SIMILARITY = 0.9
GROUP_OVERLAP_THRESHOLD = 0.5
_KIND_ORDER = {"split": 0, "merge": 0, "reorder": 0, "add": 1, "emphasize": 2}

_MERGE_FEEDBACK = re.compile(r"\bmerge\s+sections?\s+(\d+)\s*(?:and|with|&|\+)\s*(\d+)", re.I)
_REORDER_FEEDBACK = re.compile(r"\bmove\s+section\s+(\d+)\s+before\s+(?:section\s+)?(\d+)", re.I)


def _sibling_list(skeleton: Skeleton, node_id: str) -> list[SkeletonNode]:
    parent = skeleton.parent_of(node_id)
    return parent.children if parent is not None else skeleton.nodes


def _extend_unique(target: list, values: list) -> None:
    for value in values:
        if value not in target:
            target.append(value)


def _sibling_headings(siblings: list[SkeletonNode]) -> set[str]:
    return {n.heading.strip().casefold() for n in siblings}


def _dedupe_heading(heading: str, taken: set[str]) -> str:
    candidate, n = heading, 1
    while candidate.strip().casefold() in taken:
        n += 1
        candidate = f"{heading} ({n})"
    return candidate


def _absorb(skeleton: Skeleton, earlier: SkeletonNode, later: SkeletonNode) -> None:
    """Merge ``later`` into ``earlier`` and drop it from its sibling list."""
    _extend_unique(earlier.citation_slots, later.citation_slots)
    _extend_unique(earlier.group_refs, later.group_refs)
    _extend_unique(earlier.attached_digests, later.attached_digests)
    if later.intent and later.intent not in earlier.intent:
        earlier.intent = (earlier.intent + " " + later.intent).strip()
    taken = _sibling_headings(earlier.children)
    for child in later.children:
        child.heading = _dedupe_heading(child.heading, taken)
        taken.add(child.heading.strip().casefold())
        earlier.children.append(child)
    siblings = _sibling_list(skeleton, later.node_id)
    siblings.remove(later)


def _apply_merge(skeleton: Skeleton, directive: Directive) -> None:
    target = skeleton.find(directive.target_node_id) if directive.target_node_id else None
    if target is None:
        return
    siblings = _sibling_list(skeleton, target.node_id)
    position = siblings.index(target)
    if position == 0:
        return
    _absorb(skeleton, siblings[position - 1], target)


def _apply_reorder(skeleton: Skeleton, directive: Directive) -> None:
    target = skeleton.find(directive.target_node_id) if directive.target_node_id else None
    if target is None:
        return
    siblings = _sibling_list(skeleton, target.node_id)
    position = siblings.index(target)
    if position == 0:
        return
    siblings.insert(position - 1, siblings.pop(position))


def _apply_split(skeleton: Skeleton, directive: Directive) -> None:
    target = skeleton.find(directive.target_node_id) if directive.target_node_id else None
    if target is None or target.children or len(target.citation_slots) < 2:
        return
    depth = next(d for n, d, _ in skeleton.walk() if n.node_id == target.node_id)
    if depth >= MAX_SKELETON_DEPTH:
        return
    half = (len(target.citation_slots) + 1) // 2
    first, second = target.citation_slots[:half], target.citation_slots[half:]
    target.citation_slots = []
    target.children = [
        SkeletonNode(
            node_id=skeleton.new_node_id(),
            heading=f"{target.heading}: Core Approaches",
            intent=f"The principal lines of work under {target.heading.lower()}.",
            group_refs=list(target.group_refs),
            citation_slots=first,
        ),
        SkeletonNode(
            node_id=skeleton.new_node_id(),
            heading=f"{target.heading}: Further Directions",
            intent=f"Extensions and open threads under {target.heading.lower()}.",
            group_refs=list(target.group_refs),
            citation_slots=second,
        ),
    ]


def _heading_from_text(text: str) -> str:
    words = text.split()
    if words and words[0].lower() in _KIND_ORDER:
        words = words[1:]
    heading = " ".join(words[:8]) or "Additional Coverage"
    return heading[0].upper() + heading[1:]


def _apply_add(skeleton: Skeleton, directive: Directive, tree: ReferenceTree) -> None:
    supporting = [d for d in directive.supporting_doc_ids if d in tree.documents]
    group_refs: list[str] = []
    for doc_id in supporting:
        _extend_unique(group_refs, tree.groups_containing(doc_id))
    node = SkeletonNode(
        node_id=skeleton.new_node_id(),
        heading=_heading_from_text(directive.text),
        intent=directive.text,
        group_refs=group_refs,
        citation_slots=supporting,
    )
    target = skeleton.find(directive.target_node_id) if directive.target_node_id else None
    if target is not None:
        depth = next(d for n, d, _ in skeleton.walk() if n.node_id == target.node_id)
        siblings = target.children if depth < MAX_SKELETON_DEPTH else _sibling_list(skeleton, target.node_id)
    else:
        siblings = skeleton.nodes
    node.heading = _dedupe_heading(node.heading, _sibling_headings(siblings))
    if siblings is skeleton.nodes and siblings and not siblings[-1].group_refs:
        siblings.insert(len(siblings) - 1, node)  # keep the closing section last
    else:
        siblings.append(node)


def _apply_emphasize(skeleton: Skeleton, directive: Directive, tree: ReferenceTree) -> None:
    target = skeleton.find(directive.target_node_id) if directive.target_node_id else None
    if target is None:
        _apply_add(skeleton, directive, tree)
        return
    supporting = [d for d in directive.supporting_doc_ids if d in tree.documents]
    _extend_unique(target.citation_slots, supporting)
    if directive.text:
        sentence = directive.text[0].upper() + directive.text[1:].rstrip(".") + "."
        if sentence not in target.intent:
            target.intent = (target.intent + " " + sentence).strip()


def _apply_feedback(skeleton: Skeleton, feedback: str) -> None:
    """Turn free-text reviewer feedback into structural edits where the intent
    is unambiguous; otherwise record it as a note on the opening section."""
    matched = False
    for match in _MERGE_FEEDBACK.finditer(feedback):
        a, b = sorted(int(g) for g in match.groups())
        if 1 <= a < b <= len(skeleton.nodes):
            _absorb(skeleton, skeleton.nodes[a - 1], skeleton.nodes[b - 1])
            matched = True
    for match in _REORDER_FEEDBACK.finditer(feedback):
        a, b = (int(g) for g in match.groups())
        count = len(skeleton.nodes)
        if 1 <= a <= count and 1 <= b <= count and a != b:
            anchor = skeleton.nodes[b - 1]
            node = skeleton.nodes.pop(a - 1)
            skeleton.nodes.insert(skeleton.nodes.index(anchor), node)
            matched = True
    if not matched and feedback.strip() and skeleton.nodes:
        note = f"Reviewer note: {feedback.strip()}"
        if note not in skeleton.nodes[0].intent:
            skeleton.nodes[0].intent = (skeleton.nodes[0].intent + " " + note).strip()


def _group_overlap(a: list[str], b: list[str]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 0.0


def _cross_section_pass(skeleton: Skeleton) -> bool:
    """Merge redundant siblings (near-identical headings covering the same
    groups); returns True when anything merged."""
    merged_any = False
    changed = True
    while changed:
        changed = False
        sibling_lists = [skeleton.nodes] + [n.children for n, _, _ in skeleton.walk() if n.children]
        for siblings in sibling_lists:
            for i in range(len(siblings)):
                for j in range(i + 1, len(siblings)):
                    a, b = siblings[i], siblings[j]
                    if (jaccard(a.heading, b.heading) >= HEADING_MERGE_SIMILARITY
                            and _group_overlap(a.group_refs, b.group_refs) >= GROUP_OVERLAP_THRESHOLD):
                        _absorb(skeleton, a, b)
                        merged_any = changed = True
                        break
                if changed:
                    break
            if changed:
                break
    return merged_any


def _node_signatures(skeleton: Skeleton) -> dict[str, tuple]:
    signatures = {}
    for node, _, parent in skeleton.walk():
        signatures[node.node_id] = (
            node.heading, node.intent, tuple(node.group_refs),
            tuple(node.citation_slots), tuple(node.attached_digests),
            parent.node_id if parent else None,
        )
    return signatures


def _moved_nodes(before: Skeleton, after: Skeleton) -> set[str]:
    """Surviving nodes whose relative order among surviving nodes changed.

    Pure insertions shift later siblings without counting them as changed;
    genuine reorders mark every displaced node."""
    after_ids = {n.node_id for n, _, _ in after.walk()}
    old_order = [n.node_id for n, _, _ in before.walk() if n.node_id in after_ids]
    before_ids = set(old_order)
    new_order = [n.node_id for n, _, _ in after.walk() if n.node_id in before_ids]
    return {a for a, b in zip(old_order, new_order) if a != b} | \
           {b for a, b in zip(old_order, new_order) if a != b}


def refine_step(skeleton: Skeleton, plan: RevisionPlan | None, tree: ReferenceTree,
                layer_index: int = 1, feedback: str = "") -> tuple[Skeleton, RefinementReport]:
    """One refinement layer. The input skeleton is never mutated."""
    before = skeleton
    working = skeleton.clone()
    directives = list(plan.directives) if plan else []
    directives.sort(key=lambda d: _KIND_ORDER.get(d.kind, 1))  # stable within class

    if feedback:
        _apply_feedback(working, feedback)
    for directive in directives:
        if directive.kind == "merge":
            _apply_merge(working, directive)
        elif directive.kind == "reorder":
            _apply_reorder(working, directive)
        elif directive.kind == "split":
            _apply_split(working, directive)
        elif directive.kind == "add":
            _apply_add(working, directive, tree)
        else:
            _apply_emphasize(working, directive, tree)
    _cross_section_pass(working)

    violations = validate_skeleton(working, tree)
    if violations:
        first = violations[0]
        raise ToolFailed(
            f"refinement layer would violate {first.rule} at node "
            f"{first.node_id or '<root>'}: {first.detail}")
    if not working.cited_doc_ids() >= before.cited_doc_ids():
        lost = sorted(before.cited_doc_ids() - working.cited_doc_ids())
        raise ToolFailed(f"refinement layer would orphan citations: {lost}")

    old_signatures = _node_signatures(before)
    new_signatures = _node_signatures(working)
    moved = _moved_nodes(before, working)
    changed = [nid for nid in new_signatures
               if old_signatures.get(nid) != new_signatures[nid] or nid in moved]
    changed += [nid for nid in old_signatures if nid not in new_signatures]
    order = {nid: i for i, (n, _, _) in enumerate(working.walk()) for nid in [n.node_id]}
    changed.sort(key=lambda nid: (order.get(nid, len(order)), nid))

    if changed:
        working.version = before.version + 1
    corpus_size = len(tree.documents)
    report = RefinementReport(
        layer_index=layer_index,
        skeleton_before_version=before.version,
        skeleton_after_version=working.version,
        coverage_before=skeleton_coverage(before, corpus_size),
        coverage_after=skeleton_coverage(working, corpus_size),
        changed_node_ids=changed,
    )
    return working, report


def build_refine_server() -> ToolServer:
    server = ToolServer("refine")

    @server.tool(
        "step",
        "Apply one refinement layer: plan directives within sections, then a "
        "cross-section redundancy merge. Transactional.",
        {
            "type": "object",
            "required": ["skeleton", "tree"],
            "properties": {
                "skeleton": {"type": "object"},
                "plan": {"type": "object"},
                "tree": {"type": "object"},
                "layer_index": {"type": "integer", "minimum": 1},
                "feedback": {"type": "string"},
            },
        },
    )
    def step(args: dict):
        plan = RevisionPlan.from_dict(args["plan"]) if args.get("plan") else None
        refined, report = refine_step(
            Skeleton.from_dict(args["skeleton"]),
            plan,
            ReferenceTree.from_dict(args["tree"]),
            layer_index=args.get("layer_index", 1),
            feedback=args.get("feedback", ""),
        )
        return ok_json({"skeleton": refined.to_dict(), "report": report.to_dict()})

    return server
