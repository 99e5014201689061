"""Skeleton-init server: build the version-1 section scaffold from the tree."""

from __future__ import annotations

import json

from ..errors import ToolFailed
from ..model import PromptRequest
from ..prompts import SKELETON_INIT
from ..protocol.server import ToolServer
from ..protocol.tools import ok_json
from ..state import ReferenceTree, ResearchBrief, Skeleton, SkeletonNode


def _unique_heading(heading: str, used: set[str]) -> str:
    candidate, n = heading, 1
    while candidate.strip().casefold() in used:
        n += 1
        candidate = f"{heading} ({n})"
    used.add(candidate.strip().casefold())
    return candidate


def initial_skeleton(topic: str, brief: ResearchBrief, tree: ReferenceTree, backend) -> Skeleton:
    """One backend call, then structural repair so the result always satisfies:
    version 1, sibling-unique headings, resolvable group_refs, every group
    referenced somewhere, and no two content sections with the same group set.
    """
    if not tree.groups:
        raise ToolFailed("reference tree has no groups; run grouping first")
    group_payload = [
        {"group_id": g.group_id, "label": g.label, "rationale": g.rationale,
         "size": len(g.member_ids)}
        for g in tree.groups
    ]
    completion = backend.complete(PromptRequest(
        template_id=SKELETON_INIT,
        variables={
            "topic": topic,
            "goals": brief.goals,
            "perspectives": json.dumps(brief.perspectives),
            "groups": json.dumps(group_payload),
        },
    ))
    try:
        drafted = json.loads(completion.text)
        sections = drafted.get("sections") or []
        title = str(drafted.get("title") or f"A Survey of {topic}")
    except json.JSONDecodeError:
        sections, title = [], f"A Survey of {topic}"

    known_groups = tree.group_ids()
    skeleton = Skeleton(title=title, version=1)
    used_headings: set[str] = set()
    used_group_sets: set[frozenset] = set()
    for section in sections:
        heading = str(section.get("heading") or "").strip()
        if not heading:
            continue
        group_refs = [g for g in section.get("group_refs", []) if g in known_groups]
        if group_refs and frozenset(group_refs) in used_group_sets:
            continue  # a section for this exact facet already exists
        if group_refs:
            used_group_sets.add(frozenset(group_refs))
        skeleton.nodes.append(SkeletonNode(
            node_id=skeleton.new_node_id(),
            heading=_unique_heading(heading, used_headings),
            intent=str(section.get("intent") or "").strip(),
            group_refs=group_refs,
        ))

    # Any group the draft missed still deserves a section of its own.
    covered = {g for node in skeleton.nodes for g in node.group_refs}
    trailing = skeleton.nodes.pop() if skeleton.nodes and not skeleton.nodes[-1].group_refs else None
    for group in tree.groups:
        if group.group_id in covered or frozenset([group.group_id]) in used_group_sets:
            continue
        used_group_sets.add(frozenset([group.group_id]))
        skeleton.nodes.append(SkeletonNode(
            node_id=skeleton.new_node_id(),
            heading=_unique_heading(group.label.title(), used_headings),
            intent=f"Review work on {group.label}.",
            group_refs=[group.group_id],
        ))
    if trailing is not None:
        skeleton.nodes.append(trailing)
    if not skeleton.nodes:
        raise ToolFailed("backend produced no usable outline sections")
    return skeleton


def build_skeleton_init_server(backend) -> ToolServer:
    server = ToolServer("skeleton_init")

    @server.tool(
        "init",
        "Construct the initial high-level outline: one scaffold per reference "
        "group, plus framing sections.",
        {
            "type": "object",
            "required": ["topic", "tree"],
            "properties": {
                "topic": {"type": "string", "minLength": 1},
                "brief": {"type": "object"},
                "tree": {"type": "object"},
            },
        },
    )
    def init(args: dict):
        tree = ReferenceTree.from_dict(args["tree"])
        brief = ResearchBrief.from_dict(args.get("brief") or {"topic": args["topic"]})
        skeleton = initial_skeleton(args["topic"], brief, tree, backend)
        return ok_json({"skeleton": skeleton.to_dict()})

    return server
