"""Domain data model shared by agents and servers.

Reference corpus, grouped reference tree, skeleton, digests, revision plans,
execution history, and whole-pipeline snapshots. Everything here serializes
to plain JSON and back losslessly; snapshots are the unit of crash recovery.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, asdict
from typing import Any, Iterator, Optional

from surveyforge.errors import CorruptCheckpoint, DuplicateMembership

CHECKPOINT_SCHEMA = 1
MISC_GROUP_ID = "misc"
MAX_SKELETON_DEPTH = 3
RESULT_SUMMARY_WORD_CAP = 80

STAGES = ("consensus", "analysis", "skeletonizing", "writing", "done")


def canonical_json(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def content_hash(*parts: str) -> str:
    normalized = "\x00".join(re.sub(r"\s+", " ", p).strip().lower() for p in parts)
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def hash_args(args: Any) -> str:
    return hashlib.sha256(canonical_json(args).encode("utf-8")).hexdigest()[:16]


def truncate_words(text: str, cap: int = RESULT_SUMMARY_WORD_CAP) -> str:
    words = text.split()
    if len(words) <= cap:
        return text.strip()
    return " ".join(words[:cap]) + " …"


# --- corpus and tree --------------------------------------------------------

@dataclass
class ReferenceDocument:
    """One reference: retrieved from a search round or uploaded by the user.

    ``doc_id`` is derived from (title, body), so the same document retrieved
    twice across search rounds deduplicates to one id.
    """

    doc_id: str
    title: str
    body: str
    source: str
    retrieved_query: Optional[str] = None

    @classmethod
    def create(cls, title: str, body: str, source: str,
               retrieved_query: Optional[str] = None) -> "ReferenceDocument":
        if not body.strip():
            raise ValueError("document body must be non-empty")
        return cls(doc_id=content_hash(title, body), title=title, body=body,
                   source=source, retrieved_query=retrieved_query)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ReferenceDocument":
        return cls(**obj)


@dataclass
class ReferenceGroup:
    group_id: str
    label: str
    member_ids: list[str]
    rationale: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ReferenceGroup":
        return cls(**obj)


@dataclass
class ReferenceTree:
    """Grouped reference corpus: the backbone all downstream stages read.

    Root is the topic; each group is a node; documents are the leaves. Every
    corpus document is reachable through exactly one group.
    """

    topic: str
    groups: list[ReferenceGroup]
    documents: dict[str, ReferenceDocument]

    def doc_ids(self) -> set[str]:
        return set(self.documents)

    def group_ids(self) -> set[str]:
        return {g.group_id for g in self.groups}

    def group(self, group_id: str) -> Optional[ReferenceGroup]:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        return None

    def groups_containing(self, doc_id: str) -> list[str]:
        return [g.group_id for g in self.groups if doc_id in g.member_ids]

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "groups": [g.to_dict() for g in self.groups],
            "documents": {k: d.to_dict() for k, d in sorted(self.documents.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ReferenceTree":
        return cls(
            topic=obj["topic"],
            groups=[ReferenceGroup.from_dict(g) for g in obj["groups"]],
            documents={k: ReferenceDocument.from_dict(d) for k, d in obj["documents"].items()},
        )


def build_reference_tree(topic: str, groups: list[ReferenceGroup],
                         corpus: list[ReferenceDocument]) -> ReferenceTree:
    """Assemble the tree: one node per group, ungrouped docs under ``misc``.

    Raises DuplicateMembership when a document is claimed by two groups.
    """
    documents = {d.doc_id: d for d in corpus}
    claimed: dict[str, str] = {}
    for group in groups:
        for doc_id in group.member_ids:
            if doc_id not in documents:
                raise DuplicateMembership(
                    f"group {group.group_id!r} references unknown document {doc_id!r}")
            if doc_id in claimed:
                raise DuplicateMembership(
                    f"document {doc_id!r} is in both {claimed[doc_id]!r} and {group.group_id!r}")
            claimed[doc_id] = group.group_id
    final_groups = [ReferenceGroup.from_dict(g.to_dict()) for g in groups]
    ungrouped = [d for d in sorted(documents) if d not in claimed]
    if ungrouped:
        final_groups.append(ReferenceGroup(
            group_id=MISC_GROUP_ID,
            label="miscellaneous",
            member_ids=ungrouped,
            rationale="documents not claimed by any topical group",
        ))
    return ReferenceTree(topic=topic, groups=final_groups, documents=documents)


# --- skeleton ---------------------------------------------------------------

@dataclass
class SkeletonNode:
    node_id: str
    heading: str
    intent: str = ""
    group_refs: list[str] = field(default_factory=list)
    citation_slots: list[str] = field(default_factory=list)
    attached_digests: list[str] = field(default_factory=list)
    children: list["SkeletonNode"] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "heading": self.heading,
            "intent": self.intent,
            "group_refs": list(self.group_refs),
            "citation_slots": list(self.citation_slots),
            "attached_digests": list(self.attached_digests),
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SkeletonNode":
        return cls(
            node_id=obj["node_id"],
            heading=obj["heading"],
            intent=obj.get("intent", ""),
            group_refs=list(obj.get("group_refs", [])),
            citation_slots=list(obj.get("citation_slots", [])),
            attached_digests=list(obj.get("attached_digests", [])),
            children=[cls.from_dict(c) for c in obj.get("children", [])],
        )


@dataclass
class Skeleton:
    """Hierarchical outline of the survey; versions increase on every mutation."""

    title: str
    nodes: list[SkeletonNode] = field(default_factory=list)
    version: int = 1
    next_node_seq: int = 1

    def new_node_id(self) -> str:
        node_id = f"n{self.next_node_seq}"
        self.next_node_seq += 1
        return node_id

    def walk(self) -> Iterator[tuple[SkeletonNode, int, Optional[SkeletonNode]]]:
        """Depth-first (node, depth, parent) triples, document order."""

        def rec(nodes: list[SkeletonNode], depth: int, parent: Optional[SkeletonNode]):
            for node in nodes:
                yield node, depth, parent
                yield from rec(node.children, depth + 1, node)

        yield from rec(self.nodes, 1, None)

    def find(self, node_id: str) -> Optional[SkeletonNode]:
        for node, _, _ in self.walk():
            if node.node_id == node_id:
                return node
        return None

    def parent_of(self, node_id: str) -> Optional[SkeletonNode]:
        for node, _, parent in self.walk():
            if node.node_id == node_id:
                return parent
        return None

    def cited_doc_ids(self) -> set[str]:
        cited: set[str] = set()
        for node, _, _ in self.walk():
            cited.update(node.citation_slots)
        return cited

    def section_headings(self) -> list[str]:
        return [n.heading for n in self.nodes]

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "nodes": [n.to_dict() for n in self.nodes],
            "version": self.version,
            "next_node_seq": self.next_node_seq,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Skeleton":
        return cls(
            title=obj["title"],
            nodes=[SkeletonNode.from_dict(n) for n in obj.get("nodes", [])],
            version=obj.get("version", 1),
            next_node_seq=obj.get("next_node_seq", 1),
        )

    def clone(self) -> "Skeleton":
        return Skeleton.from_dict(self.to_dict())


@dataclass(frozen=True)
class Violation:
    node_id: str
    rule: str
    detail: str = ""


def validate_skeleton(skeleton: Skeleton, tree: ReferenceTree) -> list[Violation]:
    """All skeleton invariant violations against the tree; empty means valid.

    Total function: never raises, reports everything it finds.
    """
    violations: list[Violation] = []
    if skeleton.version < 1:
        violations.append(Violation("", "bad_version", f"version {skeleton.version} < 1"))

    seen_ids: set[str] = set()
    known_groups = tree.group_ids()
    known_docs = tree.doc_ids()

    def check_siblings(nodes: list[SkeletonNode], depth: int) -> None:
        headings: dict[str, str] = {}
        for node in nodes:
            key = node.heading.strip().casefold()
            if key in headings:
                violations.append(Violation(node.node_id, "duplicate_heading",
                                            f"{node.heading!r} repeats sibling {headings[key]}"))
            else:
                headings[key] = node.node_id
            if node.node_id in seen_ids:
                violations.append(Violation(node.node_id, "duplicate_node_id", ""))
            seen_ids.add(node.node_id)
            if depth > MAX_SKELETON_DEPTH:
                violations.append(Violation(node.node_id, "depth_exceeded",
                                            f"depth {depth} > {MAX_SKELETON_DEPTH}"))
            for group_ref in node.group_refs:
                if group_ref not in known_groups:
                    violations.append(Violation(node.node_id, "unresolved_group", group_ref))
            for doc_id in node.citation_slots:
                if doc_id not in known_docs:
                    violations.append(Violation(node.node_id, "unresolved_citation", doc_id))
            check_siblings(node.children, depth + 1)

    check_siblings(skeleton.nodes, 1)
    return violations


def skeleton_coverage(skeleton: Optional[Skeleton], corpus_size: int) -> float:
    """Fraction of corpus documents sitting in some citation slot."""
    if skeleton is None or corpus_size == 0:
        return 0.0
    return len(skeleton.cited_doc_ids()) / corpus_size


# --- digests and revision plans ---------------------------------------------

SUGGESTION_KINDS = ("add", "merge", "split", "reorder", "emphasize")


@dataclass
class Suggestion:
    kind: str
    text: str
    target_node_id: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "Suggestion":
        return cls(kind=obj["kind"], text=obj["text"], target_node_id=obj.get("target_node_id"))


@dataclass
class Digest:
    """Per-document summary plus outline-improvement suggestions."""

    digest_id: str
    doc_id: str
    summary: str
    suggestions: list[Suggestion]

    def to_dict(self) -> dict:
        return {
            "digest_id": self.digest_id,
            "doc_id": self.doc_id,
            "summary": self.summary,
            "suggestions": [s.to_dict() for s in self.suggestions],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Digest":
        return cls(
            digest_id=obj["digest_id"],
            doc_id=obj["doc_id"],
            summary=obj["summary"],
            suggestions=[Suggestion.from_dict(s) for s in obj["suggestions"]],
        )


@dataclass
class Directive:
    kind: str
    text: str
    supporting_doc_ids: list[str]
    target_node_id: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "Directive":
        return cls(kind=obj["kind"], text=obj["text"],
                   supporting_doc_ids=list(obj["supporting_doc_ids"]),
                   target_node_id=obj.get("target_node_id"))


@dataclass
class RevisionPlan:
    """Consolidated, deduplicated outline feedback distilled from all digests."""

    plan_id: str
    directives: list[Directive]
    coverage_score: float

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "directives": [d.to_dict() for d in self.directives],
            "coverage_score": self.coverage_score,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RevisionPlan":
        return cls(plan_id=obj["plan_id"],
                   directives=[Directive.from_dict(d) for d in obj["directives"]],
                   coverage_score=obj["coverage_score"])


def plan_coverage(directives: list[Directive], skeleton: Optional[Skeleton],
                  corpus_ids: set[str]) -> float:
    """Fraction of corpus referenced by a directive or a citation slot."""
    if not corpus_ids:
        return 0.0
    referenced: set[str] = set()
    for directive in directives:
        referenced.update(directive.supporting_doc_ids)
    if skeleton is not None:
        referenced.update(skeleton.cited_doc_ids())
    return len(referenced & corpus_ids) / len(corpus_ids)


# --- refinement reports -----------------------------------------------------

@dataclass
class RefinementReport:
    """Per-layer outcome of the intra-then-cross-section refinement pass."""

    layer_index: int
    skeleton_before_version: int
    skeleton_after_version: int
    coverage_before: float
    coverage_after: float
    changed_node_ids: list[str]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RefinementReport":
        return cls(**obj)


# --- execution history ------------------------------------------------------

@dataclass(frozen=True)
class HistoryEntry:
    seq: int
    agent_id: str
    tool_name: str
    args_hash: str
    result_summary: str
    ok: bool
    timestamp: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "HistoryEntry":
        return cls(**obj)


@dataclass
class ExecutionHistory:
    """Append-only record of every tool invocation; the planner's memory."""

    entries: list[HistoryEntry] = field(default_factory=list)

    def append(self, agent_id: str, tool_name: str, args_hash: str,
               result_summary: str, ok: bool, timestamp: float) -> HistoryEntry:
        entry = HistoryEntry(
            seq=len(self.entries) + 1,
            agent_id=agent_id,
            tool_name=tool_name,
            args_hash=args_hash,
            result_summary=truncate_words(result_summary),
            ok=ok,
            timestamp=timestamp,
        )
        self.entries.append(entry)
        return entry

    def last(self) -> Optional[HistoryEntry]:
        return self.entries[-1] if self.entries else None

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, obj: dict) -> "ExecutionHistory":
        return cls(entries=[HistoryEntry.from_dict(e) for e in obj.get("entries", [])])


# --- research brief and pipeline state --------------------------------------

@dataclass
class ResearchBrief:
    topic: str
    goals: str = ""
    perspectives: list[str] = field(default_factory=list)
    search_strategy: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ResearchBrief":
        return cls(topic=obj["topic"], goals=obj.get("goals", ""),
                   perspectives=list(obj.get("perspectives", [])),
                   search_strategy=obj.get("search_strategy", ""))


@dataclass
class PipelineState:
    """Everything one survey session knows; the planner's context."""

    stage: str = "consensus"
    brief: Optional[ResearchBrief] = None
    tree: Optional[ReferenceTree] = None
    skeleton: Optional[Skeleton] = None
    digests: list[Digest] = field(default_factory=list)
    plan: Optional[RevisionPlan] = None
    reports: list[RefinementReport] = field(default_factory=list)
    history: ExecutionHistory = field(default_factory=ExecutionHistory)
    dialogue: list[dict] = field(default_factory=list)
    pending_feedback: str = ""
    survey: Optional[str] = None

    def corpus_size(self) -> int:
        return len(self.tree.documents) if self.tree else 0

    def coverage(self) -> float:
        return skeleton_coverage(self.skeleton, self.corpus_size())

    def last_layer_gain(self) -> Optional[float]:
        if not self.reports:
            return None
        last = self.reports[-1]
        return last.coverage_after - last.coverage_before

    def refine_layers_run(self) -> int:
        return len(self.reports)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "brief": self.brief.to_dict() if self.brief else None,
            "tree": self.tree.to_dict() if self.tree else None,
            "skeleton": self.skeleton.to_dict() if self.skeleton else None,
            "digests": [d.to_dict() for d in self.digests],
            "plan": self.plan.to_dict() if self.plan else None,
            "reports": [r.to_dict() for r in self.reports],
            "history": self.history.to_dict(),
            "dialogue": [dict(t) for t in self.dialogue],
            "pending_feedback": self.pending_feedback,
            "survey": self.survey,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineState":
        return cls(
            stage=obj.get("stage", "consensus"),
            brief=ResearchBrief.from_dict(obj["brief"]) if obj.get("brief") else None,
            tree=ReferenceTree.from_dict(obj["tree"]) if obj.get("tree") else None,
            skeleton=Skeleton.from_dict(obj["skeleton"]) if obj.get("skeleton") else None,
            digests=[Digest.from_dict(d) for d in obj.get("digests", [])],
            plan=RevisionPlan.from_dict(obj["plan"]) if obj.get("plan") else None,
            reports=[RefinementReport.from_dict(r) for r in obj.get("reports", [])],
            history=ExecutionHistory.from_dict(obj.get("history", {})),
            dialogue=[dict(t) for t in obj.get("dialogue", [])],
            pending_feedback=obj.get("pending_feedback", ""),
            survey=obj.get("survey"),
        )

    def clone(self) -> "PipelineState":
        return PipelineState.from_dict(self.to_dict())


def snapshot(state: PipelineState) -> dict:
    """Versioned checkpoint document for one pipeline state."""
    return {"schema": CHECKPOINT_SCHEMA, "state": state.to_dict()}


def restore(checkpoint: dict) -> PipelineState:
    """Rebuild a PipelineState; CorruptCheckpoint on any schema mismatch."""
    if not isinstance(checkpoint, dict) or "schema" not in checkpoint:
        raise CorruptCheckpoint("not a checkpoint document")
    if checkpoint["schema"] != CHECKPOINT_SCHEMA:
        raise CorruptCheckpoint(
            f"checkpoint schema {checkpoint['schema']!r} != supported {CHECKPOINT_SCHEMA}")
    try:
        return PipelineState.from_dict(checkpoint["state"])
    except (KeyError, TypeError, AttributeError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint body: {exc}") from exc
