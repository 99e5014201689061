"""Digest server: per-document digests and their consolidation into one plan."""

from __future__ import annotations

import json

from ..errors import ToolFailed
from ..model import PromptRequest, similarity
from ..prompts import DIGEST_SUMMARIZE
from ..protocol.server import ToolServer
from ..protocol.tools import ok_json
from ..state import (
    Digest,
    Directive,
    ReferenceDocument,
    RevisionPlan,
    Skeleton,
    Suggestion,
    SUGGESTION_KINDS,
    canonical_json,
    content_hash,
    plan_coverage,
    truncate_words,
)

SUMMARY_WORD_CAP = 150
DUPLICATE_TEXT_SIMILARITY = 0.9


def make_digest(document: ReferenceDocument, skeleton: Skeleton, backend) -> Digest:
    if not document.body.strip():
        raise ToolFailed(f"document {document.doc_id} has an empty body")
    sections = [
        {"node_id": node.node_id, "heading": node.heading, "intent": node.intent}
        for node, _, _ in skeleton.walk()
    ]
    completion = backend.complete(PromptRequest(
        template_id=DIGEST_SUMMARIZE,
        variables={
            "doc_id": document.doc_id,
            "title": document.title,
            "body": document.body,
            "survey_title": skeleton.title,
            "sections": json.dumps(sections),
        },
    ))
    try:
        drafted = json.loads(completion.text)
    except json.JSONDecodeError:
        drafted = {}
    summary = truncate_words(str(drafted.get("summary") or "").strip(), SUMMARY_WORD_CAP)
    if not summary:
        summary = truncate_words(f"{document.title}: {document.body}", SUMMARY_WORD_CAP)

    known_nodes = {node.node_id for node, _, _ in skeleton.walk()}
    suggestions: list[Suggestion] = []
    for raw in drafted.get("suggestions") or []:
        text = str(raw.get("text") or "").strip()
        if not text:
            continue
        kind = raw.get("kind") if raw.get("kind") in SUGGESTION_KINDS else "add"
        target = raw.get("target_node_id")
        if target is not None and target not in known_nodes:
            target = None
        suggestions.append(Suggestion(kind=kind, text=text, target_node_id=target))
    if not suggestions:
        suggestions.append(Suggestion(
            kind="add", text=f"add coverage of {document.title}", target_node_id=None))
    return Digest(
        digest_id=f"dg-{document.doc_id[:10]}",
        doc_id=document.doc_id,
        summary=summary,
        suggestions=suggestions,
    )


def _normalized(text: str) -> str:
    return " ".join(text.lower().split())


def _is_duplicate(d: Directive, kind: str, target, text: str) -> bool:
    return (
        d.kind == kind
        and d.target_node_id == target
        and similarity(_normalized(d.text), _normalized(text)) >= DUPLICATE_TEXT_SIMILARITY
    )


def consolidate_digests(digests: list[Digest], skeleton: Skeleton,
                        corpus_ids: set[str] | None = None) -> RevisionPlan:
    """Merge all digest suggestions into a deduplicated directive list.

    Two suggestions merge when they share kind and target and their normalized
    texts are near-identical; supporters accumulate on the surviving directive.
    """
    if not digests:
        raise ToolFailed("need at least one digest to consolidate")
    directives: list[Directive] = []
    for digest in digests:
        for suggestion in digest.suggestions:
            match = next(
                (d for d in directives
                 if _is_duplicate(d, suggestion.kind, suggestion.target_node_id, suggestion.text)),
                None,
            )
            if match is None:
                directives.append(Directive(
                    kind=suggestion.kind,
                    text=suggestion.text,
                    supporting_doc_ids=[digest.doc_id],
                    target_node_id=suggestion.target_node_id,
                ))
            elif digest.doc_id not in match.supporting_doc_ids:
                match.supporting_doc_ids.append(digest.doc_id)
    if corpus_ids is None:
        corpus_ids = {d.doc_id for d in digests}
    plan_id = "plan-" + content_hash(canonical_json([d.to_dict() for d in directives]))[:10]
    return RevisionPlan(
        plan_id=plan_id,
        directives=directives,
        coverage_score=plan_coverage(directives, skeleton, corpus_ids),
    )


def build_digest_server(backend) -> ToolServer:
    server = ToolServer("digest")

    @server.tool(
        "make",
        "Summarize one reference document and suggest outline changes that "
        "accommodate it.",
        {
            "type": "object",
            "required": ["document", "skeleton"],
            "properties": {
                "document": {"type": "object", "required": ["doc_id", "title", "body"]},
                "skeleton": {"type": "object"},
            },
        },
    )
    def make(args: dict):
        digest = make_digest(
            ReferenceDocument.from_dict(args["document"]),
            Skeleton.from_dict(args["skeleton"]),
            backend,
        )
        return ok_json({"digest": digest.to_dict()})

    @server.tool(
        "consolidate",
        "Merge all digests into one deduplicated revision plan with a corpus "
        "coverage score.",
        {
            "type": "object",
            "required": ["digests", "skeleton"],
            "properties": {
                "digests": {"type": "array", "minItems": 1, "items": {"type": "object"}},
                "skeleton": {"type": "object"},
                "corpus_doc_ids": {"type": "array", "items": {"type": "string"}},
            },
        },
    )
    def consolidate(args: dict):
        corpus_ids = set(args["corpus_doc_ids"]) if "corpus_doc_ids" in args else None
        plan = consolidate_digests(
            [Digest.from_dict(d) for d in args["digests"]],
            Skeleton.from_dict(args["skeleton"]),
            corpus_ids,
        )
        return ok_json({"plan": plan.to_dict()})

    return server
