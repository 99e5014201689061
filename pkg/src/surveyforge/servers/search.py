"""Search server: query generation, retrieval, crawling, similarity filtering."""

from __future__ import annotations

import json

from ..errors import RetrieverUnavailable
from ..model import PromptRequest, similarity
from ..prompts import SEARCH_QUERIES
from ..protocol.server import ToolServer
from ..protocol.tools import ok_json
from ..retrieval import FixtureIndex
from ..state import ReferenceDocument

DEFAULT_RESULT_LIMIT = 12
DEFAULT_FILTER_THRESHOLD = 0.02
MIN_QUERIES, MAX_QUERIES = 3, 10

_DOC_SCHEMA = {
    "type": "object",
    "required": ["doc_id", "title", "body"],
    "properties": {
        "doc_id": {"type": "string"},
        "title": {"type": "string"},
        "body": {"type": "string"},
    },
}


def _parse_query_list(text: str) -> list[str]:
    """Backend answers a JSON list; tolerate plain one-per-line output."""
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError:
        parsed = [line.strip("-* \t") for line in text.splitlines()]
    if not isinstance(parsed, list):
        return []
    return [q.strip() for q in parsed if isinstance(q, str) and q.strip()]


def build_search_server(backend, index: FixtureIndex | None) -> ToolServer:
    server = ToolServer("search")

    @server.tool(
        "generate_queries",
        "Generate 3-10 distinct literature-search queries for a topic, widening "
        "coverage with dialogue-derived perspectives.",
        {
            "type": "object",
            "required": ["topic"],
            "properties": {
                "topic": {"type": "string", "minLength": 1},
                "dialogue": {
                    "type": "array",
                    "items": {"type": "object", "properties": {
                        "role": {"type": "string"}, "text": {"type": "string"}}},
                },
                "perspectives": {"type": "array", "items": {"type": "string"}},
                "max_queries": {"type": "integer", "minimum": MIN_QUERIES, "maximum": MAX_QUERIES},
            },
        },
    )
    def generate_queries(args: dict):
        topic = args["topic"]
        perspectives = list(args.get("perspectives", []))
        for turn in args.get("dialogue", []):
            text = (turn.get("text") or "").strip()
            if turn.get("role") == "user" and text and text not in perspectives:
                perspectives.append(text)
        completion = backend.complete(PromptRequest(
            template_id=SEARCH_QUERIES,
            variables={"topic": topic, "perspectives": json.dumps(perspectives)},
        ))
        queries: list[str] = []
        for query in _parse_query_list(completion.text):
            if query not in queries:
                queries.append(query)
        if not any(topic in q for q in queries):
            queries.insert(0, topic)
        for filler in (f"{topic} survey", f"{topic} overview", f"{topic} review"):
            if len(queries) >= MIN_QUERIES:
                break
            if filler not in queries:
                queries.append(filler)
        return ok_json({"queries": queries[: args.get("max_queries", MAX_QUERIES)]})

    @server.tool(
        "retrieve",
        "Search the configured index and return ranked result stubs (not yet fetched).",
        {
            "type": "object",
            "required": ["query"],
            "properties": {
                "query": {"type": "string"},
                "limit": {"type": "integer", "minimum": 0},
            },
        },
    )
    def retrieve(args: dict):
        if index is None:
            raise RetrieverUnavailable("retriever unavailable: no index configured")
        hits = index.search(args["query"], limit=args.get("limit", DEFAULT_RESULT_LIMIT))
        return ok_json({"results": [h.to_dict() for h in hits]})

    @server.tool(
        "crawl",
        "Fetch one result URL and return the cleaned document with its stable doc_id.",
        {
            "type": "object",
            "required": ["url"],
            "properties": {
                "url": {"type": "string"},
                "query": {"type": "string"},
            },
        },
    )
    def crawl(args: dict):
        if index is None:
            raise RetrieverUnavailable("retriever unavailable: no index configured")
        document = index.fetch(args["url"], retrieved_query=args.get("query"))
        return ok_json({"document": document.to_dict()})

    @server.tool(
        "similarity_filter",
        "Rank documents by topical similarity and drop those below the threshold.",
        {
            "type": "object",
            "required": ["documents", "topic"],
            "properties": {
                "documents": {"type": "array", "items": _DOC_SCHEMA},
                "topic": {"type": "string", "minLength": 1},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    )
    def similarity_filter(args: dict):
        threshold = args.get("threshold", DEFAULT_FILTER_THRESHOLD)
        scored = []
        for doc in args["documents"]:
            document = ReferenceDocument.from_dict(doc)
            score = similarity(args["topic"], document.title + " " + document.body)
            scored.append((-score, document.doc_id, doc))
        scored.sort(key=lambda item: (item[0], item[1]))
        kept, dropped, scores = [], [], {}
        for neg_score, doc_id, doc in scored:
            scores[doc_id] = -neg_score
            if -neg_score >= threshold:
                kept.append(doc)
            else:
                dropped.append(doc_id)
        return ok_json({"documents": kept, "scores": scores, "dropped": dropped})

    return server
