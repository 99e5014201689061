"""Offline document retrieval over a fixture index.

The search server needs a retriever; in scripted/headless runs that retriever
is this module: a JSON corpus of documents ranked by token similarity. A live
web retriever would plug in behind the same two methods (search, fetch).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .errors import FetchFailed, RetrieverUnavailable
from .model import similarity
from .state import ReferenceDocument, content_hash

ENV_FIXTURE_INDEX = "SF_FIXTURE_INDEX"
MAX_SNIPPET_CHARS = 500


@dataclass
class SearchHit:
    url: str
    title: str
    snippet: str
    fetched: bool = False
    score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "title": self.title,
            "snippet": self.snippet,
            "fetched": self.fetched,
            "score": self.score,
        }


@dataclass
class FixtureIndex:
    """In-memory retrieval index over a fixed document set.

    Ranking is a pure function of (index contents, query, limit): similarity
    of the query against title+snippet, descending, ties broken by doc_id.
    """

    entries: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        for entry in self.entries:
            if len(entry["snippet"]) > MAX_SNIPPET_CHARS:
                entry["snippet"] = entry["snippet"][:MAX_SNIPPET_CHARS]
            entry.setdefault("doc_id", content_hash(entry["title"], entry["body"]))
        self._by_url = {e["url"]: e for e in self.entries}

    def search(self, query: str, limit: int = 12) -> list[SearchHit]:
        if limit <= 0 or not query.strip():
            return []
        scored = []
        for entry in self.entries:
            score = similarity(query, entry["title"] + " " + entry["snippet"])
            if score > 0:
                scored.append((-score, entry["doc_id"], entry))
        scored.sort()
        return [
            SearchHit(url=e["url"], title=e["title"], snippet=e["snippet"], score=-neg)
            for neg, _, e in scored[:limit]
        ]

    def fetch(self, url: str, retrieved_query: Optional[str] = None) -> ReferenceDocument:
        entry = self._by_url.get(url)
        if entry is None:
            raise FetchFailed(f"no document at {url}")
        return ReferenceDocument.create(
            title=entry["title"], body=entry["body"], source=url,
            retrieved_query=retrieved_query,
        )


def _packaged_corpus_text() -> str:
    return resources.files("surveyforge").joinpath("fixtures/corpus.json").read_text("utf-8")


def load_fixture_index(path: Optional[str] = None) -> FixtureIndex:
    """Load the index from an explicit path, $SF_FIXTURE_INDEX, or the packaged corpus."""
    path = path or os.environ.get(ENV_FIXTURE_INDEX)
    try:
        if path:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        else:
            payload = json.loads(_packaged_corpus_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RetrieverUnavailable(f"cannot load fixture index: {exc}") from exc
    documents = payload["documents"] if isinstance(payload, dict) else payload
    return FixtureIndex(entries=[dict(d) for d in documents])
