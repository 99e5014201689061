"""Offline retrieval index: ranking, fetching, loading."""

from __future__ import annotations

import json

import pytest

from surveyforge.errors import FetchFailed, RetrieverUnavailable
from surveyforge.model import similarity
from surveyforge.retrieval import (
    MAX_SNIPPET_CHARS,
    FixtureIndex,
    load_fixture_index,
)


def test_packaged_corpus_shape(fixture_index):
    assert len(fixture_index.entries) == 12
    for entry in fixture_index.entries:
        assert entry["url"].startswith("https://")
        assert len(entry["snippet"]) <= MAX_SNIPPET_CHARS
        assert entry["title"] and entry["body"]


def test_search_ranking_matches_brute_force(fixture_index):
    """Rank by similarity(query, title+snippet) descending, ties by doc_id."""
    query = "retrieval augmented generation knowledge"
    expected = sorted(
        ((entry["doc_id"], entry["url"],
          similarity(query, entry["title"] + " " + entry["snippet"]))
         for entry in fixture_index.entries),
        key=lambda triple: (-triple[2], triple[0]))
    expected_urls = [url for _, url, score in expected if score > 0][:3]
    hits = fixture_index.search(query, limit=3)
    assert [h.url for h in hits] == expected_urls
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_search_degenerate_inputs(fixture_index):
    assert fixture_index.search("anything", limit=0) == []
    assert fixture_index.search("   ", limit=5) == []
    assert fixture_index.search("qqqq zzzz wwww", limit=5) == []


def test_search_is_a_pure_function(fixture_index):
    first = [(h.url, h.score) for h in fixture_index.search("language model", limit=12)]
    second = [(h.url, h.score) for h in fixture_index.search("language model", limit=12)]
    assert first == second and len(first) == 12


def test_fetch_builds_stable_documents(fixture_index):
    entry = fixture_index.entries[0]
    doc1 = fixture_index.fetch(entry["url"])
    doc2 = fixture_index.fetch(entry["url"])
    assert doc1.doc_id == doc2.doc_id
    assert doc1.title == entry["title"]
    assert doc1.body == entry["body"]
    assert doc1.source == entry["url"]


def test_fetch_unknown_url_fails(fixture_index):
    with pytest.raises(FetchFailed):
        fixture_index.fetch("https://refs.example/not-a-page")


def test_load_from_env_path(tmp_path, monkeypatch):
    custom = {"documents": [{"url": "https://x.test/1", "title": "Custom Doc",
                             "snippet": "custom snippet", "body": "custom body"}]}
    path = tmp_path / "index.json"
    path.write_text(json.dumps(custom))
    monkeypatch.setenv("SF_FIXTURE_INDEX", str(path))
    index = load_fixture_index()
    assert len(index.entries) == 1
    assert index.entries[0]["title"] == "Custom Doc"


def test_load_reports_unreadable_index(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{nope")
    with pytest.raises(RetrieverUnavailable):
        load_fixture_index(str(bad))


def test_snippets_are_clipped():
    index = FixtureIndex(entries=[{"url": "https://x.test/1", "title": "T",
                                   "snippet": "s" * 1000, "body": "b"}])
    assert len(index.entries[0]["snippet"]) == MAX_SNIPPET_CHARS
