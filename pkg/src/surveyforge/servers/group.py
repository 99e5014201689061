"""Group server: cluster the reference corpus into labeled topical groups."""

from __future__ import annotations

import json

from ..errors import ToolFailed
from ..model import PromptRequest, similarity
from ..prompts import GROUP_LABEL
from ..protocol.server import ToolServer
from ..protocol.tools import ok_json

DEFAULT_LINK_THRESHOLD = 0.18


def _doc_text(doc: dict) -> str:
    return doc["title"] + " " + doc["body"]


def cluster_indices(texts: list[str], link_threshold: float,
                    target_groups: int | None = None) -> list[list[int]]:
    """Average-linkage agglomerative clustering over pairwise similarity.

    Returns clusters as lists of input indices, ordered by first member.
    Merging stops when the best linkage drops below the threshold, unless a
    target count still has to be reached.
    """
    n = len(texts)
    sim = [[0.0] * n for _ in range(n)]
    for i in range(n):
        sim[i][i] = 1.0
        for j in range(i + 1, n):
            sim[i][j] = sim[j][i] = similarity(texts[i], texts[j])

    clusters: list[list[int]] = [[i] for i in range(n)]

    def best_pair() -> tuple[float, int, int]:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                pairs = [(a, b) for a in clusters[i] for b in clusters[j]]
                linkage = sum(sim[a][b] for a, b in pairs) / len(pairs)
                if best is None or linkage > best[0]:
                    best = (linkage, i, j)
        return best

    if target_groups is not None:
        # Forced count: merge the closest pair until the target is reached.
        while len(clusters) > max(1, min(target_groups, n)):
            _, i, j = best_pair()
            clusters[i] = clusters[i] + clusters[j]
            del clusters[j]
    else:
        while len(clusters) > 1:
            linkage, i, j = best_pair()
            if linkage < link_threshold:
                break
            clusters[i] = clusters[i] + clusters[j]
            del clusters[j]
    clusters.sort(key=lambda c: min(c))
    return [sorted(c) for c in clusters]


def build_group_server(backend) -> ToolServer:
    server = ToolServer("group")

    @server.tool(
        "cluster_references",
        "Partition documents into coherent topical groups, each with a short "
        "label and a one-line rationale.",
        {
            "type": "object",
            "required": ["documents"],
            "properties": {
                "documents": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["doc_id", "title", "body"],
                        "properties": {
                            "doc_id": {"type": "string"},
                            "title": {"type": "string"},
                            "body": {"type": "string"},
                        },
                    },
                },
                "target_groups": {"type": "integer", "minimum": 1},
                "link_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "topic": {"type": "string"},
            },
        },
    )
    def cluster_references(args: dict):
        documents = args["documents"]
        if not documents:
            raise ToolFailed("cannot cluster an empty corpus")
        clusters = cluster_indices(
            [_doc_text(d) for d in documents],
            link_threshold=args.get("link_threshold", DEFAULT_LINK_THRESHOLD),
            target_groups=args.get("target_groups"),
        )
        groups = []
        used_labels: dict[str, int] = {}
        for ordinal, members in enumerate(clusters, start=1):
            titles = [documents[i]["title"] for i in members]
            completion = backend.complete(PromptRequest(
                template_id=GROUP_LABEL,
                variables={"titles": json.dumps(titles), "topic": args.get("topic", "")},
            ))
            try:
                labeled = json.loads(completion.text)
                label = str(labeled.get("label") or "").strip() or f"group {ordinal}"
                rationale = str(labeled.get("rationale") or "").strip()
            except json.JSONDecodeError:
                label = completion.text.strip().splitlines()[0][:60] or f"group {ordinal}"
                rationale = ""
            if label in used_labels:
                used_labels[label] += 1
                label = f"{label} ({used_labels[label]})"
            else:
                used_labels[label] = 1
            groups.append({
                "group_id": f"g{ordinal}",
                "label": label,
                "member_ids": [documents[i]["doc_id"] for i in members],
                "rationale": rationale or f"{len(members)} documents with shared vocabulary",
            })
        return ok_json({"groups": groups})

    return server
