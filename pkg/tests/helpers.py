"""Cross-file test utilities: subprocess commands and the transport matrix."""

from __future__ import annotations

import sys

CANONICAL_TOPIC = "large language model agents"


def stdio_command(server: str) -> list:
    """Spawn command for one server as a child process (stdio transport)."""
    return [sys.executable, "-m", "surveyforge.servers.host",
            "--server", server, "--transport", "stdio"]


def tool_matrix(corpus) -> list:
    """(tool_name, args) pairs exercising every server, including failures.

    Every entry must be valid JSON and produce a deterministic ToolResult so
    the three transports can be compared wire-dict for wire-dict.
    """
    from surveyforge.state import (
        PipelineState,
        ReferenceGroup,
        ResearchBrief,
        Skeleton,
        SkeletonNode,
        build_reference_tree,
    )

    docs = corpus[:4]
    group = ReferenceGroup(group_id="g1", label="sample theme",
                           rationale="fixture documents", member_ids=[d.doc_id for d in docs])
    tree = build_reference_tree(CANONICAL_TOPIC, [group], docs)
    skeleton = Skeleton(title="T", version=1, nodes=[
        SkeletonNode(node_id="n1", heading="Introduction", intent="scope"),
        SkeletonNode(node_id="n2", heading="Sample Theme", intent="review",
                     group_refs=["g1"], citation_slots=[docs[0].doc_id]),
    ], next_node_seq=3)
    fresh_context = PipelineState(brief=ResearchBrief(topic=CANONICAL_TOPIC)).to_dict()

    return [
        ("search.generate_queries", {"topic": CANONICAL_TOPIC}),
        ("search.retrieve", {"query": "retrieval augmented generation", "limit": 3}),
        ("search.retrieve", {"query": "qqqq zzzz", "limit": 5}),
        ("search.retrieve", {"query": "instruction tuning", "limit": 0}),
        ("search.crawl", {"url": docs[0].source}),
        ("search.crawl", {"url": "https://refs.example/does-not-exist"}),
        ("search.similarity_filter",
         {"documents": [d.to_dict() for d in docs], "topic": CANONICAL_TOPIC}),
        ("search.similarity_filter",
         {"documents": [d.to_dict() for d in docs], "topic": "zz", "threshold": 1.0}),
        ("group.cluster_references",
         {"documents": [d.to_dict() for d in docs], "target_groups": 1}),
        ("group.cluster_references", {"documents": []}),
        ("skeleton_init.init", {"topic": CANONICAL_TOPIC, "tree": tree.to_dict()}),
        ("digest.make", {"document": docs[0].to_dict(), "skeleton": skeleton.to_dict()}),
        ("digest.make", {"document": {"doc_id": "x1", "title": "t", "body": "",
                                      "source": "s", "summary": ""},
                         "skeleton": skeleton.to_dict()}),
        ("refine.step", {"skeleton": skeleton.to_dict(), "tree": tree.to_dict()}),
        ("figure.render_mermaid", {"source": "graph TD\n  A --> B"}),
        ("figure.render_mermaid", {"source": "graph TD\n  A --> B["}),
        ("orchestra.plan_next",
         {"context": fresh_context,
          "available": [{"name": "digest.make", "description": "summarize",
                         "inputSchema": {"type": "object"}}]}),
        ("orchestra.validate_plan",
         {"plan": {"steps": [{"tool_name": "nope.nope", "args": {}, "rationale": "r"}],
                   "stop": False},
          "available": [{"name": "digest.make", "description": "summarize",
                         "inputSchema": {"type": "object"}}]}),
    ]
