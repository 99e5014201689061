"""Release acceptance gate: one test per criterion.

Each test here is deliberately self-contained and end-to-end; the terminal
summary (see conftest) prints one pass/fail line per criterion.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time

import pytest

from surveyforge.agents import (
    AGENT_IDS,
    DEFAULT_BINDINGS,
    Session,
    SessionOptions,
    create_session,
    resume_session,
)
from surveyforge.cli import main
from surveyforge.errors import AccessDenied, SchemaViolation
from surveyforge.model import PromptRequest, ScriptedBackend
from surveyforge.orchestra import (
    MAX_PLANNER_STEPS,
    SERVER_STAGE,
    plan_next,
    plan_variables,
    validate_plan,
)
from surveyforge.prompts import ORCHESTRA_PLAN
from surveyforge.protocol import messages
from surveyforge.protocol.client import connect_http, connect_in_process, connect_stdio
from surveyforge.protocol.compose import base_tool_name, compose
from surveyforge.protocol.server import serve
from surveyforge.retrieval import load_fixture_index
from surveyforge.servers import SERVER_NAMES, build_server
from surveyforge.state import PipelineState, Skeleton, validate_skeleton

import test_orchestra as planning
from helpers import CANONICAL_TOPIC, stdio_command, tool_matrix
from test_agents import CitationNoiseBackend
from test_protocol import make_child

GOLDEN = os.path.join(os.path.dirname(__file__), "fixtures", "rpc_frames.jsonl")


@pytest.fixture(scope="module")
def headless_run(tmp_path_factory):
    """One completed headless pipeline run, shared by several criteria."""
    session_dir = tmp_path_factory.mktemp("acceptance") / "session"
    session = create_session(SessionOptions(topic=CANONICAL_TOPIC,
                                            session_dir=str(session_dir)))
    session.run()
    return session


# --- criterion: protocol conformance -----------------------------------------

def test_protocol_conformance(corpus):
    """Golden frames round-trip byte-exactly and all three transports return
    equal wire results for every (tool, args) pair, in under ten seconds."""
    start = time.monotonic()

    with open(GOLDEN, "rb") as fh:
        frames = [line.rstrip(b"\n") for line in fh if line.strip()]
    assert len(frames) >= 40
    for frame in frames:
        assert messages.encode_message(messages.decode_message(frame)) == frame

    backend = ScriptedBackend()
    index = load_fixture_index()
    in_process, http, stdio, running = {}, {}, {}, []
    try:
        for name in SERVER_NAMES:
            in_process[name] = connect_in_process(
                build_server(name, backend=backend, index=index))
            r = serve(build_server(name, backend=backend, index=index),
                      transport="http")
            running.append(r)
            http[name] = connect_http(r.base_url)
            stdio[name] = connect_stdio(stdio_command(name))
        matrix = tool_matrix(corpus)
        assert len(matrix) >= 15
        for tool, args in matrix:
            server, bare = tool.split(".", 1)
            wires = [handles[server].call_tool(bare, args,
                                               raise_on_error=False).to_wire()
                     for handles in (in_process, stdio, http)]
            assert wires[0] == wires[1] == wires[2], \
                f"{tool} results differ across transports"
    finally:
        for handle in stdio.values():
            handle.transport.close()
        for r in running:
            r.stop()

    assert time.monotonic() - start < 10.0


# --- criterion: hierarchical composition -------------------------------------

def test_hierarchical_composition(backend, fixture_index):
    """The composed retrieval suite exposes exactly its four tools under
    prefixed names, and nested composition equals flat composition up to
    prefixes (same base tools, same leaf routing)."""
    suite = compose("analysis-suite", [
        connect_in_process(build_server("search", backend=backend,
                                        index=fixture_index)),
    ])
    assert sorted(d.name for d in suite.list_tools()) == [
        "search.crawl", "search.generate_queries",
        "search.retrieve", "search.similarity_filter",
    ]

    def fresh(server_id, tools):
        return connect_in_process(make_child(server_id, tools))

    nested = compose("outer", [
        compose("inner", [fresh("alpha", ["one"]), fresh("beta", ["two"])]),
        fresh("gamma", ["three"]),
    ])
    flat = compose("flat", [fresh("alpha", ["one"]), fresh("beta", ["two"]),
                            fresh("gamma", ["three"])])
    nested_bases = sorted(base_tool_name(d.name) for d in nested.list_tools())
    flat_bases = sorted(base_tool_name(d.name) for d in flat.list_tools())
    assert nested_bases == flat_bases == ["one", "three", "two"]
    by_base_nested = {base_tool_name(d.name): d.name for d in nested.list_tools()}
    by_base_flat = {base_tool_name(d.name): d.name for d in flat.list_tools()}
    for base in ("one", "two", "three"):
        a = nested.call_tool(by_base_nested[base], {}).first_json
        b = flat.call_tool(by_base_flat[base], {}).first_json
        assert a["served_by"] == b["served_by"] and a["tool"] == b["tool"] == base


# --- criterion: agent access control -----------------------------------------

def test_agent_server_access_control():
    """Every (agent, tool) pair behaves exactly as the binding config says,
    and denied calls never reach any transport."""
    session = create_session(SessionOptions(topic=CANONICAL_TOPIC))
    tool_names = [f"{server}.{d.name}"
                  for server in SERVER_NAMES
                  for d in build_server(server).descriptors]
    assert len(tool_names) == 12

    def transport_counts():
        counts = {f"handle:{n}": h.transport.request_count
                  for n, h in session.handles.items()}
        counts.update({f"suite:{n}": s.transport.request_count
                       for n, s in session.suites.items()})
        return counts

    checked = 0
    for agent_id in AGENT_IDS:
        for tool_name in tool_names:
            owner = tool_name.split(".", 1)[0]
            expected = owner in DEFAULT_BINDINGS[agent_id]
            session.state = PipelineState(stage=SERVER_STAGE[owner],
                                          brief=session.state.brief)
            before = transport_counts()
            try:
                session.call_tool(agent_id, tool_name, {})
                observed = True
            except AccessDenied:
                observed = False
                assert transport_counts() == before, (agent_id, tool_name)
            except SchemaViolation:
                # Past the access check; empty args fail schema validation.
                observed = True
            assert observed is expected, (agent_id, tool_name)
            checked += 1
    assert checked == len(AGENT_IDS) * 12


# --- criterion: planner validity ---------------------------------------------

def test_planner_validity(corpus, headless_run):
    """Across 100+ scripted planning contexts every produced plan validates
    cleanly; 10 fault-injected contexts recover within two re-prompts; no plan
    or run exceeds the step budget."""
    available = planning.make_available()
    contexts = planning.scripted_contexts(corpus)
    assert len(contexts) >= 100
    for state in contexts:
        plan = plan_next(state.history, state, available, ScriptedBackend())
        assert validate_plan(plan, available) == []
        assert plan.steps or plan.stop
        assert len(plan.steps) <= MAX_PLANNER_STEPS

    injected = [planning.build_state(corpus, n_docs=n, digested=1)
                for n in range(3, 13)]
    assert len(injected) == 10
    for i, state in enumerate(injected):
        bad = planning.BAD_COMPLETIONS[i % len(planning.BAD_COMPLETIONS)]
        key = PromptRequest(template_id=ORCHESTRA_PLAN,
                            variables=plan_variables(state, available)).fixture_key()
        plan = plan_next(state.history, state, available,
                         ScriptedBackend({key: bad}))
        assert validate_plan(plan, available) == []
        assert 1 <= len(plan.attempts) <= 2
        assert len(plan.steps) <= MAX_PLANNER_STEPS

    owned = [e for e in headless_run.state.history.entries
             if e.tool_name.split(".", 1)[0] in ("skeleton_init", "digest", "refine")]
    assert len(owned) <= headless_run.options.max_planner_steps


# --- criterion: refinement properties ----------------------------------------

def test_refinement_properties(headless_run):
    """On the full 12-document corpus each refinement layer leaves a valid
    skeleton, coverage never decreases, the loop stops within the layer cap,
    and final coverage reaches 0.9."""
    state = headless_run.state
    assert len(state.tree.documents) == 12

    refine_steps = [e for e in state.history.entries if e.tool_name == "refine.step"]
    assert 1 <= len(refine_steps) <= headless_run.options.max_refine_layers == 3

    assert len(state.reports) == len(refine_steps)
    trajectory: list[float] = []
    for report in state.reports:
        trajectory.extend([report.coverage_before, report.coverage_after])
    assert all(a <= b for a, b in zip(trajectory, trajectory[1:])), trajectory

    session_dir = headless_run.options.session_dir
    versions = sorted(n for n in os.listdir(session_dir)
                      if n.startswith("skeleton-v"))
    assert len(versions) >= 3
    for name in versions:
        with open(os.path.join(session_dir, name), encoding="utf-8") as fh:
            skeleton = Skeleton.from_dict(json.load(fh))
        assert validate_skeleton(skeleton, state.tree) == [], name

    assert state.coverage() >= 0.9


# --- criterion: end-to-end determinism ---------------------------------------

def test_end_to_end_determinism(tmp_path, capsys):
    """Two independent headless runs emit byte-identical artifacts and the
    recorded transcript replays cleanly, all in under a minute."""
    start = time.monotonic()
    directories = [tmp_path / "a", tmp_path / "b"]
    for directory in directories:
        create_session(SessionOptions(topic=CANONICAL_TOPIC,
                                      session_dir=str(directory))).run()

    surveys = [(d / "survey.md").read_bytes() for d in directories]
    assert surveys[0] == surveys[1]
    hashes = [hashlib.sha256((d / "transcript.jsonl").read_bytes()).hexdigest()
              for d in directories]
    assert hashes[0] == hashes[1]

    assert main(["replay", str(directories[0] / "transcript.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "replay matched all" in out

    assert time.monotonic() - start < 60.0


# --- criterion: citation closure ---------------------------------------------

def test_citation_closure(headless_run, tmp_path):
    """The survey cites only corpus documents, the bibliography equals the
    cited set exactly, and injected unknown citations are repaired loudly."""
    with open(os.path.join(headless_run.options.session_dir, "survey.md"),
              encoding="utf-8") as fh:
        survey = fh.read()
    body, separator, references = survey.partition("## References")
    assert separator

    bibliography = re.findall(r"^\[(\d+)\] (.+) — (.+)$", references, flags=re.M)
    assert bibliography
    numbers = [int(n) for n, _, _ in bibliography]
    assert numbers == list(range(1, len(numbers) + 1))

    cited_numbers = {int(n) for n in re.findall(r"\[(\d+)\]", body)}
    assert cited_numbers == set(numbers)

    corpus_entries = {(d.title, d.source)
                      for d in headless_run.state.tree.documents.values()}
    for _, title, source in bibliography:
        assert (title, source) in corpus_entries, title
    assert "[@" not in survey

    noisy = Session(SessionOptions(topic=CANONICAL_TOPIC,
                                   session_dir=str(tmp_path / "noise")),
                    CitationNoiseBackend())
    noisy.run()
    assert "bogus-ref" not in noisy.state.survey
    assert "[@" not in noisy.state.survey
    repairs = [e for e in noisy.state.history.entries
               if e.tool_name == "writing.citation_repair"]
    assert len(repairs) == 1 and "bogus-ref" in repairs[0].result_summary
    noisy_bib = re.findall(r"^\[\d+\] (.+) — (.+)$",
                           noisy.state.survey.partition("## References")[2],
                           flags=re.M)
    for title, source in noisy_bib:
        assert (title, source) in corpus_entries, title


# --- criterion: crash and resume ---------------------------------------------

class SimulatedCrash(Exception):
    pass


def test_crash_resume(tmp_path):
    """Kill the pipeline right after each stage checkpoint, resume it from
    disk, and end with artifacts byte-identical to an uninterrupted run."""
    baseline = tmp_path / "baseline"
    create_session(SessionOptions(topic=CANONICAL_TOPIC,
                                  session_dir=str(baseline))).run()
    checkpoints = len([n for n in os.listdir(baseline) if n.startswith("state-")])
    assert checkpoints == 4

    for crash_after in range(1, checkpoints + 1):
        directory = tmp_path / f"crash-{crash_after}"
        session = create_session(SessionOptions(topic=CANONICAL_TOPIC,
                                                session_dir=str(directory)))
        original = session.checkpoint
        calls = {"n": 0}

        def crash_after_checkpoint(original=original, calls=calls,
                                   limit=crash_after):
            original()
            calls["n"] += 1
            if calls["n"] == limit:
                raise SimulatedCrash(f"killed after checkpoint {limit}")

        session.checkpoint = crash_after_checkpoint
        with pytest.raises(SimulatedCrash):
            session.run()

        resumed = resume_session(SessionOptions(topic=CANONICAL_TOPIC,
                                                session_dir=str(directory)))
        resumed.run()
        assert resumed.state.stage == "done"

        assert sorted(os.listdir(directory)) == sorted(os.listdir(baseline))
        for name in sorted(os.listdir(baseline)):
            assert ((directory / name).read_bytes()
                    == (baseline / name).read_bytes()), (crash_after, name)
