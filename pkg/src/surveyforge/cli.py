"""Operator entry points.

``surveyforge run`` drives one pipeline headless or interactive;
``surveyforge serve`` hosts the HTTP session API; ``surveyforge replay``
re-executes a recorded transcript and verifies it byte-for-byte;
``surveyforge servers list`` prints the tool inventory. ``surveyforge-server``
(see ``servers.host``) hosts a single tool server.

Exit codes: 0 success; 1 pipeline error; 2 configuration error;
3 planning failure; 4 transcript divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid
from typing import Optional

from .errors import (
    ConfigError,
    PlanningFailed,
    SurveyForgeError,
    TranscriptMismatch,
)

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_CONFIG = 2
EXIT_PLANNING = 3
EXIT_TRANSCRIPT = 4


# --- config -----------------------------------------------------------------

_TOP_KEYS = {"servers", "bindings", "model", "limits"}
_SERVER_KEYS = {"id", "transport", "command", "url", "origin"}
_MODEL_KEYS = {"backend", "base_url", "name", "api_key", "fixtures"}
_LIMIT_KEYS = {"max_planner_steps", "max_refine_layers", "max_consensus_turns",
               "max_gate_rejections", "retrieve_limit", "filter_threshold",
               "target_groups"}
_TRANSPORTS = {"inprocess", "stdio", "http"}


def load_config(path: Optional[str]) -> dict:
    """Load and exhaustively validate the config document.

    Every key at every level must be known; a typo is an error, never a
    silent ignore.
    """
    if path is None:
        return {"servers": [], "bindings": {}, "model": {}, "limits": {}}
    if not os.path.exists(path):
        raise ConfigError(f"config not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))

    servers = raw.get("servers", [])
    if not isinstance(servers, list):
        raise ConfigError("config.servers must be a list")
    seen_ids = set()
    for position, entry in enumerate(servers, start=1):
        if not isinstance(entry, dict):
            raise ConfigError(f"config.servers[{position}] must be an object")
        bad = set(entry) - _SERVER_KEYS
        if bad:
            raise ConfigError(
                f"config.servers[{position}] unknown keys: " + ", ".join(sorted(bad)))
        server_id = entry.get("id")
        if not isinstance(server_id, str) or not server_id:
            raise ConfigError(f"config.servers[{position}] needs a string 'id'")
        if server_id in seen_ids:
            raise ConfigError(f"config.servers has duplicate id {server_id!r}")
        seen_ids.add(server_id)
        transport = entry.get("transport", "inprocess")
        if transport not in _TRANSPORTS:
            raise ConfigError(
                f"config.servers[{position}] transport must be one of "
                + ", ".join(sorted(_TRANSPORTS)))
        if transport == "stdio" and not entry.get("command"):
            raise ConfigError(f"config.servers[{position}] stdio transport needs 'command'")
        if transport == "http" and not entry.get("url"):
            raise ConfigError(f"config.servers[{position}] http transport needs 'url'")

    bindings = raw.get("bindings", {})
    if not isinstance(bindings, dict):
        raise ConfigError("config.bindings must be an object of agent -> [servers]")
    for agent, ids in bindings.items():
        if not isinstance(ids, list) or not all(isinstance(s, str) for s in ids):
            raise ConfigError(f"config.bindings[{agent!r}] must be a list of server ids")

    model = raw.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("config.model must be an object")
    bad = set(model) - _MODEL_KEYS
    if bad:
        raise ConfigError("config.model unknown keys: " + ", ".join(sorted(bad)))
    if "backend" in model and model["backend"] not in ("scripted", "live"):
        raise ConfigError("config.model.backend must be 'scripted' or 'live'")

    limits = raw.get("limits", {})
    if not isinstance(limits, dict):
        raise ConfigError("config.limits must be an object")
    bad = set(limits) - _LIMIT_KEYS
    if bad:
        raise ConfigError("config.limits unknown keys: " + ", ".join(sorted(bad)))
    for key, value in limits.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"config.limits.{key} must be a number")

    return {"servers": servers, "bindings": bindings, "model": model, "limits": limits}


def _build_backend(config: dict, override: Optional[str]):
    from .model import LiveBackend, ScriptedBackend, backend_from_env

    model = config.get("model", {})
    kind = override or model.get("backend")
    fixtures = model.get("fixtures")
    if kind == "scripted":
        if fixtures and os.path.exists(fixtures):
            return ScriptedBackend.from_file(fixtures)
        return ScriptedBackend()
    if kind == "live":
        return LiveBackend(base_url=model.get("base_url"), model=model.get("name"),
                           api_key=model.get("api_key"))
    return backend_from_env(fixtures_path=fixtures)


def _build_handles(config: dict, backend) -> Optional[dict]:
    """Connect the configured servers; None means use the in-process defaults."""
    entries = config.get("servers", [])
    if not entries:
        return None
    from .protocol.client import connect_http, connect_in_process, connect_stdio
    from .retrieval import load_fixture_index
    from .servers import SERVER_ALIASES, SERVER_NAMES, build_server

    handles = {}
    index = None
    for entry in entries:
        server_id = SERVER_ALIASES.get(entry["id"], entry["id"])
        transport = entry.get("transport", "inprocess")
        if transport == "stdio":
            command = entry["command"]
            if isinstance(command, str):
                command = command.split()
            handles[server_id] = connect_stdio(command)
        elif transport == "http":
            handles[server_id] = connect_http(entry["url"])
        else:
            if server_id not in SERVER_NAMES:
                raise ConfigError(f"unknown in-process server {entry['id']!r}")
            if server_id == "search" and index is None:
                index = load_fixture_index()
            handles[server_id] = connect_in_process(
                build_server(server_id, backend=backend, index=index))
    # Any bound-but-unlisted server still runs in-process.
    for name in SERVER_NAMES:
        if name not in handles:
            if name == "search" and index is None:
                index = load_fixture_index()
            handles[name] = connect_in_process(
                build_server(name, backend=backend, index=index))
    return handles


# --- subcommands ------------------------------------------------------------

def _cmd_run(args) -> int:
    from .agents import (
        BindingTable,
        HeadlessGateHandler,
        InteractiveGateHandler,
        Session,
        SessionOptions,
    )

    config = load_config(args.config)
    backend = _build_backend(config, args.backend)
    handles = _build_handles(config, backend)
    limits = config.get("limits", {})

    session_dir = args.session_dir or os.path.join("sessions", uuid.uuid4().hex[:12])
    uploads = []
    for path in args.upload or []:
        if not os.path.exists(path):
            raise ConfigError(f"upload not found: {path}")
        with open(path, encoding="utf-8") as fh:
            uploads.append({"title": os.path.splitext(os.path.basename(path))[0],
                            "body": fh.read(), "filename": os.path.basename(path)})

    options = SessionOptions(
        topic=args.topic,
        session_dir=session_dir,
        uploads=uploads,
        headless=not args.interactive,
        max_planner_steps=args.max_planner_steps or int(limits.get("max_planner_steps", 50)),
        max_refine_layers=int(limits.get("max_refine_layers", 3)),
        max_consensus_turns=int(limits.get("max_consensus_turns", 8)),
        max_gate_rejections=int(limits.get("max_gate_rejections", 5)),
        retrieve_limit=int(limits.get("retrieve_limit", 12)),
        filter_threshold=limits.get("filter_threshold"),
        target_groups=(int(limits["target_groups"]) if "target_groups" in limits else None),
    )
    gate_handler = InteractiveGateHandler() if args.interactive else HeadlessGateHandler()
    bindings = BindingTable({a: set(s) for a, s in config.get("bindings", {}).items()})

    session = Session(options=options, backend=backend, handles=handles,
                      bindings=bindings, gate_handler=gate_handler)
    state = session.run()
    survey_path = os.path.join(session_dir, "survey.md")
    print(f"survey written: {survey_path}")
    print(f"stage: {state.stage}  coverage: {state.coverage():.2f}  "
          f"history entries: {len(state.history.entries)}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    backend = _build_backend(config, args.backend)
    app = create_app(spool_dir=args.spool_dir, backend=backend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _cmd_replay(args) -> int:
    from .agents import SessionOptions, create_session
    from .model import ScriptedBackend

    transcript_path = args.transcript
    if not os.path.exists(transcript_path):
        raise ConfigError(f"transcript not found: {transcript_path}")
    recorded = []
    with open(transcript_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                recorded.append(json.loads(line))
    if not recorded:
        print("empty transcript: nothing to replay")
        return EXIT_OK

    session_dir = os.path.dirname(os.path.abspath(transcript_path))
    brief_path = os.path.join(session_dir, "brief.json")
    if not os.path.exists(brief_path):
        raise ConfigError(
            "replay needs the session directory around the transcript "
            f"(missing {brief_path})")
    with open(brief_path, encoding="utf-8") as fh:
        topic = json.load(fh)["topic"]

    options = SessionOptions(topic=topic, session_dir=None)
    session = create_session(options, backend=ScriptedBackend())
    state = session.run()
    fresh = [entry.to_dict() for entry in state.history.entries]

    for position in range(min(len(recorded), len(fresh))):
        if recorded[position] != fresh[position]:
            want, got = recorded[position], fresh[position]
            keys = [k for k in want if want.get(k) != got.get(k)]
            raise TranscriptMismatch(want.get("seq", position + 1),
                                     f"fields differ: {', '.join(keys)}")
    if len(recorded) != len(fresh):
        raise TranscriptMismatch(min(len(recorded), len(fresh)) + 1,
                                 f"length differs: recorded {len(recorded)}, "
                                 f"replayed {len(fresh)}")
    print(f"replay matched all {len(recorded)} transcript entries")
    return EXIT_OK


def _cmd_servers_list(args) -> int:
    from .model import ScriptedBackend
    from .servers import SERVER_NAMES, build_server

    backend = ScriptedBackend()
    for name in SERVER_NAMES:
        server = build_server(name, backend=backend)
        tools = ", ".join(sorted(d.name for d in server.descriptors))
        print(f"{name}: {tools}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surveyforge",
        description="Generate long-form topic surveys with a modular tool-server pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one survey pipeline to completion")
    run.add_argument("--topic", required=True, help="survey topic")
    run.add_argument("--config", help="path to the JSON config document")
    run.add_argument("--backend", choices=["scripted", "live"],
                     help="model backend (overrides config and SF_BACKEND)")
    run.add_argument("--headless", action="store_true", default=True,
                     help="auto-approve all gates (default)")
    run.add_argument("--interactive", action="store_true",
                     help="prompt for gate decisions in the terminal")
    run.add_argument("--max-planner-steps", type=int,
                     help="budget of planner-scheduled tool calls")
    run.add_argument("--session-dir", help="directory for checkpoints and artifacts")
    run.add_argument("--upload", action="append", metavar="PATH",
                     help="seed the corpus with a local text file (repeatable)")
    run.set_defaults(func=_cmd_run)

    serve = sub.add_parser("serve", help="host the HTTP session API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8040)
    serve.add_argument("--config", help="path to the JSON config document")
    serve.add_argument("--backend", choices=["scripted", "live"])
    serve.add_argument("--spool-dir", help="directory holding session directories")
    serve.set_defaults(func=_cmd_serve)

    replay = sub.add_parser("replay", help="re-execute a transcript and verify it")
    replay.add_argument("transcript", help="path to a recorded transcript.jsonl")
    replay.set_defaults(func=_cmd_replay)

    servers = sub.add_parser("servers", help="inspect tool servers")
    servers_sub = servers.add_subparsers(dest="servers_command", required=True)
    servers_list = servers_sub.add_parser("list", help="list servers and their tools")
    servers_list.set_defaults(func=_cmd_servers_list)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlanningFailed as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except TranscriptMismatch as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_TRANSCRIPT
    except SurveyForgeError as exc:
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except KeyboardInterrupt:
        return EXIT_PIPELINE


def server_main(argv: Optional[list] = None) -> int:
    from .servers.host import main as host_main

    return host_main(argv)


if __name__ == "__main__":
    sys.exit(main())
