"""Record the committed test fixture by driving a real service instance.

Talks to the backend exclusively over HTTP: creates an interactive session,
answers the consensus gate with one revision then approval, approves the
outline gate, waits for completion, then saves the event log, a replayed SSE
capture, and every artifact into tests/fixtures/session/.

Usage: python3 scripts/record-fixture.py
"""

from __future__ import annotations

import json
import os
import shutil
import sys
import tempfile
import threading
import time

import httpx
import uvicorn

from surveyforge.service import create_app

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "session")
TOPIC = "large language model agents"
REVISION = "please also cover evaluation benchmarks and safety practices"
DEADLINE = 60.0


class LiveService:
    def __init__(self, spool: str):
        self.server = uvicorn.Server(uvicorn.Config(create_app(spool_dir=spool),
                                                    host="127.0.0.1", port=0,
                                                    log_level="error"))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self) -> str:
        self.thread.start()
        deadline = time.monotonic() + DEADLINE
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("service did not start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def stream_frames(client: httpx.Client, url: str, on_event) -> None:
    """Incrementally read SSE frames, calling on_event(dict) per event; the
    callback returns False to stop reading."""
    with client.stream("GET", url, timeout=httpx.Timeout(5.0, read=DEADLINE)) as response:
        response.raise_for_status()
        buffer = ""
        for chunk in response.iter_text():
            buffer += chunk
            while "\n\n" in buffer:
                frame, buffer = buffer.split("\n\n", 1)
                if frame.startswith(":"):
                    continue
                data = next(line[len("data: "):] for line in frame.splitlines()
                            if line.startswith("data: "))
                if on_event(json.loads(data)) is False:
                    return


def main() -> int:
    spool = tempfile.mkdtemp(prefix="fixture-spool-")
    service = LiveService(spool)
    base = service.start()
    try:
        with httpx.Client(base_url=base) as client:
            created = client.post("/sessions", json={"topic": TOPIC, "options": {}})
            created.raise_for_status()
            session_id = created.json()["session_id"]

            plan = iter([("revise", REVISION), ("approve", ""), ("approve", "")])
            cursor = {"n": 0}

            def act(event: dict) -> bool:
                cursor["n"] = event["seq"]
                if event["kind"] != "gate_opened":
                    return True
                try:
                    action, text = next(plan)
                except StopIteration:
                    return False
                resolution = {"action": action}
                if text:
                    resolution["text"] = text
                reply = client.post(f"/sessions/{session_id}/feedback",
                                    json={"gate_id": event["payload"]["gate_id"],
                                          "resolution": resolution})
                reply.raise_for_status()
                return True

            stream_frames(client, f"/sessions/{session_id}/events?from=1", act)

            deadline = time.monotonic() + DEADLINE
            while client.get(f"/sessions/{session_id}/artifacts/survey").status_code != 200:
                if time.monotonic() > deadline:
                    raise RuntimeError("session did not finish")
                time.sleep(0.05)

            os.makedirs(FIXTURE_DIR, exist_ok=True)
            # Deterministic SSE capture: a finished session replays without
            # keepalives, so the byte stream is stable across recordings.
            capture = client.get(f"/sessions/{session_id}/events?from=1")
            with open(os.path.join(FIXTURE_DIR, "stream.sse"), "wb") as fh:
                fh.write(capture.content)
            for kind, filename in (("brief", "brief.json"), ("tree", "tree.json"),
                                   ("skeleton", "skeleton.json"),
                                   ("survey", "survey.md"),
                                   ("transcript", "transcript.jsonl")):
                artifact = client.get(f"/sessions/{session_id}/artifacts/{kind}")
                artifact.raise_for_status()
                with open(os.path.join(FIXTURE_DIR, filename), "wb") as fh:
                    fh.write(artifact.content)
            shutil.copyfile(os.path.join(spool, session_id, "events.jsonl"),
                            os.path.join(FIXTURE_DIR, "events.jsonl"))
            print(f"fixture recorded into {os.path.abspath(FIXTURE_DIR)}")
            with open(os.path.join(FIXTURE_DIR, "events.jsonl")) as fh:
                print(f"events: {sum(1 for _ in fh)}")
    finally:
        service.stop()
        shutil.rmtree(spool, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
