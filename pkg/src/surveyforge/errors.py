"""Shared exception types.

Protocol-level errors carry the JSON-RPC error code they map to on the wire;
pipeline errors map to CLI exit codes in ``surveyforge.cli``.
"""

from __future__ import annotations


class SurveyForgeError(Exception):
    """Base class for all errors raised by this package."""


# --- protocol ---------------------------------------------------------------

class ProtocolError(SurveyForgeError):
    rpc_code = -32600


class MalformedFrame(ProtocolError):
    """Raw frame was not valid JSON."""

    rpc_code = -32700


class ProtocolViolation(ProtocolError):
    """Structurally valid JSON that breaks the message contract."""

    rpc_code = -32600


class UnknownMethod(ProtocolError):
    rpc_code = -32601


class UnknownTool(ProtocolError):
    rpc_code = -32602


class SchemaViolation(ProtocolError):
    """Tool arguments rejected by the tool's input schema."""

    rpc_code = -32602


class ToolFailed(SurveyForgeError):
    """A tool ran and reported failure (is_error result)."""

    rpc_code = -32000


class ToolTimeout(ToolFailed):
    """Per-call budget exceeded; the session stays up."""


class TransportDown(SurveyForgeError):
    """The underlying transport is gone (process exited, connection refused)."""


class BindFailure(SurveyForgeError):
    """Server could not bind its endpoint."""


class NameCollision(SurveyForgeError):
    """Two composed children share a server id."""


# --- domain state -----------------------------------------------------------

class DuplicateMembership(SurveyForgeError):
    """A document was claimed by two groups of the same tree."""


class CorruptCheckpoint(SurveyForgeError):
    """Checkpoint document does not match the expected schema/version."""


# --- model backends ---------------------------------------------------------

class BackendUnavailable(SurveyForgeError):
    """Live model backend unreachable after retries."""


class ScriptMiss(SurveyForgeError):
    """Scripted backend has no fixture entry and the template declares no fallback."""


class RetrieverUnavailable(ToolFailed):
    """No retriever configured, or the configured one cannot serve queries."""


class FetchFailed(ToolFailed):
    """Crawl target could not be fetched."""


# --- planner / agents -------------------------------------------------------

class PlanningFailed(SurveyForgeError):
    """No valid plan after retries, or step budget exhausted."""


class IllegalTransition(SurveyForgeError):
    """A tool result arrived that the current stage cannot accept."""


class AccessDenied(SurveyForgeError):
    """Agent attempted a tool outside its server bindings."""


class ConsensusAbandoned(SurveyForgeError):
    """User quit the consensus dialogue."""


class GateRejectedLimit(SurveyForgeError):
    """User regenerated a gated output more times than allowed."""


# --- service ----------------------------------------------------------------

class NoSuchSession(SurveyForgeError):
    pass


class NoSuchGate(SurveyForgeError):
    pass


class GateAlreadyResolved(SurveyForgeError):
    pass


class ArtifactNotReady(SurveyForgeError):
    pass


# --- cli --------------------------------------------------------------------

class ConfigError(SurveyForgeError):
    """Bad or missing configuration; maps to exit code 2."""


class TranscriptMismatch(SurveyForgeError):
    """Replay diverged from the recorded transcript."""

    def __init__(self, seq: int, detail: str):
        super().__init__(f"replay diverged at seq {seq}: {detail}")
        self.seq = seq
        self.detail = detail
