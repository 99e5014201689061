"""The single-purpose tool servers behind the pipeline.

Each builder returns a ``protocol.ToolServer`` wired to a model backend (and,
for search, a retrieval index). Servers are individually hostable over stdio
or HTTP via ``surveyforge.servers.host`` and composable into suites with
``protocol.compose``.
"""

from __future__ import annotations

from typing import Optional

from ..errors import ConfigError
from ..protocol.server import ToolServer

SERVER_NAMES = ("search", "group", "skeleton_init", "digest", "refine", "figure", "orchestra")

# `skeleton` is accepted everywhere `skeleton_init` is, matching the short
# form used by the server launcher.
SERVER_ALIASES = {"skeleton": "skeleton_init"}


def build_server(name: str, backend=None, index=None) -> ToolServer:
    """Build one atomic server by name; backend defaults to scripted."""
    from ..model import ScriptedBackend

    name = SERVER_ALIASES.get(name, name)
    if name not in SERVER_NAMES:
        raise ConfigError(f"unknown server {name!r}; expected one of {', '.join(SERVER_NAMES)}")
    if backend is None:
        backend = ScriptedBackend()

    if name == "search":
        from .search import build_search_server
        if index is None:
            from ..retrieval import load_fixture_index
            index = load_fixture_index()
        return build_search_server(backend, index)
    if name == "group":
        from .group import build_group_server
        return build_group_server(backend)
    if name == "skeleton_init":
        from .skeleton_init import build_skeleton_init_server
        return build_skeleton_init_server(backend)
    if name == "digest":
        from .digest import build_digest_server
        return build_digest_server(backend)
    if name == "refine":
        from .refine import build_refine_server
        return build_refine_server()
    if name == "figure":
        from .figure import build_figure_server
        return build_figure_server()
    from .orchestra import build_orchestra_server
    return build_orchestra_server(backend)


def build_all(backend=None, index=None) -> dict[str, ToolServer]:
    return {name: build_server(name, backend=backend, index=index) for name in SERVER_NAMES}
