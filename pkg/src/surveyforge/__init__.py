"""SurveyForge: a hierarchically modular agent system for long-form survey generation.

Specialized agents (analysis, skeleton, writing) drive a pipeline of
composable tool servers speaking a JSON-RPC tool protocol, coordinated by an
LLM-backed planner with human-in-the-loop gates.
"""

__version__ = "0.1.0"
