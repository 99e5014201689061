"""Prompt registry: every model-backed step renders one of these templates.

Each template pairs the live-backend prompt text with a deterministic
fallback used by the scripted backend when no fixture entry matches. The
fallbacks are pure functions of the prompt variables, which is what makes
two headless runs byte-identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Optional

# Template ids. Call sites import these constants; verify_registry() checks
# the registry and this list stay in sync.
CONSENSUS_QUESTION = "consensus.question"
CONSENSUS_BRIEF = "consensus.brief"
SEARCH_QUERIES = "search.queries"
GROUP_LABEL = "group.label"
SKELETON_INIT = "skeleton.init"
DIGEST_SUMMARIZE = "digest.summarize"
ORCHESTRA_PLAN = "orchestra.plan"
WRITING_SECTION = "writing.section"

_STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it of on or that the this to was were with".split()
)


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def jaccard(a: str, b: str) -> float:
    """Token-set Jaccard similarity; 1.0 for equal strings, 0.0 for disjoint."""
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta and not tb:
        return 1.0 if a == b else 0.0
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str
    fallback: Optional[Callable[[dict], str]] = None

    def placeholders(self) -> set[str]:
        return set(re.findall(r"\{(\w+)\}", self.text))

    def render(self, variables: dict) -> str:
        missing = self.placeholders() - set(variables)
        if missing:
            raise KeyError(f"unbound placeholders for {self.template_id}: {sorted(missing)}")
        return self.text.format(**variables)


# --- scripted fallbacks -----------------------------------------------------
# Each one simulates what the live backbone is asked to do, deterministically.

def _fb_consensus_question(variables: dict) -> str:
    topic = variables["topic"]
    turn = int(variables["turn"])
    rotation = [
        f"Which angles of {topic} matter most to you, for example methods, evaluation, or applications?",
        f"Are there particular benchmarks, datasets, or systems the survey of {topic} should emphasize?",
        f"Should the survey of {topic} prioritize recent work, or also trace historical development?",
    ]
    return rotation[(turn - 1) % len(rotation)]


def _fb_consensus_brief(variables: dict) -> str:
    topic = variables["topic"]
    answers = [t["answer"] for t in json.loads(variables["dialogue"]) if t.get("answer", "").strip()]
    perspectives = [f"methods and architectures for {topic}", f"evaluation of {topic}"]
    for answer in answers:
        cleaned = answer.strip()
        if cleaned and cleaned not in perspectives:
            perspectives.append(cleaned)
    return json.dumps({
        "goals": f"Survey the state of research on {topic}, organized by theme with full citations.",
        "perspectives": perspectives,
        "search_strategy": "Query the topic broadly, then one focused query per perspective; "
                           "filter retrieved documents by topical similarity.",
    })


def _fb_search_queries(variables: dict) -> str:
    topic = variables["topic"]
    perspectives = json.loads(variables["perspectives"])
    queries = [topic]
    for perspective in perspectives:
        candidate = f"{topic} {perspective}" if perspective not in topic else perspective
        if candidate not in queries:
            queries.append(candidate)
    for filler in (f"{topic} survey", f"{topic} overview"):
        if len(queries) >= 3:
            break
        if filler not in queries:
            queries.append(filler)
    return json.dumps(queries[:10])


def _fb_group_label(variables: dict) -> str:
    titles = json.loads(variables["titles"])
    topic_tokens = set(tokenize(variables["topic"]))
    topic_tokens |= {t + "s" for t in topic_tokens} | {t[:-1] for t in topic_tokens if t.endswith("s")}
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for position, title in enumerate(titles):
        for token in tokenize(title):
            if token in _STOPWORDS or token in topic_tokens or len(token) < 3:
                continue
            counts[token] = counts.get(token, 0) + 1
            order.setdefault(token, position)
    ranked = sorted(counts, key=lambda t: (-counts[t], order[t]))
    label = " ".join(ranked[:2]) if ranked else "general"
    return json.dumps({
        "label": label,
        "rationale": f"{len(titles)} documents sharing vocabulary around '{label}', "
                     "grouped by thematic and methodological overlap",
    })


def _fb_skeleton_init(variables: dict) -> str:
    topic = variables["topic"]
    groups = json.loads(variables["groups"])
    sections = [{
        "heading": "Introduction",
        "intent": f"Motivate the survey of {topic}, state its scope, and preview the organization.",
        "group_refs": [],
    }]
    for group in groups:
        sections.append({
            "heading": group["label"].title(),
            "intent": f"Review work on {group['label']}. {group['rationale']}.",
            "group_refs": [group["group_id"]],
        })
    sections.append({
        "heading": "Conclusion and Outlook",
        "intent": f"Synthesize findings across themes and outline open problems for {topic}.",
        "group_refs": [],
    })
    return json.dumps({"title": f"A Survey of {topic}", "sections": sections})


def _fb_digest_summarize(variables: dict) -> str:
    title = variables["title"]
    body = variables["body"]
    doc_id = variables["doc_id"]
    sections = json.loads(variables["sections"])
    first_words = " ".join(body.split()[:45])
    summary = f"{title}: {first_words}"
    # Score each section by its *distinctive* vocabulary: drop survey-title
    # tokens and tokens shared by most sections, else the framing sections
    # (whose intents restate the topic) would absorb every document.
    section_tokens = [set(tokenize(s["heading"] + " " + s.get("intent", ""))) for s in sections]
    df: dict[str, int] = {}
    for tokens in section_tokens:
        for token in tokens:
            df[token] = df.get(token, 0) + 1
    generic = set(tokenize(variables["survey_title"])) | _STOPWORDS
    generic |= {t for t, count in df.items() if count > len(sections) / 2}
    body_tokens = set(tokenize(body))
    best_node, best_score = None, 0.0
    for section, tokens in zip(sections, section_tokens):
        distinct = tokens - generic
        union = distinct | body_tokens
        score = len(distinct & body_tokens) / len(union) if union else 0.0
        if score > best_score:
            best_node, best_score = section, score
    if best_node is not None and best_score >= 0.03:
        suggestion = {
            "kind": "emphasize",
            "target_node_id": best_node["node_id"],
            "text": f"cite and discuss '{title}' under {best_node['heading']}",
        }
    else:
        suggestion = {
            "kind": "add",
            "target_node_id": None,
            "text": f"add coverage of {title}",
        }
    return json.dumps({"summary": summary, "suggestions": [suggestion], "doc_id": doc_id})


def _fb_orchestra_plan(variables: dict) -> str:
    stage = variables["stage"]
    if stage != "skeletonizing":
        return json.dumps({"steps": [], "stop": True})
    has_skeleton = variables["has_skeleton"] == "true"
    corpus_size = int(variables["corpus_size"])
    digest_count = int(variables["digest_count"])
    has_plan = variables["has_plan"] == "true"
    coverage = float(variables["coverage"])
    layers_run = int(variables["layers_run"])
    last_gain = None if variables["last_gain"] == "none" else float(variables["last_gain"])
    max_layers = int(variables["max_layers"])
    feedback = variables["user_feedback"]
    missing = json.loads(variables["missing_doc_ids"])

    if not has_skeleton:
        return json.dumps({"steps": [
            {"tool_name": "skeleton_init.init", "args": {},
             "rationale": "no skeleton yet; build the initial section scaffold"},
        ], "stop": False})
    if feedback.strip():
        return json.dumps({"steps": [
            {"tool_name": "refine.step", "args": {"feedback": feedback},
             "rationale": f"apply reviewer feedback: {feedback.strip()}"},
        ], "stop": False})
    if digest_count < corpus_size:
        # Consolidation waits for the next consult: a step's arguments must be
        # fillable from the state as it exists when the plan is made.
        steps = [
            {"tool_name": "digest.make", "args": {"doc_id": doc_id},
             "rationale": "digest each undigested reference against the current skeleton"}
            for doc_id in missing
        ]
        return json.dumps({"steps": steps, "stop": False})
    if not has_plan:
        return json.dumps({"steps": [
            {"tool_name": "digest.consolidate", "args": {},
             "rationale": "digests exist but were never consolidated"},
        ], "stop": False})
    done = (
        coverage >= 0.99
        or layers_run >= max_layers
        or (last_gain is not None and last_gain < 0.02)
    )
    if layers_run > 0 and done:
        return json.dumps({"steps": [], "stop": True})
    if layers_run >= max_layers:
        return json.dumps({"steps": [], "stop": True})
    return json.dumps({"steps": [
        {"tool_name": "refine.step", "args": {},
         "rationale": "apply the consolidated revision plan for one refinement layer"},
    ], "stop": False})


def _fb_writing_section(variables: dict) -> str:
    heading = variables["heading"]
    intent = variables["intent"]
    docs = json.loads(variables["docs"])  # [{doc_id, title, summary}]
    lines = [intent.strip()]
    for doc in docs:
        first_clause = doc["summary"].split(".")[0].strip()
        lines.append(f"{first_clause} [@{doc['doc_id']}].")
    if not docs:
        lines.append(f"This section situates {heading.lower()} within the survey's overall argument.")
    return " ".join(lines)


REGISTRY: dict[str, PromptTemplate] = {
    t.template_id: t
    for t in [
        PromptTemplate(
            CONSENSUS_QUESTION,
            "You are scoping a survey on {topic}. This is dialogue turn {turn}; the user has said: "
            "{dialogue}. Ask one concise question that sharpens the research perspectives.",
            _fb_consensus_question,
        ),
        PromptTemplate(
            CONSENSUS_BRIEF,
            "Summarize the consensus for a survey on {topic} from this dialogue: {dialogue}. "
            "Answer as JSON with keys goals, perspectives (list), search_strategy.",
            _fb_consensus_brief,
        ),
        PromptTemplate(
            SEARCH_QUERIES,
            "Generate between 3 and 10 distinct literature-search queries for a survey on {topic}, "
            "covering these perspectives: {perspectives}. Answer as a JSON list of strings; "
            "include the topic itself verbatim in at least one query.",
            _fb_search_queries,
        ),
        PromptTemplate(
            GROUP_LABEL,
            "These documents were clustered together while organizing references for a survey on "
            "{topic}: {titles}. Answer as JSON {{\"label\": short topical name, \"rationale\": one line}}.",
            _fb_group_label,
        ),
        PromptTemplate(
            SKELETON_INIT,
            "Draft a section-wise outline for a survey on {topic}. Goals: {goals}. Perspectives: "
            "{perspectives}. Reference groups: {groups}. Answer as JSON {{\"title\": ..., "
            "\"sections\": [{{\"heading\", \"intent\", \"group_refs\"}}]}} where each content section "
            "maps to at least one group and no two sections cover the same group set.",
            _fb_skeleton_init,
        ),
        PromptTemplate(
            DIGEST_SUMMARIZE,
            "Summarize reference {doc_id} ('{title}') in at most 150 words and suggest how the "
            "outline of '{survey_title}' should change to accommodate it. Body: {body}. Outline "
            "sections: {sections}. Answer as JSON {{\"summary\", \"suggestions\": [{{\"kind\", "
            "\"target_node_id\", \"text\"}}]}} with kind one of add|merge|split|reorder|emphasize.",
            _fb_digest_summarize,
        ),
        PromptTemplate(
            ORCHESTRA_PLAN,
            "You plan the next actions for a survey pipeline in stage {stage}. Available tools: "
            "{available}. Skeleton present: {has_skeleton}; corpus size {corpus_size}; digests "
            "{digest_count}; revision plan present: {has_plan}; coverage {coverage}; refinement "
            "layers run {layers_run} of {max_layers}; last layer gain {last_gain}; undigested "
            "documents: {missing_doc_ids}; pending user feedback: {user_feedback}. Recent history: "
            "{history}. Answer with a single JSON object {{\"steps\": [{{\"tool_name\", \"args\", "
            "\"rationale\"}}], \"stop\": bool}} using only the available tool names.",
            _fb_orchestra_plan,
        ),
        PromptTemplate(
            WRITING_SECTION,
            "Write the section '{heading}' of a survey on {topic}. Section intent: {intent}. "
            "Cite these references inline using [@doc_id] tokens: {docs}. Prose only.",
            _fb_writing_section,
        ),
    ]
}

_DECLARED_IDS = {
    CONSENSUS_QUESTION, CONSENSUS_BRIEF, SEARCH_QUERIES, GROUP_LABEL,
    SKELETON_INIT, DIGEST_SUMMARIZE, ORCHESTRA_PLAN, WRITING_SECTION,
}


def verify_registry() -> None:
    """Startup check: declared template ids and registry entries match 1:1."""
    registered = set(REGISTRY)
    if registered != _DECLARED_IDS:
        missing = _DECLARED_IDS - registered
        extra = registered - _DECLARED_IDS
        raise RuntimeError(f"prompt registry out of sync: missing={missing} extra={extra}")
    for template in REGISTRY.values():
        template.placeholders()  # forces a parse of the template text
