/** Run monitor: live event timeline plus artifact download links. */

import type {
  ArtifactKind,
  ConsoleSessionView,
  TimelineRow,
  TranscriptEntry,
} from "./types.js";

export interface MonitorRow extends TimelineRow {
  /** Elapsed logical time of the matching journal entry, when joinable. */
  durationTicks: number | null;
}

export interface DownloadLink {
  kind: ArtifactKind;
  href: string;
}

export interface MonitorViewModel {
  rows: MonitorRow[];
  downloads: DownloadLink[];
  stage: string;
  finished: boolean;
}

/** Map an artifact filename from `artifact_ready` to a download kind. */
export function artifactKindOf(name: string): ArtifactKind | null {
  if (name === "brief.json") return "brief";
  if (name === "tree.json") return "tree";
  if (name === "survey.md") return "survey";
  if (name === "transcript.jsonl") return "transcript";
  if (/^skeleton-v\d+\.json$/.test(name)) return "skeleton";
  return null; // checkpoints are not downloadable artifacts
}

/**
 * Durations come from the recorded journal, not the clock on the wall: each
 * finished tool call is joined (by per-tool order) to its transcript entry,
 * and its duration is the logical-time gap to the preceding entry. The view
 * stays derivable purely from the event stream plus artifact fetches.
 */
export function monitorView(
  view: ConsoleSessionView,
  transcript: TranscriptEntry[] = [],
): MonitorViewModel {
  const byTool = new Map<string, TranscriptEntry[]>();
  for (const entry of transcript) {
    const queue = byTool.get(entry.tool_name) ?? [];
    queue.push(entry);
    byTool.set(entry.tool_name, queue);
  }
  const timestamps = new Map<number, number>(
    transcript.map((entry) => [entry.seq, entry.timestamp]),
  );

  const rows: MonitorRow[] = view.timeline.map((row) => {
    let durationTicks: number | null = null;
    if (row.kind === "tool_finished") {
      const tool = row.text.split(" ", 1)[0] ?? "";
      const entry = byTool.get(tool)?.shift();
      if (entry) {
        const previous = timestamps.get(entry.seq - 1) ?? 0;
        durationTicks = entry.timestamp - previous;
      }
    }
    return { ...row, durationTicks };
  });

  const seen = new Set<ArtifactKind>();
  const downloads: DownloadLink[] = [];
  for (const name of view.artifacts) {
    const kind = artifactKindOf(name);
    if (kind && !seen.has(kind)) {
      seen.add(kind);
      downloads.push({
        kind,
        href: `/sessions/${view.sessionId}/artifacts/${kind}`,
      });
    }
  }

  return {
    rows,
    downloads,
    stage: view.stage,
    finished: view.stage === "done",
  };
}
