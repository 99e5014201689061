export { ApiError, ConsoleApi } from "./api.js";
export type { ConsoleApiOptions, FetchFn, SessionCreate } from "./api.js";
export { composeReply, dialogueView, DialogueController } from "./dialogue.js";
export type { DialogueViewModel, SendOutcome } from "./dialogue.js";
export {
  applyEvent,
  newSessionView,
  parseEventLog,
  reduceEvents,
} from "./events.js";
export {
  artifactKindOf,
  monitorView,
} from "./monitor.js";
export type { DownloadLink, MonitorRow, MonitorViewModel } from "./monitor.js";
export {
  decodeStatedOrder,
  encodeReorderDelta,
  outlineRows,
  OutlineEditor,
} from "./outline.js";
export type { OutlineRow } from "./outline.js";
export { eventsFromBytes, frameToEvent, parseSse } from "./sse.js";
export type { SseFrame } from "./sse.js";
export * from "./types.js";
