// One operator session on one frame: the current pose record, the revision
// it was read at, and the steering step sizes.  Every edit is one of the six
// axis increments applied through `adjustPose`, which writes optimistically
// and adopts the server's state when it loses a revision race — a stale edit
// is dropped, never replayed on top of someone else's pose.

import { ApiError, Client, SaveResult } from "./api.js";
import { Axis, PoseRecord, rotatePose, translatePose } from "./pose.js";

export type AdjustKind = "rotate" | "translate";
export type Direction = 1 | -1;

export interface SessionState {
  frameId: string;
  pose: PoseRecord;
  revision: number;
  opacity: number;
  /** Rotation step in degrees per click/keypress. */
  rotStepDeg: number;
  /** Translation step in millimetres per click/keypress. */
  transStepMm: number;
}

export interface AdjustResult {
  state: SessionState;
  /** False when the edit lost the optimistic-concurrency race: `state` is
   * then the server's current truth and the local edit was discarded. */
  applied: boolean;
}

export const DEFAULT_OPACITY = 0.5;
export const DEFAULT_ROT_STEP_DEG = 1;
export const DEFAULT_TRANS_STEP_MM = 0.5;

/** Read the frame's current pose and start a session on it. */
export async function openSession(
  client: Client,
  frameId: string,
  overrides: Partial<Pick<SessionState, "opacity" | "rotStepDeg" | "transStepMm">> = {},
): Promise<SessionState> {
  const current = await client.getPose(frameId);
  return {
    frameId,
    pose: current.pose,
    revision: current.revision,
    opacity: DEFAULT_OPACITY,
    rotStepDeg: DEFAULT_ROT_STEP_DEG,
    transStepMm: DEFAULT_TRANS_STEP_MM,
    ...overrides,
  };
}

/**
 * Apply one axis increment (rotate about or translate along a camera axis)
 * on top of the state's revision.  On success the returned state carries the
 * server's bumped revision; on a stale-revision conflict the server's state
 * is adopted unchanged and `applied` is false.
 */
export async function adjustPose(
  client: Client,
  state: SessionState,
  kind: AdjustKind,
  axis: Axis,
  direction: Direction,
): Promise<AdjustResult> {
  const edited: PoseRecord =
    kind === "rotate"
      ? rotatePose(state.pose, axis, direction * state.rotStepDeg)
      : translatePose(state.pose, axis, direction * state.transStepMm);
  try {
    const accepted = await client.writePose(state.frameId, state.revision, edited);
    return {
      state: { ...state, pose: accepted.pose, revision: accepted.revision },
      applied: true,
    };
  } catch (err) {
    if (err instanceof ApiError) {
      const current = err.conflictState();
      if (current) {
        return {
          state: { ...state, pose: current.pose, revision: current.revision },
          applied: false,
        };
      }
    }
    throw err;
  }
}

/** Persist the session's pose server-side as ground truth for its frame.
 * The session itself is untouched — saving is an explicit, separate act. */
export function saveGroundTruth(client: Client, state: SessionState): Promise<SaveResult> {
  return client.saveGroundTruth(state.frameId);
}

/** Fetch the overlay rendering for the session's pose and opacity. */
export function renderOverlay(client: Client, state: SessionState): Promise<ArrayBuffer> {
  return client.renderOverlay(state.frameId, state.pose, state.opacity);
}
