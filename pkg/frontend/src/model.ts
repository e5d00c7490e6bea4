// Session view-model. Pure state transitions so the queue logic is
// testable without a DOM. Verdicts are never persisted here: after every
// successful submission the queue is refetched from the server, which
// remains the single source of truth.

import type { Progress, Task, TasksPage, VerdictChoice } from './types.js';

export interface SessionStats {
  reviewed: number;
  accepted: number;
  rejected: number;
}

export interface SessionState {
  reviewer: string;
  queue: Task[];
  position: number;
  totalPending: number;
  progress: Progress | null;
  stats: SessionStats;
  // a failed submission keeps the task in place and surfaces the error;
  // pendingChoice preserves the reviewer's selection in the form
  error: string | null;
  pendingChoice: VerdictChoice | null;
}

export function initialState(reviewer: string): SessionState {
  return {
    reviewer,
    queue: [],
    position: 0,
    totalPending: 0,
    progress: null,
    stats: { reviewed: 0, accepted: 0, rejected: 0 },
    error: null,
    pendingChoice: null,
  };
}

/** Replace the queue with the server's pending page, keeping the cursor in range. */
export function withServerState(
  state: SessionState,
  page: TasksPage,
  progress: Progress,
): SessionState {
  const position = Math.min(state.position, Math.max(0, page.tasks.length - 1));
  return {
    ...state,
    queue: page.tasks,
    position: page.tasks.length === 0 ? 0 : position,
    totalPending: page.total_pending,
    progress,
  };
}

export function currentTask(state: SessionState): Task | null {
  return state.queue[state.position] ?? null;
}

export function queueFinished(state: SessionState): boolean {
  return state.totalPending === 0;
}

/** Bump session stats after the server confirmed a verdict. */
export function recordVerdict(state: SessionState, verdict: VerdictChoice): SessionState {
  return {
    ...state,
    stats: {
      reviewed: state.stats.reviewed + 1,
      accepted: state.stats.accepted + (verdict === 'accepted' ? 1 : 0),
      rejected: state.stats.rejected + (verdict === 'rejected' ? 1 : 0),
    },
    position: 0, // the refreshed queue no longer contains the reviewed task
    error: null,
    pendingChoice: null,
  };
}

/** Move to the next pending task without a verdict (wraps around). */
export function skipTask(state: SessionState): SessionState {
  if (state.queue.length === 0) return state;
  return { ...state, position: (state.position + 1) % state.queue.length, error: null };
}

/** A submission failed: keep the task, keep the choice, surface the error. */
export function withSubmitError(
  state: SessionState,
  choice: VerdictChoice,
  message: string,
): SessionState {
  return { ...state, error: message, pendingChoice: choice };
}

export function withFetchError(state: SessionState, message: string): SessionState {
  return { ...state, error: message };
}

export function clearError(state: SessionState): SessionState {
  return { ...state, error: null, pendingChoice: null };
}
