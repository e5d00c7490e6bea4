import { describe, expect, it } from 'vitest';

import {
  clearError,
  currentTask,
  initialState,
  queueFinished,
  recordVerdict,
  skipTask,
  withServerState,
  withSubmitError,
} from '../src/model.js';
import type { Progress, Task, TasksPage } from '../src/types.js';

function task(id: string, stepIndex = 0): Task {
  return {
    id,
    trace_index: 0,
    step_index: stepIndex,
    question: 'q',
    gold_answer: 'g',
    step: 'text',
    rationale: 'why',
    llm_score: 1,
    annotator: 'judge',
    num_steps: 3,
    verdict: 'pending',
    context: [],
  };
}

function page(tasks: Task[], totalPending = tasks.length): TasksPage {
  return { tasks, total_pending: totalPending, page: 0, page_size: 20 };
}

const progress: Progress = {
  total: 3,
  reviewed: 0,
  pending: 3,
  accepted: 0,
  rejected: 0,
  complete: false,
};

describe('session state', () => {
  it('mirrors the server queue and exposes the current task', () => {
    let state = initialState('rev');
    state = withServerState(state, page([task('a'), task('b')]), progress);
    expect(currentTask(state)?.id).toBe('a');
    expect(state.totalPending).toBe(2);
    expect(queueFinished(state)).toBe(false);
  });

  it('clamps the cursor when the refreshed queue shrinks', () => {
    let state = initialState('rev');
    state = withServerState(state, page([task('a'), task('b'), task('c')]), progress);
    state = skipTask(skipTask(state));
    expect(currentTask(state)?.id).toBe('c');
    state = withServerState(state, page([task('a')]), progress);
    expect(currentTask(state)?.id).toBe('a');
  });

  it('counts session verdicts and resets the cursor', () => {
    let state = initialState('rev');
    state = withServerState(state, page([task('a'), task('b')]), progress);
    state = recordVerdict(state, 'accepted');
    state = recordVerdict(state, 'rejected');
    expect(state.stats).toEqual({ reviewed: 2, accepted: 1, rejected: 1 });
    expect(state.position).toBe(0);
  });

  it('skip wraps around the pending queue without a verdict', () => {
    let state = initialState('rev');
    state = withServerState(state, page([task('a'), task('b')]), progress);
    state = skipTask(state);
    expect(currentTask(state)?.id).toBe('b');
    state = skipTask(state);
    expect(currentTask(state)?.id).toBe('a');
    expect(state.stats.reviewed).toBe(0);
  });

  it('keeps the task and the choice when a submission fails', () => {
    let state = initialState('rev');
    state = withServerState(state, page([task('a')]), progress);
    state = withSubmitError(state, 'rejected', 'HTTP 500: journal write failed');
    expect(currentTask(state)?.id).toBe('a');
    expect(state.pendingChoice).toBe('rejected');
    expect(state.error).toContain('journal write failed');
    state = clearError(state);
    expect(state.error).toBeNull();
    expect(state.pendingChoice).toBeNull();
  });

  it('reports completion from the server count, not local state', () => {
    let state = initialState('rev');
    state = withServerState(state, page([], 0), { ...progress, pending: 0, complete: true });
    expect(queueFinished(state)).toBe(true);
    expect(currentTask(state)).toBeNull();
  });
});
