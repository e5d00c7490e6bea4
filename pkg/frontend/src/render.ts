// HTML renderers. Pure string builders so they run under node in tests;
// every number shown comes verbatim from an API response.

import type { AccuracySummary, Progress, Task } from './types.js';
import type { SessionState } from './model.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

function verdictBadge(verdict: string): string {
  return `<span class="badge badge-${escapeHtml(verdict)}">${escapeHtml(verdict)}</span>`;
}

export function renderStats(state: SessionState): string {
  const { reviewed, accepted, rejected } = state.stats;
  const pending = state.totalPending;
  const progress = state.progress;
  const server = progress
    ? ` &middot; server: ${progress.reviewed}/${progress.total} reviewed`
    : '';
  return (
    `<div class="stats">session: ${reviewed} reviewed ` +
    `(${accepted} accepted, ${rejected} rejected) &middot; ` +
    `${pending} pending${server}</div>`
  );
}

export function renderError(message: string): string {
  return (
    `<div class="banner error" role="alert">${escapeHtml(message)} ` +
    `<button id="retry" type="button">Retry</button></div>`
  );
}

export function renderTask(task: Task, state: SessionState): string {
  const context = task.context
    .map(
      (c) =>
        `<li class="context-step">` +
        `<span class="step-no">${c.step_index}</span> ` +
        `<span class="score">score ${c.llm_score}</span> ` +
        `${verdictBadge(c.verdict)} ` +
        `<span class="text">${escapeHtml(c.step)}</span></li>`,
    )
    .join('');
  const selected = state.pendingChoice ?? (task.verdict !== 'pending' ? task.verdict : null);
  const mark = (choice: string) => (selected === choice ? ' selected' : '');
  return `
<section class="task" data-task-id="${escapeHtml(task.id)}">
  <div class="field question"><h2>Question</h2><p>${escapeHtml(task.question)}</p></div>
  <div class="field gold"><h2>Gold answer</h2><p>${escapeHtml(task.gold_answer)}</p></div>
  <div class="field context"><h2>Steps so far</h2><ol start="0">${context}</ol></div>
  <div class="field step active-step">
    <h2>Step ${task.step_index + 1} of ${task.num_steps}</h2>
    <p>${escapeHtml(task.step)}</p>
  </div>
  <div class="field rationale"><h2>Judge rationale</h2><p>${escapeHtml(task.rationale)}</p></div>
  <div class="field score"><h2>Judge score</h2><p class="llm-score">${task.llm_score}</p></div>
  <div class="controls">
    <button id="accept" type="button" class="accept${mark('accepted')}">Accept (a)</button>
    <button id="reject" type="button" class="reject${mark('rejected')}">Reject (r)</button>
    <button id="skip" type="button">Skip (s)</button>
  </div>
</section>`;
}

export function renderCompletion(progress: Progress, accuracy: AccuracySummary): string {
  const rows = Object.entries(accuracy.annotators)
    .map(([tag, summary]) => {
      const value = summary.no_data ? 'no data' : String(summary.accuracy);
      const counts = summary.no_data ? '' : ` (${summary.accepted}/${summary.reviewed} accepted)`;
      return `<tr><td>${escapeHtml(tag)}</td><td>${escapeHtml(value)}${counts}</td></tr>`;
    })
    .join('');
  return `
<section class="completion">
  <h2>Queue complete</h2>
  <p>${progress.reviewed} of ${progress.total} steps reviewed
     (${progress.accepted} accepted, ${progress.rejected} rejected).</p>
  <table class="accuracy"><thead><tr><th>Annotator</th><th>Accuracy</th></tr></thead>
  <tbody>${rows}</tbody></table>
</section>`;
}

export function renderLoading(): string {
  return '<div class="banner">Loading tasks&hellip;</div>';
}
