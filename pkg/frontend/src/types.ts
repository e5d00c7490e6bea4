// Wire types mirroring the review API responses.

export interface ContextStep {
  step_index: number;
  step: string;
  llm_score: number;
  verdict: string;
}

export interface Task {
  id: string;
  trace_index: number;
  step_index: number;
  question: string;
  gold_answer: string;
  step: string;
  rationale: string;
  llm_score: number;
  annotator: string;
  num_steps: number;
  verdict: string;
  context: ContextStep[];
}

export interface TasksPage {
  tasks: Task[];
  total_pending: number;
  page: number;
  page_size: number;
}

export interface Progress {
  total: number;
  reviewed: number;
  pending: number;
  accepted: number;
  rejected: number;
  complete: boolean;
}

export interface AnnotatorAccuracy {
  reviewed?: number;
  accepted?: number;
  rejected?: number;
  accuracy?: number;
  no_data?: boolean;
}

export interface AccuracySummary {
  annotators: Record<string, AnnotatorAccuracy>;
}

export type VerdictChoice = 'accepted' | 'rejected';
