// Thin typed client for the review API. The server is the single source of
// truth; this module never caches verdicts.

import type { AccuracySummary, Progress, TasksPage, VerdictChoice } from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function readDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && body.detail !== undefined) return String(body.detail);
    return JSON.stringify(body);
  } catch {
    return response.statusText || 'request failed';
  }
}

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path);
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    if (!response.ok) throw new ApiError(response.status, await readDetail(response));
    return (await response.json()) as T;
  }

  fetchTasks(reviewer: string, page = 0, pageSize = 20): Promise<TasksPage> {
    const params = new URLSearchParams({
      reviewer,
      page: String(page),
      page_size: String(pageSize),
    });
    return this.getJson<TasksPage>(`/tasks?${params.toString()}`);
  }

  fetchProgress(): Promise<Progress> {
    return this.getJson<Progress>('/progress');
  }

  fetchAccuracy(): Promise<AccuracySummary> {
    return this.getJson<AccuracySummary>('/accuracy');
  }

  async submitVerdict(taskId: string, verdict: VerdictChoice, reviewer: string): Promise<void> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/tasks/${encodeURIComponent(taskId)}/verdict`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ verdict, reviewer }),
      });
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    if (!response.ok) throw new ApiError(response.status, await readDetail(response));
  }
}
