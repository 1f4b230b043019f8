/** Thin typed client for the annotation service; all state lives server-side. */

import type {
  ModificationResult, SessionCreate, SessionStatus, ShapePayload, Task,
  TreeNode, VerificationResult,
} from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string,
              private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { 'content-type': 'application/json' },
      ...init,
    });
    const body = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, body || resp.statusText);
    }
    return JSON.parse(body) as T;
  }

  createSession(req: SessionCreate): Promise<{ session_id: string }> {
    return this.request('/sessions', {
      method: 'POST',
      body: JSON.stringify(req),
    });
  }

  status(sessionId: string): Promise<SessionStatus> {
    return this.request(`/sessions/${sessionId}`);
  }

  nextTask(sessionId: string): Promise<Task> {
    return this.request(`/sessions/${sessionId}/tasks/next`);
  }

  tree(sessionId: string): Promise<TreeNode> {
    return this.request(`/sessions/${sessionId}/tree`);
  }

  shape(sessionId: string, shapeId: string): Promise<ShapePayload> {
    return this.request(`/shapes/${shapeId}?session=${sessionId}`);
  }

  report(sessionId: string): Promise<Record<string, unknown>> {
    return this.request(`/sessions/${sessionId}/report`);
  }

  submitVerdicts(sessionId: string, batchId: string,
                 verdicts: Record<string, boolean>,
                 idempotencyKey: string): Promise<VerificationResult> {
    return this.request(`/sessions/${sessionId}/verifications`, {
      method: 'POST',
      body: JSON.stringify({
        batch_id: batchId,
        verdicts,
        idempotency_key: idempotencyKey,
      }),
    });
  }

  submitModification(sessionId: string, shapeId: string,
                     partLabels: Record<number, string> | null,
                     groupLabel: string | null,
                     idempotencyKey: string): Promise<ModificationResult> {
    return this.request(`/sessions/${sessionId}/modifications`, {
      method: 'POST',
      body: JSON.stringify({
        shape_id: shapeId,
        part_labels: partLabels,
        group_label: groupLabel,
        idempotency_key: idempotencyKey,
      }),
    });
  }
}
