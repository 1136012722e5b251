import type {
  AdjudicationBody,
  AgreementReport,
  DisagreementRow,
  LabelBody,
  NextResponse,
  SubmitAck,
  Summary,
} from './types.js'

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export interface ApiResult<T> {
  status: number
  body: T
}

/**
 * Thin typed client for the human-eval service. Network failures reject
 * with whatever error the fetch implementation throws; non-2xx statuses
 * resolve so callers can branch on conflicts and validation errors.
 */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<ApiResult<T>> {
    const resp = await this.fetchFn(this.baseUrl + path, init)
    const body = (await resp.json()) as T
    return { status: resp.status, body }
  }

  nextTask(annotatorId: string): Promise<ApiResult<NextResponse>> {
    return this.request<NextResponse>(`/api/annotators/${encodeURIComponent(annotatorId)}/next`)
  }

  submitLabel(taskId: string, body: LabelBody): Promise<ApiResult<SubmitAck>> {
    return this.request<SubmitAck>(`/api/tasks/${encodeURIComponent(taskId)}/labels`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    })
  }

  agreement(): Promise<ApiResult<AgreementReport>> {
    return this.request<AgreementReport>('/api/agreement')
  }

  disagreements(): Promise<ApiResult<DisagreementRow[]>> {
    return this.request<DisagreementRow[]>('/api/disagreements')
  }

  adjudicate(body: AdjudicationBody): Promise<ApiResult<{ stored: boolean }>> {
    return this.request<{ stored: boolean }>('/api/adjudications', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    })
  }

  summary(): Promise<ApiResult<Summary>> {
    return this.request<Summary>('/api/summary')
  }
}
