// Thin client for the annotation API with an injectable fetch, so the
// protocol tests run against a stub instead of a server.

import { AnnotationTask, RatingBody, SubmitResult } from './types.js'

export interface HttpResponse {
  status: number
  json(): Promise<unknown>
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike,
    private readonly token?: string,
  ) {}

  private headers(json = false): Record<string, string> {
    const out: Record<string, string> = {}
    if (json) out['Content-Type'] = 'application/json'
    if (this.token) out['Authorization'] = `Bearer ${this.token}`
    return out
  }

  async fetchTasks(annotator: string, dimension?: string): Promise<AnnotationTask[]> {
    const params = new URLSearchParams({ annotator })
    if (dimension) params.set('dimension', dimension)
    const resp = await this.fetchImpl(`${this.baseUrl}/api/tasks?${params}`, { headers: this.headers() })
    if (resp.status !== 200) throw new Error(`task fetch failed with status ${resp.status}`)
    return (await resp.json()) as AnnotationTask[]
  }

  imageUrl(path: string): string {
    return `${this.baseUrl}${path}`
  }

  async submitRating(body: RatingBody): Promise<SubmitResult> {
    let resp: HttpResponse
    try {
      resp = await this.fetchImpl(`${this.baseUrl}/api/ratings`, {
        method: 'POST',
        headers: this.headers(true),
        body: JSON.stringify(body),
      })
    } catch {
      return { status: 'network_error' }
    }
    if (resp.status === 201) return { status: 'created' }
    if (resp.status === 409) return { status: 'duplicate' }
    if (resp.status === 422) {
      const payload = (await resp.json()) as { detail?: { field: string; error: string }[] }
      return { status: 'invalid', errors: payload.detail ?? [] }
    }
    return { status: 'network_error' }
  }
}
