// Thin typed client over the chat service HTTP API. The fetch function
// is injectable so tests run against a recorded mock server.

import type { ChatRequest, ChatResponse, TopicsResponse } from './types'

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message)
  }
}

export interface ChatApi {
  chat(req: ChatRequest): Promise<ChatResponse>
  topics(bundle: string | null): Promise<TopicsResponse>
  bundles(): Promise<string[]>
}

export const createApi = (baseUrl: string, fetchFn: FetchLike): ChatApi => {
  const request = async <T>(path: string, init?: RequestInit): Promise<T> => {
    let resp: Response
    try {
      resp = await fetchFn(`${baseUrl}${path}`, init)
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`)
    }
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`
      try {
        const body = (await resp.json()) as { error?: string }
        if (body && body.error) detail = `${detail}: ${body.error}`
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(resp.status, detail)
    }
    return (await resp.json()) as T
  }

  return {
    chat: (req) =>
      request<ChatResponse>('/api/chat', {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(req),
      }),
    topics: (bundle) =>
      request<TopicsResponse>(
        bundle ? `/api/topics?bundle=${encodeURIComponent(bundle)}` : '/api/topics',
      ),
    bundles: () => request<string[]>('/api/bundles'),
  }
}
