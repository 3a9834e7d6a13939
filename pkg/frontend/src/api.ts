/**
 * Typed client for the search service. The fetch implementation is
 * injectable so tests can mock the network.
 */

export interface SearchResult {
  rank: number
  track_id: string
  offset_s: number
  distance: number
  genre: string
  mood: string
}

export interface SearchResponse {
  results: SearchResult[]
}

export interface TrackInfo {
  track_id: string
  genre: string
  mood: string
  duration_s: number
  split: string
}

export interface ApiErrorBody {
  error: string
  code: string
}

export class ApiError extends Error {
  status: number
  code: string

  constructor(status: number, body: ApiErrorBody) {
    super(body.error)
    this.status = status
    this.code = body.code
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

async function parseError(response: Response): Promise<ApiError> {
  let body: ApiErrorBody = { error: `HTTP ${response.status}`, code: 'http_error' }
  try {
    const parsed = await response.json()
    if (parsed && typeof parsed.error === 'string') {
      body = parsed
    }
  } catch {
    // non-JSON error body: keep the generic message
  }
  return new ApiError(response.status, body)
}

export class ApiClient {
  private fetchImpl: FetchLike
  private base: string

  constructor(fetchImpl: FetchLike = fetch.bind(globalThis), base = '') {
    this.fetchImpl = fetchImpl
    this.base = base
  }

  async health(): Promise<{ status: string; index_size: number }> {
    const r = await this.fetchImpl(`${this.base}/api/health`)
    if (!r.ok) throw await parseError(r)
    return r.json()
  }

  async tracks(split?: string): Promise<TrackInfo[]> {
    const suffix = split ? `?split=${encodeURIComponent(split)}` : ''
    const r = await this.fetchImpl(`${this.base}/api/tracks${suffix}`)
    if (!r.ok) throw await parseError(r)
    return r.json()
  }

  async searchClip(
    trackId: string,
    offsetS: number,
    k: number,
    signal?: AbortSignal,
  ): Promise<SearchResponse> {
    const r = await this.fetchImpl(`${this.base}/api/search`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        catalog_clip: { track_id: trackId, offset_s: offsetS },
        k,
        exclude_self: true,
      }),
      signal,
    })
    if (!r.ok) throw await parseError(r)
    return r.json()
  }

  async searchUpload(file: File | Blob, k: number, signal?: AbortSignal): Promise<SearchResponse> {
    const form = new FormData()
    form.append('file', file)
    form.append('k', String(k))
    const r = await this.fetchImpl(`${this.base}/api/search`, {
      method: 'POST',
      body: form,
      signal,
    })
    if (!r.ok) throw await parseError(r)
    return r.json()
  }

  audioUrl(trackId: string, offsetS: number, durS = 10): string {
    const params = new URLSearchParams({ offset: String(offsetS), dur: String(durS) })
    return `${this.base}/api/audio/${encodeURIComponent(trackId)}?${params}`
  }
}
