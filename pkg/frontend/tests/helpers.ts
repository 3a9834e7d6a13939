import type { FetchLike, SearchResponse, SearchResult } from '../src/api.js'

/** Deterministic PRNG so randomized tests are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a |= 0
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export function makeResponse(rand: () => number, n: number): SearchResponse {
  let d = rand() * 0.2
  const results: SearchResult[] = []
  for (let i = 0; i < n; i++) {
    results.push({
      rank: i + 1,
      track_id: `track-${Math.floor(rand() * 1000)}`,
      offset_s: Math.round(rand() * 300) / 10,
      distance: d,
      genre: `genre-${Math.floor(rand() * 4)}`,
      mood: `mood-${Math.floor(rand() * 2)}`,
    })
    d += rand() * 0.1
  }
  return { results }
}

export interface MockCall {
  url: string
  init?: RequestInit
}

/**
 * fetch stand-in fed from a queue of responders. Each search request pops
 * the next responder; non-search endpoints can be added via routes.
 */
export function mockFetch(
  queue: Array<(call: MockCall) => { status: number; body: unknown }>,
): { fetch: FetchLike; calls: MockCall[] } {
  const calls: MockCall[] = []
  const fetchImpl: FetchLike = async (url, init) => {
    const call = { url, init }
    calls.push(call)
    const responder = queue.shift()
    if (!responder) throw new Error(`unexpected request: ${url}`)
    const { status, body } = responder(call)
    return new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    })
  }
  return { fetch: fetchImpl, calls }
}

export function ok(body: unknown) {
  return () => ({ status: 200, body })
}

export function fail(status: number, code: string, error: string) {
  return () => ({ status, body: { error, code } })
}
