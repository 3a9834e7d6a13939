/**
 * View models: map API responses to exactly what gets rendered, in the
 * order it gets rendered. The UI layer draws these 1:1, so asserting on
 * view models asserts on DOM order.
 */

import type { SearchResponse, SearchResult } from './api.js'

export interface ResultRowView {
  rank: number
  trackId: string
  offsetS: number
  /** API distance formatted to exactly 3 decimals; never recomputed. */
  distanceText: string
  genre: string
  mood: string
  audioUrl: string
}

export interface ResultListView {
  rows: ResultRowView[]
  emptyMessage: string | null
  /** Set when the response violates the ascending-distance contract. */
  consistencyWarning: string | null
}

export function formatDistance(d: number): string {
  return d.toFixed(3)
}

function distancesAscending(results: SearchResult[]): boolean {
  for (let i = 1; i < results.length; i++) {
    if (results[i].distance < results[i - 1].distance) return false
  }
  return true
}

export function buildResultList(
  response: SearchResponse,
  audioUrl: (trackId: string, offsetS: number) => string,
): ResultListView {
  const rows = response.results.map((r) => ({
    rank: r.rank,
    trackId: r.track_id,
    offsetS: r.offset_s,
    distanceText: formatDistance(r.distance),
    genre: r.genre,
    mood: r.mood,
    audioUrl: audioUrl(r.track_id, r.offset_s),
  }))
  return {
    rows,
    emptyMessage: rows.length === 0 ? 'No similar segments found.' : null,
    consistencyWarning: distancesAscending(response.results)
      ? null
      : 'Results arrived out of distance order; the service contract may be broken.',
  }
}

/** Human-readable message for an API failure, keyed on the error code. */
export function errorMessage(status: number, code: string, detail: string): string {
  switch (code) {
    case 'query_too_short':
      return 'Query too short: uploads need at least 10 seconds of audio.'
    case 'upload_too_large':
      return 'That file is too large to upload.'
    case 'unknown_track':
      return 'That track is no longer in the catalog.'
    default:
      return `Search failed (${status}): ${detail}`
  }
}
