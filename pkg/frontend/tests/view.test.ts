import { describe, expect, it } from 'vitest'

import { buildResultList, errorMessage, formatDistance } from '../src/view.js'
import { makeResponse, mulberry32 } from './helpers.js'

const audioUrl = (t: string, o: number) => `/api/audio/${t}?offset=${o}&dur=10`

describe('buildResultList', () => {
  it('renders rows in rank order for 50 randomized responses', () => {
    const rand = mulberry32(1234)
    for (let trial = 0; trial < 50; trial++) {
      const n = 1 + Math.floor(rand() * 20)
      const response = makeResponse(rand, n)
      const list = buildResultList(response, audioUrl)
      expect(list.rows.length).toBe(n)
      expect(list.rows.map((r) => r.rank)).toEqual(
        response.results.map((r) => r.rank),
      )
      expect(list.rows.map((r) => r.trackId)).toEqual(
        response.results.map((r) => r.track_id),
      )
      expect(list.consistencyWarning).toBeNull()
    }
  })

  it('formats distances to exactly 3 decimals from the API value', () => {
    const rand = mulberry32(99)
    const response = makeResponse(rand, 8)
    const list = buildResultList(response, audioUrl)
    list.rows.forEach((row, i) => {
      expect(row.distanceText).toBe(response.results[i].distance.toFixed(3))
      expect(row.distanceText).toMatch(/^\d+\.\d{3}$/)
    })
  })

  it('shows an empty-state message for zero results', () => {
    const list = buildResultList({ results: [] }, audioUrl)
    expect(list.rows).toEqual([])
    expect(list.emptyMessage).not.toBeNull()
  })

  it('flags out-of-order distances with a consistency warning', () => {
    const response = {
      results: [
        { rank: 1, track_id: 'a', offset_s: 0, distance: 0.1, genre: 'g', mood: 'm' },
        { rank: 2, track_id: 'b', offset_s: 0, distance: 0.4, genre: 'g', mood: 'm' },
        { rank: 3, track_id: 'c', offset_s: 0, distance: 0.2, genre: 'g', mood: 'm' },
      ],
    }
    const list = buildResultList(response, audioUrl)
    expect(list.consistencyWarning).not.toBeNull()
  })

  it('builds playback URLs from the API helper', () => {
    const response = makeResponse(mulberry32(5), 3)
    const list = buildResultList(response, audioUrl)
    list.rows.forEach((row, i) => {
      expect(row.audioUrl).toBe(audioUrl(response.results[i].track_id,
                                         response.results[i].offset_s))
    })
  })
})

describe('formatDistance', () => {
  it('is fixed-width 3 decimals', () => {
    expect(formatDistance(0)).toBe('0.000')
    expect(formatDistance(1.23456)).toBe('1.235')
    expect(formatDistance(2)).toBe('2.000')
  })
})

describe('errorMessage', () => {
  it('maps the short-query code to a friendly message', () => {
    expect(errorMessage(422, 'query_too_short', 'x')).toContain('10 seconds')
  })
  it('falls back to the status for unknown codes', () => {
    expect(errorMessage(500, 'weird', 'kaput')).toContain('500')
  })
})
