import { describe, expect, it } from 'vitest'

import { ApiClient } from '../src/api.js'
import { SearchApp } from '../src/app.js'
import { back, initialState, promote } from '../src/state.js'
import { fail, makeResponse, mockFetch, mulberry32, ok } from './helpers.js'

function appWith(queue: Parameters<typeof mockFetch>[0]) {
  const { fetch, calls } = mockFetch(queue)
  const app = new SearchApp(new ApiClient(fetch))
  return { app, calls }
}

describe('history stack', () => {
  it('promote then back restores the previous query and results', async () => {
    const rand = mulberry32(7)
    const first = makeResponse(rand, 5)
    const second = makeResponse(rand, 5)
    const { app } = appWith([ok(first), ok(second)])

    await app.searchClip('seed-track', 0, false)
    expect(app.state.response).toEqual(first)
    await app.promoteResult(first.results[0].rank)
    expect(app.state.response).toEqual(second)
    expect(app.state.query).toEqual({
      kind: 'clip',
      trackId: first.results[0].track_id,
      offsetS: first.results[0].offset_s,
    })
    app.goBack()
    expect(app.state.response).toEqual(first)
    expect(app.state.query).toEqual({ kind: 'clip', trackId: 'seed-track', offsetS: 0 })
    expect(app.state.history).toEqual([])
  })

  it('n promotes then n backs restores the initial descriptor (depth 5)', async () => {
    const rand = mulberry32(21)
    const responses = Array.from({ length: 6 }, () => makeResponse(rand, 4))
    const { app } = appWith(responses.map((r) => ok(r)))

    await app.searchClip('origin', 1.5, false)
    for (let depth = 0; depth < 5; depth++) {
      await app.promoteResult(app.state.response!.results[0].rank)
    }
    expect(app.state.history.length).toBe(5)
    for (let depth = 0; depth < 5; depth++) {
      app.goBack()
    }
    expect(app.state.history.length).toBe(0)
    expect(app.state.query).toEqual({ kind: 'clip', trackId: 'origin', offsetS: 1.5 })
    expect(app.state.response).toEqual(responses[0])
  })

  it('back on an empty stack is a no-op', () => {
    const state = initialState()
    expect(back(state)).toEqual(state)
  })

  it('promote issues a request with the promoted clip in the body', async () => {
    const rand = mulberry32(3)
    const first = makeResponse(rand, 3)
    const second = makeResponse(rand, 3)
    const { app, calls } = appWith([ok(first), ok(second)])
    await app.searchClip('seed', 0, false)
    await app.promoteResult(first.results[0].rank)
    const body = JSON.parse(String(calls[1].init?.body))
    expect(body.catalog_clip.track_id).toBe(first.results[0].track_id)
    expect(body.catalog_clip.offset_s).toBe(first.results[0].offset_s)
  })

  it('pure state transitions round-trip', () => {
    const rand = mulberry32(11)
    let state = initialState()
    const r0 = makeResponse(rand, 2)
    state = promote(state, { kind: 'clip', trackId: 't0', offsetS: 0 }, r0)
    const r1 = makeResponse(rand, 2)
    state = promote(state, { kind: 'clip', trackId: 't1', offsetS: 5 }, r1)
    expect(state.history.length).toBe(1)
    state = back(state)
    expect(state.query).toEqual({ kind: 'clip', trackId: 't0', offsetS: 0 })
    expect(state.response).toEqual(r0)
  })
})

describe('upload flow', () => {
  it('surfaces the 422 short-query message from the server', async () => {
    const { app } = appWith([
      fail(422, 'query_too_short', 'query is 3.00 s, need at least 10.0 s'),
    ])
    await app.uploadQuery(new Blob([new Uint8Array(64)]), 'short.wav')
    expect(app.errorBanner).toContain('10 seconds')
    expect(app.state.response).toBeNull()
  })

  it('rejects non-WAV files client-side without a request', async () => {
    const { app, calls } = appWith([])
    await app.uploadQuery(new Blob([new Uint8Array(8)]), 'song.mp3')
    expect(app.errorBanner).toContain('WAV')
    expect(calls.length).toBe(0)
  })

  it('renders results from a valid upload', async () => {
    const response = makeResponse(mulberry32(17), 6)
    const { app } = appWith([ok(response)])
    await app.uploadQuery(new Blob([new Uint8Array(64)]), 'query.wav')
    expect(app.state.response).toEqual(response)
    expect(app.state.query).toEqual({ kind: 'upload', fileName: 'query.wav' })
    expect(app.errorBanner).toBeNull()
  })

  it('keeps previous results when the upload fails', async () => {
    const rand = mulberry32(23)
    const first = makeResponse(rand, 4)
    const { app } = appWith([ok(first), fail(413, 'upload_too_large', 'too big')])
    await app.searchClip('seed', 0, false)
    await app.uploadQuery(new Blob([new Uint8Array(64)]), 'big.wav')
    expect(app.errorBanner).toContain('too large')
    expect(app.state.response).toEqual(first)
  })
})

describe('latest-wins searches', () => {
  it('a newer search supersedes a slower pending one', async () => {
    const rand = mulberry32(31)
    const slow = makeResponse(rand, 3)
    const fast = makeResponse(rand, 3)
    let releaseSlow: (() => void) | undefined
    const slowGate = new Promise<void>((resolve) => (releaseSlow = resolve))

    const { app } = (() => {
      const fetchImpl = async (url: string, init?: RequestInit) => {
        const body = JSON.parse(String(init?.body))
        if (body.catalog_clip.track_id === 'slow') {
          await slowGate
          return new Response(JSON.stringify(slow), { status: 200 })
        }
        return new Response(JSON.stringify(fast), { status: 200 })
      }
      return { app: new SearchApp(new ApiClient(fetchImpl)) }
    })()

    const pending = app.searchClip('slow', 0, false)
    await app.searchClip('fast', 0, false)
    releaseSlow!()
    await pending
    expect(app.state.response).toEqual(fast)
    expect(app.state.query).toEqual({ kind: 'clip', trackId: 'fast', offsetS: 0 })
  })
})
