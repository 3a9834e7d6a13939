/**
 * Controller for the exploration loop: issue searches, promote results to
 * new queries, walk back through history. Rendering is delegated to a
 * callback so the controller runs headless in tests.
 */

import { ApiClient, ApiError } from './api.js'
import {
  back,
  initialState,
  promote,
  SearchGate,
  withResults,
  type QueryDescriptor,
  type UiSearchState,
} from './state.js'
import { buildResultList, errorMessage, type ResultListView } from './view.js'

export interface AppView {
  state: UiSearchState
  list: ResultListView | null
  errorBanner: string | null
  busy: boolean
}

export class SearchApp {
  private api: ApiClient
  private gate = new SearchGate()
  private render: (view: AppView) => void
  state: UiSearchState
  errorBanner: string | null = null
  busy = false

  constructor(api: ApiClient, render: (view: AppView) => void = () => {}) {
    this.api = api
    this.render = render
    this.state = initialState()
  }

  setRenderer(render: (view: AppView) => void): void {
    this.render = render
    this.publish()
  }

  private publish(): void {
    const list = this.state.response
      ? buildResultList(this.state.response, (t, o) => this.api.audioUrl(t, o))
      : null
    this.render({ state: this.state, list, errorBanner: this.errorBanner, busy: this.busy })
  }

  view(): AppView {
    const list = this.state.response
      ? buildResultList(this.state.response, (t, o) => this.api.audioUrl(t, o))
      : null
    return { state: this.state, list, errorBanner: this.errorBanner, busy: this.busy }
  }

  setK(k: number): void {
    this.state = { ...this.state, k }
  }

  /** Search from a catalog clip; pushHistory governs promote vs fresh. */
  async searchClip(trackId: string, offsetS: number, pushHistory: boolean): Promise<void> {
    const query: QueryDescriptor = { kind: 'clip', trackId, offsetS }
    const { token, signal } = this.gate.begin()
    this.busy = true
    this.errorBanner = null
    this.publish()
    try {
      const response = await this.api.searchClip(trackId, offsetS, this.state.k, signal)
      if (!this.gate.isCurrent(token)) return
      this.state = pushHistory
        ? promote(this.state, query, response)
        : withResults(this.state, query, response)
    } catch (err) {
      if (!this.gate.isCurrent(token)) return
      this.errorBanner = this.describe(err)
    } finally {
      if (this.gate.isCurrent(token)) {
        this.busy = false
        this.publish()
      }
    }
  }

  /** "Search from this" on a result row. */
  async promoteResult(rank: number): Promise<void> {
    const row = this.state.response?.results.find((r) => r.rank === rank)
    if (!row) return
    await this.searchClip(row.track_id, row.offset_s, true)
  }

  async uploadQuery(file: File | Blob, fileName: string): Promise<void> {
    const query: QueryDescriptor = { kind: 'upload', fileName }
    if (!fileName.toLowerCase().endsWith('.wav')) {
      this.errorBanner = 'Only WAV files can be uploaded.'
      this.publish()
      return
    }
    const { token, signal } = this.gate.begin()
    this.busy = true
    this.errorBanner = null
    this.publish()
    try {
      const response = await this.api.searchUpload(file, this.state.k, signal)
      if (!this.gate.isCurrent(token)) return
      this.state = promote(this.state, query, response)
    } catch (err) {
      if (!this.gate.isCurrent(token)) return
      this.errorBanner = this.describe(err)
    } finally {
      if (this.gate.isCurrent(token)) {
        this.busy = false
        this.publish()
      }
    }
  }

  /** Pop history; the service is not re-queried. */
  goBack(): void {
    this.state = back(this.state)
    this.errorBanner = null
    this.publish()
  }

  private describe(err: unknown): string {
    if (err instanceof ApiError) {
      return errorMessage(err.status, err.code, err.message)
    }
    return `Network failure: ${err instanceof Error ? err.message : String(err)}`
  }
}
