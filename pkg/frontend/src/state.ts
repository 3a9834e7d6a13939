/**
 * Search session state: the current query, its results, and the history
 * stack behind the back button. Pure data + transition functions so the
 * whole loop is testable without a DOM.
 */

import type { SearchResponse } from './api.js'

export type QueryDescriptor =
  | { kind: 'clip'; trackId: string; offsetS: number }
  | { kind: 'upload'; fileName: string }

export interface UiSearchState {
  query: QueryDescriptor | null
  response: SearchResponse | null
  k: number
  history: Array<{ query: QueryDescriptor; response: SearchResponse }>
}

export function initialState(k = 10): UiSearchState {
  return { query: null, response: null, k, history: [] }
}

/** Install a fresh search (no history push): used for the very first query. */
export function withResults(
  state: UiSearchState,
  query: QueryDescriptor,
  response: SearchResponse,
): UiSearchState {
  return { ...state, query, response }
}

/** Push the current query onto history and move to the promoted one. */
export function promote(
  state: UiSearchState,
  query: QueryDescriptor,
  response: SearchResponse,
): UiSearchState {
  if (state.query === null || state.response === null) {
    return withResults(state, query, response)
  }
  return {
    ...state,
    query,
    response,
    history: [...state.history, { query: state.query, response: state.response }],
  }
}

/** Pop one history entry; no-op on an empty stack. */
export function back(state: UiSearchState): UiSearchState {
  if (state.history.length === 0) return state
  const previous = state.history[state.history.length - 1]
  return {
    ...state,
    query: previous.query,
    response: previous.response,
    history: state.history.slice(0, -1),
  }
}

/**
 * Latest-wins guard for in-flight searches: starting a new request
 * invalidates (and aborts) any pending one.
 */
export class SearchGate {
  private current = 0
  private controller: AbortController | null = null

  begin(): { token: number; signal: AbortSignal } {
    this.controller?.abort()
    this.controller = new AbortController()
    this.current += 1
    return { token: this.current, signal: this.controller.signal }
  }

  isCurrent(token: number): boolean {
    return token === this.current
  }
}
