/**
 * Thin DOM layer: draws an AppView into the page. All ordering and
 * formatting decisions were already made by the view models.
 */

import type { AppView, SearchApp } from './app.js'
import type { TrackInfo } from './api.js'

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  return node
}

export function renderInto(root: HTMLElement, app: SearchApp): (view: AppView) => void {
  const banner = el('div', 'banner')
  banner.hidden = true
  const status = el('div', 'status')
  const backButton = el('button', 'back', '← Back')
  backButton.hidden = true
  backButton.addEventListener('click', () => app.goBack())
  const queryLabel = el('span', 'query-label')
  const list = el('ol', 'results')

  const header = el('div', 'results-header')
  header.append(backButton, queryLabel)
  root.append(banner, status, header, list)

  return (view: AppView) => {
    banner.hidden = view.errorBanner === null
    banner.textContent = view.errorBanner ?? ''
    status.textContent = view.busy ? 'Searching…' : ''
    backButton.hidden = view.state.history.length === 0

    const q = view.state.query
    queryLabel.textContent =
      q === null
        ? 'Pick a track below or upload a WAV to start.'
        : q.kind === 'clip'
          ? `Query: ${q.trackId} @ ${q.offsetS.toFixed(1)}s`
          : `Query: upload ${q.fileName}`

    list.replaceChildren()
    if (!view.list) return
    if (view.list.consistencyWarning) {
      banner.hidden = false
      banner.textContent = view.list.consistencyWarning
    }
    if (view.list.emptyMessage) {
      list.append(el('li', 'empty', view.list.emptyMessage))
      return
    }
    for (const row of view.list.rows) {
      const item = el('li', 'result-row')
      item.dataset.rank = String(row.rank)
      const label = el('span', 'label',
        `#${row.rank}  ${row.trackId} @ ${row.offsetS.toFixed(1)}s  ` +
        `d=${row.distanceText}  [${row.genre} / ${row.mood}]`)
      const audio = el('audio')
      audio.controls = true
      audio.preload = 'none'
      audio.src = row.audioUrl
      const searchFrom = el('button', 'promote', 'Search from this')
      searchFrom.addEventListener('click', () => void app.promoteResult(row.rank))
      item.append(label, audio, searchFrom)
      list.append(item)
    }
  }
}

export function renderCatalog(
  root: HTMLElement,
  tracks: TrackInfo[],
  onPick: (trackId: string) => void,
): void {
  const list = el('ul', 'catalog')
  for (const t of tracks) {
    const item = el('li', 'catalog-row')
    const button = el('button', 'pick',
      `${t.track_id}  [${t.genre} / ${t.mood}]  ${t.duration_s.toFixed(0)}s`)
    button.addEventListener('click', () => onPick(t.track_id))
    item.append(button)
    list.append(item)
  }
  root.replaceChildren(list)
}
