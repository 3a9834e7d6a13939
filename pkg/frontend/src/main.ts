import { ApiClient } from './api.js'
import { SearchApp } from './app.js'
import { renderCatalog, renderInto } from './dom.js'

const api = new ApiClient()
const resultsRoot = document.getElementById('results-root') as HTMLElement
const catalogRoot = document.getElementById('catalog-root') as HTMLElement
const uploadInput = document.getElementById('upload') as HTMLInputElement
const kInput = document.getElementById('k') as HTMLInputElement

const app = new SearchApp(api)
app.setRenderer(renderInto(resultsRoot, app))

kInput.addEventListener('change', () => {
  const k = Number(kInput.value)
  if (Number.isFinite(k) && k >= 1) app.setK(Math.min(k, 100))
})

uploadInput.addEventListener('change', () => {
  const file = uploadInput.files?.[0]
  if (file) void app.uploadQuery(file, file.name)
})

api
  .tracks()
  .then((tracks) => {
    renderCatalog(catalogRoot, tracks, (trackId) => {
      void app.searchClip(trackId, 0.0, app.state.query !== null)
    })
  })
  .catch((err) => {
    catalogRoot.textContent = `Could not load catalog: ${err}`
  })
