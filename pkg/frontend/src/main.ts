// Browser entry point: mounts the store-driven UI into #app and wires
// DOM events. All rendering goes through the pure renderers.

import { createApi } from './api'
import { createChatStore } from './store'
import { renderApp } from './render'

const BASE_URL =
  (window as unknown as { TOPICCHAT_BASE_URL?: string }).TOPICCHAT_BASE_URL ?? ''

const root = document.getElementById('app')
if (!root) throw new Error('missing #app mount point')

const api = createApi(BASE_URL, (url, init) => fetch(url, init))
const store = createChatStore(api)

const render = () => {
  const atBottom =
    root.scrollHeight - root.scrollTop - root.clientHeight < 40
  root.innerHTML = renderApp(store.getState())
  const transcript = document.getElementById('transcript')
  if (transcript && atBottom) transcript.scrollTop = transcript.scrollHeight
}

store.subscribe(render)

root.addEventListener('click', (event) => {
  const target = event.target as HTMLElement
  if (target.id === 'send-button') void submit()
  if (target.id === 'inspector-toggle') store.toggleInspector()
  if (target.dataset.action === 'retry') void store.retryLast()
})

root.addEventListener('change', (event) => {
  const target = event.target as HTMLSelectElement
  if (target.id === 'bundle-picker') store.switchBundle(target.value)
  if (target.id === 'mode-picker') store.setMode(target.value as 'greedy' | 'mh')
})

root.addEventListener('keydown', (event) => {
  const target = event.target as HTMLElement
  if (target.id === 'message-input' && (event as KeyboardEvent).key === 'Enter') {
    void submit()
  }
})

const submit = async () => {
  const input = document.getElementById('message-input') as HTMLInputElement | null
  if (!input) return
  const text = input.value
  input.value = ''
  await store.sendMessage(text)
}

render()
void store.init()
