// Pure renderers: every function maps state to an HTML string, so the
// whole UI is snapshot-testable without a DOM.

import type { ChatViewState, MessageRecord, TopicEntry } from './types'

export const escapeHtml = (text: string): string =>
  text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;')

// Highlight exactly the reply tokens listed in topicWordsUsed; tokens are
// compared verbatim so the UI can never invent a topic word.
export const renderReplyText = (text: string, topicWords: string[]): string => {
  const allowed = new Set(topicWords)
  return text
    .split(' ')
    .map((token) =>
      allowed.has(token)
        ? `<mark class="topic-word">${escapeHtml(token)}</mark>`
        : escapeHtml(token),
    )
    .join(' ')
}

export const renderTopicCode = (
  code: number[] | undefined,
  topics: TopicEntry[] | undefined,
): string => {
  if (!code || code.length === 0) return ''
  const peak = Math.max(...code, 1e-12)
  const bars = code
    .map((value, j) => {
      const height = Math.round((value / peak) * 100)
      const words = topics && topics[j] ? topics[j].top_words.join(' ') : ''
      const title = escapeHtml(`topic ${j}${words ? `: ${words}` : ''}`)
      return (
        `<div class="bar-slot" title="${title}">` +
        `<div class="bar" style="height:${height}%" data-topic="${j}"` +
        ` data-value="${value.toFixed(4)}"></div></div>`
      )
    })
    .join('')
  return `<div class="topic-code">${bars}</div>`
}

const heatStrip = (weights: number[]): string => {
  const peak = Math.max(...weights, 1e-12)
  const cells = weights
    .map((w) => {
      const alpha = (w / peak).toFixed(3)
      return `<span class="heat-cell" style="opacity:${alpha}" data-weight="${w.toFixed(4)}"></span>`
    })
    .join('')
  return `<div class="heat-strip">${cells}</div>`
}

export const renderInspector = (record: MessageRecord): string => {
  if (!record.attention) return ''
  const tokens = record.text.split(' ')
  const rows = tokens
    .map((token, t) => {
      const message = record.attention!.message[t] ?? []
      const topic = record.attention!.topic[t] ?? []
      return (
        `<tr><td class="tok">${escapeHtml(token)}</td>` +
        `<td>${heatStrip(message)}</td>` +
        `<td>${topic.length > 0 ? heatStrip(topic) : '<span class="none">-</span>'}</td></tr>`
      )
    })
    .join('')
  return (
    '<table class="inspector-table">' +
    '<thead><tr><th>word</th><th>message attention</th><th>topic attention</th></tr></thead>' +
    `<tbody>${rows}</tbody></table>`
  )
}

export const renderMessage = (
  record: MessageRecord,
  topics: TopicEntry[] | undefined,
  inspectorOpen: boolean,
): string => {
  switch (record.author) {
    case 'user':
      return `<div class="msg user"><div class="bubble">${escapeHtml(record.text)}</div></div>`
    case 'system':
      return `<div class="msg system">${escapeHtml(record.text)}</div>`
    case 'error':
      return (
        '<div class="msg error"><div class="bubble">' +
        `${escapeHtml(record.text)} ` +
        '<button data-action="retry">retry</button></div></div>'
      )
    case 'bot': {
      const body = renderReplyText(record.text, record.topicWordsUsed ?? [])
      const code = renderTopicCode(record.topicCode, topics)
      const inspector =
        inspectorOpen && record.attention
          ? `<div class="inspector">${renderInspector(record)}</div>`
          : ''
      const tag = record.bundle
        ? `<span class="bundle-tag">${escapeHtml(record.bundle)}</span>`
        : ''
      return (
        `<div class="msg bot">${tag}<div class="bubble">${body || '<em>(empty reply)</em>'}</div>` +
        `${code}${inspector}</div>`
      )
    }
  }
}

export const renderBundlePicker = (state: ChatViewState): string => {
  const options = state.bundles
    .map((name) => {
      const selected = name === state.activeBundle ? ' selected' : ''
      return `<option value="${escapeHtml(name)}"${selected}>${escapeHtml(name)}</option>`
    })
    .join('')
  return `<select id="bundle-picker" ${state.bundles.length === 0 ? 'disabled' : ''}>${options}</select>`
}

export const renderApp = (state: ChatViewState): string => {
  const messages = state.transcript
    .map((rec) =>
      renderMessage(
        rec,
        rec.bundle ? state.topicsByBundle[rec.bundle] : undefined,
        state.inspectorOpen,
      ),
    )
    .join('\n')
  const pendingNote = state.pending ? '<div class="msg system">thinking...</div>' : ''
  return [
    '<header>',
    `  ${renderBundlePicker(state)}`,
    `  <select id="mode-picker"><option value="greedy"${state.mode === 'greedy' ? ' selected' : ''}>greedy</option>` +
      `<option value="mh"${state.mode === 'mh' ? ' selected' : ''}>mh</option></select>`,
    `  <button id="inspector-toggle">${state.inspectorOpen ? 'hide' : 'show'} attention</button>`,
    '</header>',
    `<main id="transcript">${messages}${pendingNote}</main>`,
    '<footer>',
    `  <input id="message-input" type="text" placeholder="ask something" ${state.pending ? 'disabled' : ''}/>`,
    `  <button id="send-button" ${state.pending ? 'disabled' : ''}>send</button>`,
    '</footer>',
  ].join('\n')
}
