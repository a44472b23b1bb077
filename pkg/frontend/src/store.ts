// Single store holding the whole chat view state. All mutations funnel
// through here; rendering is a pure function of getState().

import type { ChatApi } from './api'
import type { ChatMode, ChatViewState, MessageRecord } from './types'

const initialState = (): ChatViewState => ({
  transcript: [],
  bundles: [],
  activeBundle: null,
  sessionId: null,
  mode: 'greedy',
  pending: false,
  pendingSwitch: null,
  inspectorOpen: false,
  topicsByBundle: {},
  lastFailedMessage: null,
})

export const createChatStore = (api: ChatApi) => {
  let state = initialState()
  const listeners = new Set<() => void>()

  const emit = () => {
    for (const listener of listeners) listener()
  }

  const setState = (partial: Partial<ChatViewState>) => {
    state = { ...state, ...partial }
    emit()
  }

  const append = (record: MessageRecord) => {
    setState({ transcript: [...state.transcript, record] })
  }

  const init = async () => {
    const bundles = await api.bundles()
    const activeBundle = bundles.length > 0 ? bundles[0] : null
    setState({ bundles, activeBundle })
    if (activeBundle) await loadTopics(activeBundle)
  }

  const loadTopics = async (bundle: string) => {
    if (state.topicsByBundle[bundle]) return
    try {
      const resp = await api.topics(bundle)
      setState({
        topicsByBundle: { ...state.topicsByBundle, [bundle]: resp.topics },
      })
    } catch {
      // tooltips degrade gracefully without topic metadata
    }
  }

  const sendMessage = async (text: string): Promise<void> => {
    const trimmed = text.trim()
    if (trimmed === '' || state.pending) return
    append({ author: 'user', text: trimmed })
    setState({ pending: true, lastFailedMessage: null })
    try {
      const resp = await api.chat({
        session_id: state.sessionId,
        bundle: state.activeBundle,
        message: trimmed,
        mode: state.mode,
        seed: null,
      })
      append({
        author: 'bot',
        text: resp.reply,
        bundle: resp.bundle,
        topicCode: resp.topic_code,
        topicWordsUsed: resp.topic_words_used,
        attention: resp.attention,
      })
      setState({ sessionId: resp.session_id, pending: false })
    } catch (err) {
      append({
        author: 'error',
        text: `message failed: ${err instanceof Error ? err.message : String(err)}`,
      })
      setState({ pending: false, lastFailedMessage: trimmed })
    }
    applyDeferredSwitch()
  }

  const retryLast = async (): Promise<void> => {
    const failed = state.lastFailedMessage
    if (failed === null || state.pending) return
    // drop the trailing error bubble and the user message being retried
    const transcript = state.transcript.filter(
      (rec, i) =>
        !(i >= state.transcript.length - 2 &&
          (rec.author === 'error' || (rec.author === 'user' && rec.text === failed))),
    )
    setState({ transcript, lastFailedMessage: null })
    await sendMessage(failed)
  }

  const applyDeferredSwitch = () => {
    if (state.pendingSwitch !== null && !state.pending) {
      const target = state.pendingSwitch
      setState({ pendingSwitch: null })
      switchBundle(target)
    }
  }

  const switchBundle = (name: string): void => {
    if (!state.bundles.includes(name)) {
      append({ author: 'error', text: `unknown bundle: ${name}` })
      return
    }
    if (name === state.activeBundle) return
    if (state.pending) {
      setState({ pendingSwitch: name })
      return
    }
    setState({ activeBundle: name })
    append({ author: 'system', text: `switched to bundle ${name}`, bundle: name })
    void loadTopics(name)
  }

  const setMode = (mode: ChatMode) => setState({ mode })
  const toggleInspector = () => setState({ inspectorOpen: !state.inspectorOpen })

  return {
    getState: () => state,
    subscribe: (listener: () => void) => {
      listeners.add(listener)
      return () => listeners.delete(listener)
    },
    reset: () => {
      state = initialState()
      emit()
    },
    init,
    sendMessage,
    retryLast,
    switchBundle,
    setMode,
    toggleInspector,
  }
}

export type ChatStore = ReturnType<typeof createChatStore>
