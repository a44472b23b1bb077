// Wire types for the chat service API.

export type ChatMode = 'greedy' | 'mh'

export interface ChatRequest {
  session_id: string | null
  bundle: string | null
  message: string
  mode: ChatMode
  seed: number | null
}

export interface AttentionMatrices {
  message: number[][]
  topic: number[][]
}

export interface ChatResponse {
  session_id: string
  bundle: string
  reply: string
  topic_code: number[]
  topic_words_used: string[]
  attention: AttentionMatrices
}

export interface TopicEntry {
  id: number
  top_words: string[]
}

export interface TopicsResponse {
  r: number
  topics: TopicEntry[]
}

// One transcript entry. `author: 'system'` rows annotate events such as
// bundle switches; `error` rows carry a retryable failure.
export interface MessageRecord {
  author: 'user' | 'bot' | 'system' | 'error'
  text: string
  bundle?: string
  topicCode?: number[]
  topicWordsUsed?: string[]
  attention?: AttentionMatrices
}

export interface ChatViewState {
  transcript: MessageRecord[]
  bundles: string[]
  activeBundle: string | null
  sessionId: string | null
  mode: ChatMode
  pending: boolean
  pendingSwitch: string | null
  inspectorOpen: boolean
  topicsByBundle: Record<string, TopicEntry[]>
  lastFailedMessage: string | null
}
