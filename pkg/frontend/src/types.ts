export type YesNo = 'yes' | 'no'
export type Dimension = 'suitableness' | 'relevance' | 'effectiveness'

export const DIMENSIONS: Dimension[] = ['suitableness', 'relevance', 'effectiveness']

/** Blinded task payload: never carries the generating method. */
export interface TaskPayload {
  task_id: string
  hate_text: string
  reply_text: string
}

export interface Progress {
  completed: number
  total: number
}

export interface DoneSignal {
  done: true
  progress: Progress
}

export type NextResponse = TaskPayload | DoneSignal

export function isDone(resp: NextResponse): resp is DoneSignal {
  return (resp as DoneSignal).done === true
}

export interface LabelBody {
  annotator_id: string
  suitableness: YesNo
  relevance: YesNo
  effectiveness: YesNo
}

export interface SubmitAck {
  stored: boolean
  task_id: string
  progress: Progress
}

export interface AgreementReport {
  per_dimension: Record<Dimension, number>
  disagreements: Record<Dimension, string[]>
  kappa: Record<Dimension, number | null>
  labeled_by_both: number
}

export interface DisagreementRow {
  task_id: string
  dimension: Dimension
  hate_text: string
  reply_text: string
  answers: Record<string, YesNo>
}

export interface AdjudicationBody {
  task_id: string
  dimension: Dimension
  final_label: YesNo
  rationale: string
}

/** method -> dimension -> proportion of yes */
export type Summary = Record<string, Record<Dimension, number>>

export interface ApiError {
  error: string
}
