import type { ApiClient } from './api.js'
import type {
  Dimension,
  DisagreementRow,
  Progress,
  Summary,
  TaskPayload,
  YesNo,
} from './types.js'
import { DIMENSIONS, isDone } from './types.js'

export type Draft = Record<Dimension, YesNo | null>

export function emptyDraft(): Draft {
  return { suitableness: null, relevance: null, effectiveness: null }
}

export type AnnotationState = 'idle' | 'task' | 'done' | 'offline'

/**
 * Annotation session state machine. Fetches the next task, blocks submission
 * until all three dimensions are set, and advances past conflicts without
 * losing server-side data. Network failures park the machine in 'offline'
 * with the draft intact so a retry can resume exactly where it stopped.
 */
export class AnnotationFlow {
  state: AnnotationState = 'idle'
  current: TaskPayload | null = null
  draft: Draft = emptyDraft()
  progress: Progress | null = null
  conflictNotice: string | null = null

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
  ) {}

  async loadNext(): Promise<void> {
    let result
    try {
      result = await this.api.nextTask(this.annotatorId)
    } catch {
      this.state = 'offline'
      return
    }
    if (result.status !== 200) {
      this.state = 'offline'
      return
    }
    if (isDone(result.body)) {
      this.state = 'done'
      this.current = null
      this.progress = result.body.progress
      return
    }
    this.state = 'task'
    this.current = result.body
    this.draft = emptyDraft()
  }

  setDimension(dimension: Dimension, value: YesNo): void {
    if (this.state !== 'task') return
    this.draft[dimension] = value
  }

  canSubmit(): boolean {
    return (
      this.state === 'task' &&
      this.current !== null &&
      DIMENSIONS.every((d) => this.draft[d] !== null)
    )
  }

  /** Submit the draft; on 409 the label already exists server-side, so the
   * session surfaces a warning and advances rather than retrying. */
  async submit(): Promise<void> {
    if (!this.canSubmit() || this.current === null) return
    const task = this.current
    this.conflictNotice = null
    let result
    try {
      result = await this.api.submitLabel(task.task_id, {
        annotator_id: this.annotatorId,
        suitableness: this.draft.suitableness as YesNo,
        relevance: this.draft.relevance as YesNo,
        effectiveness: this.draft.effectiveness as YesNo,
      })
    } catch {
      // draft kept; the retry banner path resubmits the same label
      this.state = 'offline'
      return
    }
    if (result.status === 201) {
      this.progress = result.body.progress
    } else if (result.status === 409) {
      this.conflictNotice = `Task ${task.task_id} was already labeled; moving on.`
    } else {
      this.state = 'offline'
      return
    }
    await this.loadNext()
  }

  /** Resume after connectivity loss: resubmit a complete draft, else refetch. */
  async retry(): Promise<void> {
    if (this.state !== 'offline') return
    if (this.current !== null && DIMENSIONS.every((d) => this.draft[d] !== null)) {
      this.state = 'task'
      await this.submit()
      return
    }
    await this.loadNext()
  }
}

export type AdjudicationState = 'list' | 'editing' | 'summary' | 'offline'

/** Post-annotation adjudication of disagreements, then the unblinded summary. */
export class AdjudicationFlow {
  state: AdjudicationState = 'list'
  rows: DisagreementRow[] = []
  selected: DisagreementRow | null = null
  finalLabel: YesNo | null = null
  rationale = ''
  summaryData: Summary | null = null
  errorNotice: string | null = null

  constructor(private readonly api: ApiClient) {}

  async load(): Promise<void> {
    try {
      const result = await this.api.disagreements()
      if (result.status !== 200) {
        this.state = 'offline'
        return
      }
      this.rows = result.body
      this.state = 'list'
    } catch {
      this.state = 'offline'
    }
  }

  select(row: DisagreementRow): void {
    this.selected = row
    this.finalLabel = null
    this.rationale = ''
    this.errorNotice = null
    this.state = 'editing'
  }

  canSubmit(): boolean {
    return (
      this.state === 'editing' &&
      this.selected !== null &&
      this.finalLabel !== null &&
      this.rationale.trim().length > 0
    )
  }

  async submit(): Promise<void> {
    if (!this.canSubmit() || this.selected === null) return
    const result = await this.api.adjudicate({
      task_id: this.selected.task_id,
      dimension: this.selected.dimension,
      final_label: this.finalLabel as YesNo,
      rationale: this.rationale.trim(),
    })
    if (result.status !== 201) {
      this.errorNotice = (result.body as unknown as { error?: string }).error ?? 'rejected'
      return
    }
    this.selected = null
    await this.load()
  }

  async showSummary(): Promise<void> {
    const result = await this.api.summary()
    if (result.status !== 200) {
      this.errorNotice = (result.body as unknown as { error?: string }).error ?? 'not finalized'
      return
    }
    this.summaryData = result.body
    this.state = 'summary'
  }
}
