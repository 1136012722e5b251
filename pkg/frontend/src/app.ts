import { ApiClient, type FetchLike } from './api.js'
import { AdjudicationFlow, AnnotationFlow } from './flow.js'
import { DIMENSIONS, type Dimension, type YesNo } from './types.js'

const KEY_BINDINGS: Record<string, [Dimension, YesNo]> = {
  q: ['suitableness', 'yes'],
  a: ['suitableness', 'no'],
  w: ['relevance', 'yes'],
  s: ['relevance', 'no'],
  e: ['effectiveness', 'yes'],
  d: ['effectiveness', 'no'],
}

export interface AppHandles {
  annotation: AnnotationFlow | null
  adjudication: AdjudicationFlow
  start(annotatorId: string): Promise<void>
  whenIdle(): Promise<void>
  render(): void
}

export function initApp(doc: Document, fetchFn: FetchLike, baseUrl = ''): AppHandles {
  const api = new ApiClient(baseUrl, fetchFn)
  const adjudication = new AdjudicationFlow(api)
  let annotation: AnnotationFlow | null = null
  let pending: Promise<void> = Promise.resolve()

  const byId = (id: string): HTMLElement => {
    const el = doc.getElementById(id)
    if (!el) throw new Error(`missing element #${id}`)
    return el
  }

  const screens = ['login', 'task', 'offline', 'done', 'adjudication', 'summary'] as const
  type Screen = (typeof screens)[number]

  function show(screen: Screen): void {
    for (const name of screens) {
      byId(`screen-${name}`).hidden = name !== screen
    }
  }

  function queue(action: () => Promise<void> | void): void {
    pending = pending.then(async () => {
      await action()
      render()
    })
  }

  function render(): void {
    handles.annotation = annotation
    if (adjudication.state === 'summary') {
      renderSummary()
      show('summary')
      return
    }
    if (adjudicating) {
      renderAdjudication()
      show('adjudication')
      return
    }
    if (!annotation) {
      show('login')
      return
    }
    if (annotation.state === 'offline') {
      show('offline')
      return
    }
    if (annotation.state === 'done') {
      const progress = annotation.progress
      byId('done-progress').textContent = progress
        ? `All ${progress.total} tasks labeled. Thank you.`
        : 'All tasks labeled. Thank you.'
      show('done')
      return
    }
    if (annotation.state === 'task' && annotation.current) {
      // evaluated texts render verbatim via textContent, untruncated
      byId('hate-text').textContent = annotation.current.hate_text
      byId('reply-text').textContent = annotation.current.reply_text
      const progress = annotation.progress
      byId('progress').textContent = progress
        ? `${progress.completed} / ${progress.total} labeled`
        : ''
      const conflict = byId('conflict-banner')
      conflict.hidden = annotation.conflictNotice === null
      conflict.textContent = annotation.conflictNotice ?? ''
      for (const dimension of DIMENSIONS) {
        for (const value of ['yes', 'no'] as YesNo[]) {
          const button = byId(`${dimension}-${value}`)
          button.classList.toggle('selected', annotation.draft[dimension] === value)
        }
      }
      ;(byId('submit-label') as HTMLButtonElement).disabled = !annotation.canSubmit()
      show('task')
      return
    }
    show('login')
  }

  let adjudicating = false

  function renderAdjudication(): void {
    const list = byId('disagreement-list')
    list.textContent = ''
    for (const row of adjudication.rows) {
      const item = doc.createElement('li')
      const open = doc.createElement('button')
      open.textContent = `${row.task_id} · ${row.dimension}`
      open.addEventListener('click', () => {
        queue(() => {
          adjudication.select(row)
        })
      })
      item.appendChild(open)
      list.appendChild(item)
    }
    const editor = byId('adjudication-editor')
    if (adjudication.state === 'editing' && adjudication.selected) {
      editor.hidden = false
      byId('adj-hate').textContent = adjudication.selected.hate_text
      byId('adj-reply').textContent = adjudication.selected.reply_text
      const answers = Object.entries(adjudication.selected.answers)
        .map(([annotator, answer]) => `${annotator}: ${answer}`)
        .join(', ')
      byId('adj-context').textContent = `${adjudication.selected.dimension} — ${answers}`
      byId('adj-yes').classList.toggle('selected', adjudication.finalLabel === 'yes')
      byId('adj-no').classList.toggle('selected', adjudication.finalLabel === 'no')
      ;(byId('adj-submit') as HTMLButtonElement).disabled = !adjudication.canSubmit()
    } else {
      editor.hidden = true
    }
    const error = byId('adj-error')
    error.hidden = adjudication.errorNotice === null
    error.textContent = adjudication.errorNotice ?? ''
    byId('no-disagreements').hidden = adjudication.rows.length > 0
  }

  function renderSummary(): void {
    const table = byId('summary-table') as HTMLTableElement
    table.textContent = ''
    const head = doc.createElement('tr')
    for (const caption of ['method', ...DIMENSIONS]) {
      const cell = doc.createElement('th')
      cell.textContent = caption
      head.appendChild(cell)
    }
    table.appendChild(head)
    const data = adjudication.summaryData ?? {}
    for (const method of Object.keys(data).sort()) {
      const row = doc.createElement('tr')
      const name = doc.createElement('td')
      name.textContent = method
      row.appendChild(name)
      for (const dimension of DIMENSIONS) {
        const cell = doc.createElement('td')
        cell.textContent = data[method][dimension].toFixed(2)
        cell.dataset.method = method
        cell.dataset.dimension = dimension
        row.appendChild(cell)
      }
      table.appendChild(row)
    }
  }

  async function start(annotatorId: string): Promise<void> {
    annotation = new AnnotationFlow(api, annotatorId)
    await annotation.loadNext()
  }

  byId('start').addEventListener('click', () => {
    const input = byId('annotator-id') as HTMLInputElement
    const annotatorId = input.value.trim()
    if (!annotatorId) return
    queue(() => start(annotatorId))
  })

  for (const dimension of DIMENSIONS) {
    for (const value of ['yes', 'no'] as YesNo[]) {
      byId(`${dimension}-${value}`).addEventListener('click', () => {
        queue(() => annotation?.setDimension(dimension, value))
      })
    }
  }

  byId('submit-label').addEventListener('click', () => {
    queue(() => annotation?.submit())
  })

  byId('retry').addEventListener('click', () => {
    queue(() => annotation?.retry())
  })

  byId('goto-adjudication').addEventListener('click', () => {
    queue(async () => {
      adjudicating = true
      await adjudication.load()
    })
  })

  byId('adj-yes').addEventListener('click', () => {
    queue(() => {
      adjudication.finalLabel = 'yes'
    })
  })
  byId('adj-no').addEventListener('click', () => {
    queue(() => {
      adjudication.finalLabel = 'no'
    })
  })
  byId('adj-rationale').addEventListener('input', (event) => {
    adjudication.rationale = (event.target as HTMLTextAreaElement).value
    ;(byId('adj-submit') as HTMLButtonElement).disabled = !adjudication.canSubmit()
  })
  byId('adj-submit').addEventListener('click', () => {
    queue(() => adjudication.submit())
  })
  byId('goto-summary').addEventListener('click', () => {
    queue(() => adjudication.showSummary())
  })

  doc.addEventListener('keydown', (event) => {
    const binding = KEY_BINDINGS[(event as KeyboardEvent).key]
    if (binding && annotation?.state === 'task') {
      queue(() => annotation?.setDimension(binding[0], binding[1]))
    }
  })

  const handles: AppHandles = {
    annotation,
    adjudication,
    start: (annotatorId: string) => {
      const started = pending.then(async () => {
        await start(annotatorId)
        render()
      })
      pending = started
      return started
    },
    whenIdle: () => pending,
    render,
  }
  render()
  return handles
}

declare const window: unknown

if (typeof document !== 'undefined' && typeof window !== 'undefined') {
  initApp(document, (input, init) => fetch(input, init), '')
}
