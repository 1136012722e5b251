import { DIMENSIONS, isDone } from './types.js';
export function emptyDraft() {
    return { suitableness: null, relevance: null, effectiveness: null };
}
/**
 * Annotation session state machine. Fetches the next task, blocks submission
 * until all three dimensions are set, and advances past conflicts without
 * losing server-side data. Network failures park the machine in 'offline'
 * with the draft intact so a retry can resume exactly where it stopped.
 */
export class AnnotationFlow {
    constructor(api, annotatorId) {
        this.api = api;
        this.annotatorId = annotatorId;
        this.state = 'idle';
        this.current = null;
        this.draft = emptyDraft();
        this.progress = null;
        this.conflictNotice = null;
    }
    async loadNext() {
        let result;
        try {
            result = await this.api.nextTask(this.annotatorId);
        }
        catch {
            this.state = 'offline';
            return;
        }
        if (result.status !== 200) {
            this.state = 'offline';
            return;
        }
        if (isDone(result.body)) {
            this.state = 'done';
            this.current = null;
            this.progress = result.body.progress;
            return;
        }
        this.state = 'task';
        this.current = result.body;
        this.draft = emptyDraft();
    }
    setDimension(dimension, value) {
        if (this.state !== 'task')
            return;
        this.draft[dimension] = value;
    }
    canSubmit() {
        return (this.state === 'task' &&
            this.current !== null &&
            DIMENSIONS.every((d) => this.draft[d] !== null));
    }
    /** Submit the draft; on 409 the label already exists server-side, so the
     * session surfaces a warning and advances rather than retrying. */
    async submit() {
        if (!this.canSubmit() || this.current === null)
            return;
        const task = this.current;
        this.conflictNotice = null;
        let result;
        try {
            result = await this.api.submitLabel(task.task_id, {
                annotator_id: this.annotatorId,
                suitableness: this.draft.suitableness,
                relevance: this.draft.relevance,
                effectiveness: this.draft.effectiveness,
            });
        }
        catch {
            // draft kept; the retry banner path resubmits the same label
            this.state = 'offline';
            return;
        }
        if (result.status === 201) {
            this.progress = result.body.progress;
        }
        else if (result.status === 409) {
            this.conflictNotice = `Task ${task.task_id} was already labeled; moving on.`;
        }
        else {
            this.state = 'offline';
            return;
        }
        await this.loadNext();
    }
    /** Resume after connectivity loss: resubmit a complete draft, else refetch. */
    async retry() {
        if (this.state !== 'offline')
            return;
        if (this.current !== null && DIMENSIONS.every((d) => this.draft[d] !== null)) {
            this.state = 'task';
            await this.submit();
            return;
        }
        await this.loadNext();
    }
}
/** Post-annotation adjudication of disagreements, then the unblinded summary. */
export class AdjudicationFlow {
    constructor(api) {
        this.api = api;
        this.state = 'list';
        this.rows = [];
        this.selected = null;
        this.finalLabel = null;
        this.rationale = '';
        this.summaryData = null;
        this.errorNotice = null;
    }
    async load() {
        try {
            const result = await this.api.disagreements();
            if (result.status !== 200) {
                this.state = 'offline';
                return;
            }
            this.rows = result.body;
            this.state = 'list';
        }
        catch {
            this.state = 'offline';
        }
    }
    select(row) {
        this.selected = row;
        this.finalLabel = null;
        this.rationale = '';
        this.errorNotice = null;
        this.state = 'editing';
    }
    canSubmit() {
        return (this.state === 'editing' &&
            this.selected !== null &&
            this.finalLabel !== null &&
            this.rationale.trim().length > 0);
    }
    async submit() {
        if (!this.canSubmit() || this.selected === null)
            return;
        const result = await this.api.adjudicate({
            task_id: this.selected.task_id,
            dimension: this.selected.dimension,
            final_label: this.finalLabel,
            rationale: this.rationale.trim(),
        });
        if (result.status !== 201) {
            this.errorNotice = result.body.error ?? 'rejected';
            return;
        }
        this.selected = null;
        await this.load();
    }
    async showSummary() {
        const result = await this.api.summary();
        if (result.status !== 200) {
            this.errorNotice = result.body.error ?? 'not finalized';
            return;
        }
        this.summaryData = result.body;
        this.state = 'summary';
    }
}
