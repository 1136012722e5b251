/**
 * Thin typed client for the human-eval service. Network failures reject
 * with whatever error the fetch implementation throws; non-2xx statuses
 * resolve so callers can branch on conflicts and validation errors.
 */
export class ApiClient {
    constructor(baseUrl, fetchFn) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    async request(path, init) {
        const resp = await this.fetchFn(this.baseUrl + path, init);
        const body = (await resp.json());
        return { status: resp.status, body };
    }
    nextTask(annotatorId) {
        return this.request(`/api/annotators/${encodeURIComponent(annotatorId)}/next`);
    }
    submitLabel(taskId, body) {
        return this.request(`/api/tasks/${encodeURIComponent(taskId)}/labels`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
    }
    agreement() {
        return this.request('/api/agreement');
    }
    disagreements() {
        return this.request('/api/disagreements');
    }
    adjudicate(body) {
        return this.request('/api/adjudications', {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
    }
    summary() {
        return this.request('/api/summary');
    }
}
