export const DIMENSIONS = ['suitableness', 'relevance', 'effectiveness'];
export function isDone(resp) {
    return resp.done === true;
}
