import { ApiClient } from './api';
import { GenerationRequest, GenerationResponse, KeywordEdit } from './types';
import { normalizeKeyword, validateRequest, ValidationError } from './validation';

export interface SessionRow {
    /** Index into the edit list; -1 is the base row. */
    editIndex: number;
    request: GenerationRequest;
    /** The keyword introduced or reseeded value, for highlighting. */
    changed: string | null;
    state: 'pending' | 'done' | 'error';
    response: GenerationResponse | null;
    error: string | null;
}

export class EditError extends Error {
    constructor(public readonly field: string, message: string) {
        super(message);
    }
}

/** Applies one edit to a request, returning a new request. Throws EditError
 *  when a replace/remove names a keyword that is not present. */
export function applyEdit(req: GenerationRequest, edit: KeywordEdit): GenerationRequest {
    switch (edit.kind) {
        case 'replace': {
            const from = normalizeKeyword(edit.from);
            const to = normalizeKeyword(edit.to);
            const at = req.keywords.indexOf(from);
            if (at < 0) throw new EditError('keywords', `cannot replace "${from}": not in the current set`);
            const keywords = req.keywords.slice();
            keywords[at] = to;
            return { ...req, keywords };
        }
        case 'add': {
            const kw = normalizeKeyword(edit.keyword);
            if (kw.length === 0) throw new EditError('keywords', 'cannot add an empty keyword');
            if (req.keywords.includes(kw)) return { ...req, keywords: req.keywords.slice() };
            return { ...req, keywords: [...req.keywords, kw] };
        }
        case 'remove': {
            const kw = normalizeKeyword(edit.keyword);
            if (!req.keywords.includes(kw)) throw new EditError('keywords', `cannot remove "${kw}": not in the current set`);
            return { ...req, keywords: req.keywords.filter(k => k !== kw) };
        }
        case 'reseed':
            return { ...req, seed: edit.seed };
    }
}

export function cacheKey(req: GenerationRequest, checkpointHash: string): string {
    return JSON.stringify({
        letters: req.letters,
        keywords: req.keywords,
        seed: req.seed,
        method: req.method,
        steps: req.steps,
        n_variants: req.n_variants,
        checkpoint: checkpointHash,
    });
}

/** One what-if exploration: a base request plus an ordered edit chain, each
 *  edit rendered as a comparison row. Responses are cached per
 *  (request, checkpoint), and superseded in-flight responses are discarded. */
export class ExplorationSession {
    readonly rows: SessionRow[] = [];
    private readonly edits: KeywordEdit[] = [];
    private readonly cache = new Map<string, GenerationResponse>();
    private readonly inFlight = new Map<number, number>(); // row index -> request id
    private nextRequestId = 1;

    constructor(
        private readonly api: ApiClient,
        readonly base: GenerationRequest,
        private readonly scheduleT: number,
        private readonly checkpointHash: string,
    ) {
        const error = validateRequest(base, scheduleT);
        if (error) throw new EditError(error.field, error.message);
        this.rows.push({ editIndex: -1, request: base, changed: null, state: 'pending', response: null, error: null });
    }

    validate(req: GenerationRequest): ValidationError | null {
        return validateRequest(req, this.scheduleT);
    }

    /** Request after applying the first `count` edits to the base. */
    requestAt(count: number): GenerationRequest {
        let req = this.base;
        for (const edit of this.edits.slice(0, count)) req = applyEdit(req, edit);
        return req;
    }

    /** Appends an edit and its comparison row. The seed is untouched unless
     *  the edit is a reseed, so visual differences trace to the edit alone. */
    addEdit(edit: KeywordEdit): SessionRow {
        const request = applyEdit(this.requestAt(this.edits.length), edit);
        const error = validateRequest(request, this.scheduleT);
        if (error) throw new EditError(error.field, error.message);
        this.edits.push(edit);
        const changed =
            edit.kind === 'replace' ? normalizeKeyword(edit.to)
            : edit.kind === 'add' ? normalizeKeyword(edit.keyword)
            : edit.kind === 'reseed' ? `seed ${edit.seed}`
            : null;
        const row: SessionRow = { editIndex: this.edits.length - 1, request, changed, state: 'pending', response: null, error: null };
        this.rows.push(row);
        return row;
    }

    /** Resolves a row's images, from cache when possible. Network responses
     *  that were superseded by a newer fetch for the same row are dropped. */
    async generateRow(rowIndex: number): Promise<SessionRow> {
        const row = this.rows[rowIndex];
        const key = cacheKey(row.request, this.checkpointHash);
        const cached = this.cache.get(key);
        if (cached) {
            row.state = 'done';
            row.response = cached;
            row.error = null;
            return row;
        }
        const requestId = this.nextRequestId++;
        this.inFlight.set(rowIndex, requestId);
        row.state = 'pending';
        try {
            const response = await this.api.generate(row.request);
            if (this.inFlight.get(rowIndex) !== requestId) return row; // stale
            this.cache.set(key, response);
            row.state = 'done';
            row.response = response;
            row.error = null;
        } catch (err) {
            if (this.inFlight.get(rowIndex) !== requestId) return row; // stale
            row.state = 'error';
            row.error = err instanceof Error ? err.message : String(err);
        } finally {
            if (this.inFlight.get(rowIndex) === requestId) this.inFlight.delete(rowIndex);
        }
        return row;
    }

    get editCount(): number {
        return this.edits.length;
    }
}
