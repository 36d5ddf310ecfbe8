import { GenerationRequest } from './types';

export interface ValidationError {
    field: string;
    message: string;
}

/** Mirrors the service's request validation so the UI never sends a request
 *  the service would reject. `scheduleT` comes from GET /health. */
export function validateRequest(req: GenerationRequest, scheduleT: number): ValidationError | null {
    if (req.letters.length === 0) {
        return { field: 'letters', message: 'must be non-empty' };
    }
    const invalid = [...req.letters].filter(c => c < 'A' || c > 'Z');
    if (invalid.length > 0) {
        return { field: 'letters', message: `only capitals A-Z allowed, got ${JSON.stringify(invalid)}` };
    }
    if (req.keywords.length === 0 || !req.keywords.some(k => k.trim().length > 0)) {
        return { field: 'keywords', message: 'must be non-empty' };
    }
    if (req.keywords.some(k => k.includes(','))) {
        return { field: 'keywords', message: 'keywords must not contain commas' };
    }
    if (req.method !== 'ddim' && req.method !== 'ddpm') {
        return { field: 'method', message: `must be 'ddim' or 'ddpm'` };
    }
    if (!Number.isInteger(req.steps) || req.steps < 1 || req.steps > scheduleT) {
        return { field: 'steps', message: `must be in [1, ${scheduleT}]` };
    }
    if (req.method === 'ddim' && scheduleT % req.steps !== 0) {
        return { field: 'steps', message: `must divide T=${scheduleT} with a uniform stride` };
    }
    if (!Number.isInteger(req.n_variants) || req.n_variants < 1) {
        return { field: 'n_variants', message: 'must be >= 1' };
    }
    if (!Number.isInteger(req.seed)) {
        return { field: 'seed', message: 'must be an integer' };
    }
    return null;
}

/** Normalizes a raw keyword token the way the dataset pipeline does. */
export function normalizeKeyword(raw: string): string {
    return raw.trim().toLowerCase();
}
