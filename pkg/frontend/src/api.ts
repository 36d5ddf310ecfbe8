import { GenerationRequest, GenerationResponse, HealthInfo, KeywordCount } from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
    constructor(
        public readonly status: number,
        public readonly field: string | null,
        message: string,
    ) {
        super(message);
    }
}

async function throwServiceError(resp: Response): Promise<never> {
    let field: string | null = null;
    let message = `service returned ${resp.status}`;
    try {
        const body = await resp.json();
        if (body && typeof body.detail === 'object' && body.detail !== null) {
            field = body.detail.field ?? null;
            message = body.detail.message ?? message;
        } else if (body && typeof body.detail === 'string') {
            message = body.detail;
        }
    } catch {
        // non-JSON error body; keep the status message
    }
    throw new ServiceError(resp.status, field, message);
}

export class ApiClient {
    constructor(
        private readonly baseUrl: string,
        private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
    ) {}

    async health(): Promise<HealthInfo> {
        const resp = await this.fetchImpl(`${this.baseUrl}/health`);
        if (!resp.ok) await throwServiceError(resp);
        return resp.json();
    }

    async keywords(filter = ''): Promise<KeywordCount[]> {
        const query = filter ? `?filter=${encodeURIComponent(filter)}` : '';
        const resp = await this.fetchImpl(`${this.baseUrl}/keywords${query}`);
        if (!resp.ok) await throwServiceError(resp);
        return (await resp.json()).keywords;
    }

    async generate(req: GenerationRequest): Promise<GenerationResponse> {
        const resp = await this.fetchImpl(`${this.baseUrl}/generate`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(req),
        });
        if (!resp.ok) await throwServiceError(resp);
        return resp.json();
    }
}
