export interface GenerationRequest {
    letters: string;
    keywords: string[];
    seed: number;
    method: 'ddim' | 'ddpm';
    steps: number;
    n_variants: number;
}

export interface GeneratedImage {
    letter: string;
    variant: number;
    png_base64: string;
}

export interface GenerationResponse {
    request: GenerationRequest;
    images: GeneratedImage[];
    checkpoint_hash: string;
    wall_time_ms: number;
}

export interface KeywordCount {
    keyword: string;
    n_fonts: number;
}

export interface HealthInfo {
    status: 'loading' | 'ready';
    checkpoint_hash: string | null;
    schedule_T: number | null;
    encoder_hash: string | null;
}

export type KeywordEdit =
    | { kind: 'replace'; from: string; to: string }
    | { kind: 'add'; keyword: string }
    | { kind: 'remove'; keyword: string }
    | { kind: 'reseed'; seed: number };

export const DEFAULT_REQUEST: GenerationRequest = {
    letters: 'HERO',
    keywords: [],
    seed: 0,
    method: 'ddim',
    steps: 100,
    n_variants: 1,
};
