import { describe, expect, it } from 'vitest';
import { ApiClient } from '../src/api';
import { exportBundle } from '../src/export';
import { ExplorationSession } from '../src/session';
import { GenerationRequest } from '../src/types';

const T = 1000;
const HASH = 'cafe01';

const base: GenerationRequest = {
    letters: 'GO',
    keywords: ['round', 'friendly'],
    seed: 3,
    method: 'ddim',
    steps: 100,
    n_variants: 1,
};

function okApi(): ApiClient {
    return new ApiClient('', async (_url, init) => {
        const req = JSON.parse(init!.body as string) as GenerationRequest;
        return new Response(
            JSON.stringify({
                request: req,
                images: [...req.letters].map(letter => ({ letter, variant: 0, png_base64: 'aGk=' })),
                checkpoint_hash: HASH,
                wall_time_ms: 1,
            }),
            { status: 200 },
        );
    });
}

describe('exportBundle', () => {
    it('throws before any row has finished generating', () => {
        const session = new ExplorationSession(okApi(), base, T, HASH);
        expect(() => exportBundle(session)).toThrow(/nothing to export/);
    });

    it('captures every row request in display order with the changed keyword', async () => {
        const session = new ExplorationSession(okApi(), base, T, HASH);
        await session.generateRow(0);
        session.addEdit({ kind: 'replace', from: 'round', to: 'angular' });
        await session.generateRow(1);

        const bundle = exportBundle(session);
        expect(bundle.rows).toHaveLength(2);
        expect(bundle.rows[0].request).toEqual(base);
        expect(bundle.rows[0].changed).toBeNull();
        expect(bundle.rows[1].request.keywords).toEqual(['angular', 'friendly']);
        expect(bundle.rows[1].changed).toBe('angular');
        expect(bundle.checkpoint_hash).toBe(HASH);
        expect(Number.isNaN(Date.parse(bundle.exported_at))).toBe(false);
    });

    it('matches the replay file shape: rows of {request} with full request fields', async () => {
        const session = new ExplorationSession(okApi(), base, T, HASH);
        await session.generateRow(0);
        const bundle = JSON.parse(JSON.stringify(exportBundle(session)));
        for (const row of bundle.rows) {
            expect(Object.keys(row.request).sort()).toEqual(
                ['keywords', 'letters', 'method', 'n_variants', 'seed', 'steps'],
            );
        }
    });

    it('reports a null checkpoint hash when rows span different checkpoints', async () => {
        let calls = 0;
        const api = new ApiClient('', async (_url, init) => {
            const req = JSON.parse(init!.body as string) as GenerationRequest;
            calls += 1;
            return new Response(
                JSON.stringify({
                    request: req,
                    images: [{ letter: 'G', variant: 0, png_base64: 'aGk=' }],
                    checkpoint_hash: `hash-${calls}`,
                    wall_time_ms: 1,
                }),
                { status: 200 },
            );
        });
        const session = new ExplorationSession(api, base, T, HASH);
        await session.generateRow(0);
        session.addEdit({ kind: 'add', keyword: 'bold' });
        await session.generateRow(1);
        expect(exportBundle(session).checkpoint_hash).toBeNull();
    });
});
