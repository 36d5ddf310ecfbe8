import { ExplorationSession } from './session';
import { GenerationRequest } from './types';

export interface ExportBundle {
    rows: { request: GenerationRequest; changed: string | null }[];
    checkpoint_hash: string | null;
    exported_at: string;
}

/** JSON bundle of every row's request, in display order. The `rows` array
 *  matches the CLI replay format, so the board can be regenerated
 *  byte-identically outside the browser. */
export function exportBundle(session: ExplorationSession): ExportBundle {
    if (session.rows.length === 0 || session.rows.every(r => r.state !== 'done')) {
        throw new Error('nothing to export: no generated rows');
    }
    const hashes = new Set(
        session.rows.filter(r => r.response).map(r => r.response!.checkpoint_hash),
    );
    return {
        rows: session.rows.map(r => ({ request: r.request, changed: r.changed })),
        checkpoint_hash: hashes.size === 1 ? [...hashes][0] : null,
        exported_at: new Date().toISOString(),
    };
}

/** PNG contact sheet of all completed rows, one row of glyphs per request. */
export function renderContactSheet(session: ExplorationSession, cell = 64): HTMLCanvasElement {
    const done = session.rows.filter(r => r.state === 'done' && r.response);
    if (done.length === 0) throw new Error('nothing to export: no generated rows');
    const cols = Math.max(...done.map(r => r.response!.images.length));
    const canvas = document.createElement('canvas');
    canvas.width = cols * cell;
    canvas.height = done.length * cell;
    const ctx = canvas.getContext('2d')!;
    ctx.fillStyle = '#fff';
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    done.forEach((row, y) => {
        row.response!.images.forEach((img, x) => {
            const el = new Image();
            el.src = `data:image/png;base64,${img.png_base64}`;
            el.decode().then(() => ctx.drawImage(el, x * cell, y * cell, cell, cell));
        });
    });
    return canvas;
}
