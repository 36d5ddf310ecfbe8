import { ApiClient } from './api';
import { exportBundle } from './export';
import { ExplorationSession, SessionRow } from './session';
import { DEFAULT_REQUEST, KeywordEdit } from './types';
import { normalizeKeyword } from './validation';

/** Thin DOM layer; all behavior lives in session/validation/api. */
export function mountExplorer(root: HTMLElement, api: ApiClient): void {
    root.innerHTML = `
      <div class="banner" hidden></div>
      <form class="compose">
        <label>Letters <input name="letters" value="${DEFAULT_REQUEST.letters}" /></label>
        <label>Keywords <input name="keyword" list="keyword-hints" placeholder="add keyword, Enter" /></label>
        <datalist id="keyword-hints"></datalist>
        <span class="tokens"></span>
        <label>Seed <input name="seed" type="number" value="0" /></label>
        <button type="submit">Generate</button>
      </form>
      <div class="board"></div>
      <div class="actions">
        <button class="export" disabled>Export board</button>
      </div>`;

    const banner = root.querySelector('.banner') as HTMLElement;
    const form = root.querySelector('form.compose') as HTMLFormElement;
    const tokens = root.querySelector('.tokens') as HTMLElement;
    const hints = root.querySelector('#keyword-hints') as HTMLDataListElement;
    const board = root.querySelector('.board') as HTMLElement;
    const exportBtn = root.querySelector('button.export') as HTMLButtonElement;

    let keywords: string[] = [];
    let session: ExplorationSession | null = null;

    const showError = (message: string) => {
        banner.textContent = message;
        banner.hidden = false;
    };
    const clearError = () => {
        banner.hidden = true;
    };

    const keywordInput = form.elements.namedItem('keyword') as HTMLInputElement;
    keywordInput.addEventListener('input', async () => {
        try {
            const matches = await api.keywords(normalizeKeyword(keywordInput.value));
            hints.innerHTML = matches
                .slice(0, 20)
                .map(m => `<option value="${m.keyword}">${m.n_fonts} fonts</option>`)
                .join('');
        } catch {
            hints.innerHTML = ''; // hints are best-effort; free text always works
        }
    });
    keywordInput.addEventListener('keydown', e => {
        if (e.key !== 'Enter') return;
        e.preventDefault();
        const kw = normalizeKeyword(keywordInput.value);
        if (kw && !keywords.includes(kw)) {
            keywords.push(kw);
            renderTokens();
        }
        keywordInput.value = '';
    });

    function renderTokens(): void {
        tokens.innerHTML = keywords
            .map(k => `<button type="button" class="token" data-kw="${k}">${k} ✕</button>`)
            .join('');
        tokens.querySelectorAll<HTMLButtonElement>('.token').forEach(btn => {
            btn.addEventListener('click', () => {
                keywords = keywords.filter(k => k !== btn.dataset.kw);
                renderTokens();
            });
        });
    }

    function renderRow(row: SessionRow): HTMLElement {
        const div = document.createElement('div');
        div.className = `row ${row.state}`;
        const label = row.request.keywords
            .map(k => (k === row.changed ? `<mark>${k}</mark>` : k))
            .join(', ');
        const cells =
            row.state === 'done' && row.response
                ? row.response.images
                      .map(img => `<img width="64" height="64" alt="${img.letter}"
                               src="data:image/png;base64,${img.png_base64}" />`)
                      .join('')
                : row.state === 'error'
                  ? `<span class="error">${row.error}</span>`
                  : '<span class="spinner">generating…</span>';
        div.innerHTML = `<div class="caption">${label} (seed ${row.request.seed})</div>
                         <div class="cells">${cells}</div>
                         <div class="edits">
                           <button data-edit="replace">replace…</button>
                           <button data-edit="remove">remove…</button>
                           <button data-edit="add">add…</button>
                           <button data-edit="reseed">reseed</button>
                         </div>`;
        div.querySelectorAll<HTMLButtonElement>('[data-edit]').forEach(btn => {
            btn.addEventListener('click', () => promptEdit(btn.dataset.edit!));
        });
        return div;
    }

    function renderBoard(): void {
        board.innerHTML = '';
        if (!session) return;
        session.rows.forEach(row => board.appendChild(renderRow(row)));
        exportBtn.disabled = !session.rows.some(r => r.state === 'done');
    }

    async function runRow(index: number): Promise<void> {
        if (!session) return;
        renderBoard();
        await session.generateRow(index);
        renderBoard();
    }

    function promptEdit(kind: string): void {
        if (!session) return;
        let edit: KeywordEdit;
        if (kind === 'replace') {
            const from = window.prompt('replace which keyword?') ?? '';
            const to = window.prompt(`replace "${from}" with?`) ?? '';
            edit = { kind: 'replace', from, to };
        } else if (kind === 'remove') {
            edit = { kind: 'remove', keyword: window.prompt('remove which keyword?') ?? '' };
        } else if (kind === 'add') {
            edit = { kind: 'add', keyword: window.prompt('add which keyword?') ?? '' };
        } else {
            edit = { kind: 'reseed', seed: Math.floor(Math.random() * 1_000_000) };
        }
        try {
            clearError();
            session.addEdit(edit);
            void runRow(session.rows.length - 1);
        } catch (err) {
            showError(err instanceof Error ? err.message : String(err));
        }
    }

    form.addEventListener('submit', async e => {
        e.preventDefault();
        clearError();
        const letters = (form.elements.namedItem('letters') as HTMLInputElement).value;
        const seed = Number((form.elements.namedItem('seed') as HTMLInputElement).value);
        try {
            const health = await api.health();
            if (health.status !== 'ready' || health.schedule_T === null) {
                showError('service is still loading its model');
                return;
            }
            session = new ExplorationSession(
                api,
                { ...DEFAULT_REQUEST, letters, keywords: keywords.slice(), seed },
                health.schedule_T,
                health.checkpoint_hash ?? '',
            );
            await runRow(0);
        } catch (err) {
            // keep the form state; surface the failure inline
            showError(err instanceof Error ? err.message : String(err));
        }
    });

    exportBtn.addEventListener('click', () => {
        if (!session) return;
        try {
            const bundle = exportBundle(session);
            const blob = new Blob([JSON.stringify(bundle, null, 1)], { type: 'application/json' });
            const a = document.createElement('a');
            a.href = URL.createObjectURL(blob);
            a.download = 'glyph-board.json';
            a.click();
            URL.revokeObjectURL(a.href);
        } catch (err) {
            showError(err instanceof Error ? err.message : String(err));
        }
    });
}
