import { ApiClient } from './api.js';
import { App } from './app.js';

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get('api') ?? 'http://127.0.0.1:8100';
  const api = new ApiClient(base);
  const root = document.getElementById('app')!;
  let sessionId = params.get('session');
  if (!sessionId) {
    const dataset = params.get('dataset');
    if (!dataset) {
      root.textContent =
        'Pass ?session=<id> to join a session or ?dataset=<manifest> '
        + 'to start a live one.';
      return;
    }
    const created = await api.createSession({
      dataset,
      mode: 'live',
      proposer: (params.get('proposer') as 'builtin' | 'random') ?? 'random',
      train_dataset: params.get('train_dataset') ?? undefined,
    });
    sessionId = created.session_id;
    const url = new URL(window.location.href);
    url.searchParams.set('session', sessionId);
    window.history.replaceState(null, '', url);
  }
  await new App(api, sessionId, root).run();
}

boot().catch((err) => {
  const root = document.getElementById('app');
  if (root) root.textContent = `failed: ${err}`;
});
