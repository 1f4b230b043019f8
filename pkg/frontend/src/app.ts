/** DOM layer: verification gallery, modification editor, progress sidebar. */

import { ApiClient } from './api.js';
import {
  ActiveView, ModificationView, SessionController, VerificationView,
} from './controller.js';
import type { RGB, SessionStatus, ShapePayload, TreeNode } from './types.js';
import { Camera, defaultCamera, drawShape, orbit } from './viewer.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function swatch(color: RGB): HTMLElement {
  const s = el('span', 'swatch');
  s.style.backgroundColor = `rgb(${color.join(',')})`;
  return s;
}

function attachOrbit(canvas: HTMLCanvasElement, redraw: (cam: Camera) => void,
                     cam: Camera): void {
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener('mousedown', (e) => {
    dragging = true;
    last = [e.clientX, e.clientY];
  });
  window.addEventListener('mouseup', () => { dragging = false; });
  canvas.addEventListener('mousemove', (e) => {
    if (!dragging) return;
    cam = orbit(cam, e.clientX - last[0], e.clientY - last[1]);
    last = [e.clientX, e.clientY];
    redraw(cam);
  });
}

export class App {
  private shapeCache = new Map<string, ShapePayload>();
  private tree: TreeNode | null = null;
  private controller: SessionController;

  constructor(private api: ApiClient, private sessionId: string,
              private root: HTMLElement) {
    this.controller = new SessionController(api, sessionId);
  }

  private async shape(shapeId: string): Promise<ShapePayload> {
    let cached = this.shapeCache.get(shapeId);
    if (!cached) {
      cached = await this.api.shape(this.sessionId, shapeId);
      this.shapeCache.set(shapeId, cached);
    }
    return cached;
  }

  async run(): Promise<void> {
    this.tree = await this.api.tree(this.sessionId);
    for (;;) {
      const view = await this.controller.fetchView();
      if (view.kind === 'done') {
        await this.renderDone();
        return;
      }
      if (view.kind === 'training_wait') {
        this.renderTraining(view.progress);
        await new Promise((r) => setTimeout(r, 500));
        continue;
      }
      if (view.kind === 'verification') {
        await this.renderVerification(view.view);
      } else {
        await this.renderModification(view.view);
      }
    }
  }

  private async header(): Promise<HTMLElement> {
    const status = await this.api.status(this.sessionId);
    const head = el('header');
    head.appendChild(el('h1', 'title', 'Part labeling'));
    head.appendChild(el('span', 'session', `session ${this.sessionId}`));
    head.appendChild(this.sidebar(status));
    return head;
  }

  private sidebar(status: SessionStatus): HTMLElement {
    const side = el('aside', 'progress');
    side.appendChild(el('h2', undefined, 'Verified per iteration'));
    const list = el('ul');
    for (const [node, info] of Object.entries(status.snapshot.nodes)) {
      const li = el('li', 'node-progress',
        `${node}: ${info.verified_per_iteration.join(', ') || '-'} `
        + `(${info.phase})`);
      list.appendChild(li);
    }
    side.appendChild(list);
    side.appendChild(el('p', 'cost',
      `simulated cost ${status.snapshot.cost.total_seconds.toFixed(1)} s`));
    return side;
  }

  private async renderVerification(view: VerificationView): Promise<void> {
    const { payload } = view;
    this.root.replaceChildren(await this.header());
    const main = el('main', 'verification');
    main.appendChild(el('h2', undefined,
      `Verify batch ${payload.batch_id} - pass only if every part is right`));
    main.appendChild(this.legend(payload.palette));
    const grid = el('div', 'tile-grid');
    const submit = el('button', 'submit', 'Submit verdicts') as
      HTMLButtonElement;
    submit.disabled = true;

    const refresh = () => {
      submit.disabled = !view.canSubmit();
      grid.querySelectorAll('.tile').forEach((tile, i) => {
        const sid = payload.shapes[i].shape_id;
        tile.classList.toggle('focused', view.focusIndex === i);
        tile.classList.toggle('pass', view.verdictOf(sid) === true);
        tile.classList.toggle('fail', view.verdictOf(sid) === false);
      });
    };

    for (const entry of payload.shapes) {
      const tile = el('div', 'tile');
      tile.dataset.shapeId = entry.shape_id;
      const canvas = el('canvas') as HTMLCanvasElement;
      canvas.width = 220;
      canvas.height = 200;
      tile.appendChild(canvas);
      tile.appendChild(el('div', 'shape-name',
        `${entry.shape_id} (${(entry.confidence * 100).toFixed(0)}%)`));
      const controls = el('div', 'verdict-controls');
      const pass = el('button', 'pass', 'pass');
      const fail = el('button', 'fail', 'fail');
      pass.addEventListener('click', () => {
        view.setVerdict(entry.shape_id, true);
        refresh();
      });
      fail.addEventListener('click', () => {
        view.setVerdict(entry.shape_id, false);
        refresh();
      });
      controls.append(pass, fail);
      tile.appendChild(controls);
      grid.appendChild(tile);

      const labels = new Map<number, string | null>();
      for (const pid of entry.parts) {
        labels.set(pid, entry.proposed?.[String(pid)]
          ?? entry.group_label);
      }
      this.shape(entry.shape_id).then((shape) => {
        const cam = defaultCamera();
        const redraw = (c: Camera) => drawShape(canvas, shape, c, {
          labels, palette: payload.palette,
        });
        redraw(cam);
        attachOrbit(canvas, redraw, cam);
      });
    }
    main.appendChild(grid);
    main.appendChild(submit);
    this.root.appendChild(main);

    const onKey = (e: KeyboardEvent) => {
      view.handleKey(e.key);
      refresh();
    };
    window.addEventListener('keydown', onKey);
    refresh();

    await new Promise<void>((resolve) => {
      submit.addEventListener('click', async () => {
        if (!view.canSubmit()) return;
        submit.disabled = true;
        try {
          await view.submit(this.api, this.sessionId);
        } catch {
          // Stale batch: refetch the current task instead of losing state.
        }
        window.removeEventListener('keydown', onKey);
        resolve();
      });
    });
  }

  private legend(palette: Record<string, RGB>): HTMLElement {
    const legend = el('div', 'legend');
    for (const [label, color] of Object.entries(palette)) {
      const item = el('span', 'legend-item');
      item.appendChild(swatch(color));
      item.appendChild(el('span', undefined, label));
      legend.appendChild(item);
    }
    return legend;
  }

  /** Hierarchical picker: full taxonomy shown, only node children enabled. */
  private labelPicker(children: string[], palette: Record<string, RGB>,
                      onPick: (label: string) => void): HTMLElement {
    const box = el('div', 'label-picker');
    const walk = (node: TreeNode, depth: number) => {
      const row = el('div', 'picker-row');
      row.style.paddingLeft = `${depth * 14}px`;
      const btn = el('button', 'pick', node.name) as HTMLButtonElement;
      btn.dataset.label = node.id;
      if (children.includes(node.id)) {
        btn.prepend(swatch(palette[node.id] ?? node.color));
        btn.addEventListener('click', () => onPick(node.id));
      } else {
        btn.disabled = true;
      }
      row.appendChild(btn);
      box.appendChild(row);
      node.children.forEach((c) => walk(c, depth + 1));
    };
    if (this.tree) walk(this.tree, 0);
    return box;
  }

  private async renderModification(view: ModificationView): Promise<void> {
    const { payload } = view;
    this.root.replaceChildren(await this.header());
    const main = el('main', 'modification');
    main.appendChild(el('h2', undefined,
      `Fix labels on ${payload.shape_id}`
      + (view.isGroupDecision ? ' (pick the type)' : '')));
    const layout = el('div', 'editor-layout');
    const canvas = el('canvas') as HTMLCanvasElement;
    canvas.width = 560;
    canvas.height = 480;
    layout.appendChild(canvas);

    const side = el('div', 'editor-side');
    const partList = el('ul', 'part-list');
    const preview = el('div', 'preview-note');
    const submit = el('button', 'submit', 'Apply changes') as
      HTMLButtonElement;

    const shape = await this.shape(payload.shape_id);
    const cam = defaultCamera();

    const redraw = () => {
      drawShape(canvas, shape, cam, {
        labels: view.previewLabels(),
        palette: payload.palette,
        highlight: view.selectedPart,
      });
      partList.replaceChildren();
      const previewLabels = view.previewLabels();
      const filled = new Set(view.previewFilled());
      for (const pid of payload.parts) {
        const li = el('li', 'part-row');
        li.dataset.partId = String(pid);
        const label = previewLabels.get(pid) ?? 'unlabeled';
        li.textContent = `part ${pid}: ${label}`;
        if (view.staged.has(pid)) li.classList.add('edited');
        if (filled.has(pid)) li.classList.add('propagated');
        if (view.selectedPart === pid) li.classList.add('selected');
        li.addEventListener('click', () => {
          view.selectPart(pid);
          redraw();
        });
        partList.appendChild(li);
      }
      const nFilled = filled.size;
      preview.textContent = nFilled > 0
        ? `symmetry propagation will relabel ${nFilled} sibling part(s)`
        : '';
      submit.disabled = !view.canSubmit();
    };

    side.appendChild(partList);
    side.appendChild(this.labelPicker(payload.children, payload.palette,
      (label) => {
        view.stageLabel(label);
        redraw();
      }));
    side.appendChild(preview);
    side.appendChild(submit);
    layout.appendChild(side);
    main.appendChild(layout);
    this.root.appendChild(main);
    attachOrbit(canvas, () => redraw(), cam);
    redraw();

    await new Promise<void>((resolve) => {
      submit.addEventListener('click', async () => {
        if (!view.canSubmit()) return;
        submit.disabled = true;
        try {
          await view.submit(this.api, this.sessionId);
        } catch {
          // Conflict: the task list moved on; refetch.
        }
        resolve();
      });
    });
  }

  private renderTraining(progress: number | null): void {
    const main = el('main', 'training');
    const pct = progress === null ? '' : ` ${(progress * 100).toFixed(0)}%`;
    main.appendChild(el('h2', undefined, `Model fine-tuning in progress${pct}`));
    this.root.replaceChildren(main);
  }

  private async renderDone(): Promise<void> {
    const report = await this.api.report(this.sessionId);
    const main = el('main', 'done');
    main.appendChild(el('h2', undefined, 'Session complete'));
    const pre = el('pre');
    pre.textContent = JSON.stringify(report, null, 2);
    main.appendChild(pre);
    this.root.replaceChildren(main);
  }
}
