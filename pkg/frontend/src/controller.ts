/** Client-side task state: verdict gating, edit staging, propagation preview.
 *
 * All labeling rules are enforced here so the DOM layer stays a dumb view:
 * verdicts must cover the whole batch before submit, staged labels can only
 * come from the current node's children, and the symmetry preview mirrors
 * the server's fill rule (unsubmitted members follow the lowest-id edited
 * member of their group).
 */

import type { ApiClient } from './api.js';
import type {
  ModificationPayload, ModificationResult, Task, VerificationPayload,
  VerificationResult,
} from './types.js';

let keyCounter = 0;

function freshKey(prefix: string): string {
  keyCounter += 1;
  return `${prefix}-${Date.now()}-${keyCounter}`;
}

export class VerificationView {
  readonly verdicts = new Map<string, boolean>();
  focusIndex = 0;
  private submitted = false;

  constructor(readonly payload: VerificationPayload) {}

  get shapeIds(): string[] {
    return this.payload.shapes.map((s) => s.shape_id);
  }

  setVerdict(shapeId: string, pass: boolean): void {
    if (!this.shapeIds.includes(shapeId)) {
      throw new Error(`shape ${shapeId} is not in this batch`);
    }
    this.verdicts.set(shapeId, pass);
  }

  verdictOf(shapeId: string): boolean | undefined {
    return this.verdicts.get(shapeId);
  }

  allSet(): boolean {
    return this.shapeIds.every((sid) => this.verdicts.has(sid));
  }

  canSubmit(): boolean {
    return this.allSet() && !this.submitted;
  }

  /** Keyboard shortcuts: p/f verdict + advance, arrows move focus. */
  handleKey(key: string): void {
    const ids = this.shapeIds;
    if (ids.length === 0) return;
    if (key === 'ArrowRight' || key === 'ArrowDown') {
      this.focusIndex = Math.min(this.focusIndex + 1, ids.length - 1);
    } else if (key === 'ArrowLeft' || key === 'ArrowUp') {
      this.focusIndex = Math.max(this.focusIndex - 1, 0);
    } else if (key === 'p' || key === 'f') {
      this.setVerdict(ids[this.focusIndex], key === 'p');
      this.focusIndex = Math.min(this.focusIndex + 1, ids.length - 1);
    }
  }

  async submit(api: ApiClient, sessionId: string): Promise<VerificationResult> {
    if (!this.canSubmit()) {
      throw new Error('submit blocked: every shape needs a verdict');
    }
    const verdicts: Record<string, boolean> = {};
    for (const sid of this.shapeIds) {
      verdicts[sid] = this.verdicts.get(sid)!;
    }
    const result = await api.submitVerdicts(
      sessionId, this.payload.batch_id, verdicts, freshKey('verify'));
    this.submitted = true;
    return result;
  }
}

export class ModificationView {
  /** Labels the user actually touched (partial map, like the wire format). */
  readonly staged = new Map<number, string>();
  selectedPart: number | null = null;
  stagedGroupLabel: string | null = null;
  private submitted = false;

  constructor(readonly payload: ModificationPayload) {}

  get isGroupDecision(): boolean {
    return this.payload.node_kind === 'or';
  }

  selectPart(partId: number): void {
    if (!this.payload.parts.includes(partId)) {
      throw new Error(`part ${partId} is not in this task`);
    }
    this.selectedPart = partId;
  }

  /** Stage a label for the selected part; node-scope enforced. */
  stageLabel(label: string): void {
    if (!this.payload.children.includes(label)) {
      throw new Error(`label ${label} is outside the current node`);
    }
    if (this.isGroupDecision) {
      this.stagedGroupLabel = label;
      return;
    }
    if (this.selectedPart === null) {
      throw new Error('select a part before picking a label');
    }
    this.staged.set(this.selectedPart, label);
  }

  proposedOf(partId: number): string | null {
    return this.payload.proposed?.[String(partId)] ?? null;
  }

  groupOf(partId: number): number[] {
    for (const group of this.payload.symmetry_groups) {
      if (group.includes(partId)) return group;
    }
    return [partId];
  }

  /**
   * Labels as they would land after submit: staged edits win, then symmetry
   * propagation from each group's lowest-id actually-edited member, then
   * the current proposals.
   */
  previewLabels(): Map<number, string | null> {
    const out = new Map<number, string | null>();
    if (this.isGroupDecision) {
      const label = this.stagedGroupLabel ?? this.payload.group_label;
      for (const pid of this.payload.parts) out.set(pid, label);
      return out;
    }
    const fill = new Map<number, string>();
    for (const group of this.payload.symmetry_groups) {
      const reps = group
        .filter((p) => this.staged.has(p)
          && this.staged.get(p) !== this.proposedOf(p))
        .sort((a, b) => a - b);
      if (reps.length === 0) continue;
      const source = this.staged.get(reps[0])!;
      for (const p of group) {
        if (!this.staged.has(p)) fill.set(p, source);
      }
    }
    for (const pid of this.payload.parts) {
      out.set(pid,
        this.staged.get(pid) ?? fill.get(pid) ?? this.proposedOf(pid));
    }
    return out;
  }

  /** Part ids whose preview label comes from propagation, not the user. */
  previewFilled(): number[] {
    const preview = this.previewLabels();
    return this.payload.parts.filter((pid) => !this.staged.has(pid)
      && preview.get(pid) !== this.proposedOf(pid));
  }

  canSubmit(): boolean {
    if (this.submitted) return false;
    if (this.isGroupDecision) return this.stagedGroupLabel !== null;
    // Every part must end labeled (a proposal, a staged edit, or a fill).
    const preview = this.previewLabels();
    return this.payload.parts.every((pid) => preview.get(pid) !== null);
  }

  async submit(api: ApiClient, sessionId: string): Promise<ModificationResult> {
    if (!this.canSubmit()) {
      throw new Error('submit blocked: parts without labels remain');
    }
    let result: ModificationResult;
    if (this.isGroupDecision) {
      result = await api.submitModification(
        sessionId, this.payload.shape_id, null, this.stagedGroupLabel,
        freshKey('modify'));
    } else {
      const labels: Record<number, string> = {};
      for (const [pid, label] of this.staged) labels[pid] = label;
      result = await api.submitModification(
        sessionId, this.payload.shape_id, labels, null, freshKey('modify'));
    }
    this.submitted = true;
    return result;
  }
}

export type ActiveView =
  | { kind: 'verification'; view: VerificationView }
  | { kind: 'modification'; view: ModificationView }
  | { kind: 'training_wait'; progress: number | null }
  | { kind: 'done' };

export class SessionController {
  constructor(readonly api: ApiClient, readonly sessionId: string) {}

  async fetchView(): Promise<ActiveView> {
    const task: Task = await this.api.nextTask(this.sessionId);
    switch (task.kind) {
      case 'verification_batch':
        return { kind: 'verification',
                 view: new VerificationView(task.payload) };
      case 'modification':
        return { kind: 'modification',
                 view: new ModificationView(task.payload) };
      case 'training_wait':
        return { kind: 'training_wait', progress: task.payload.progress };
      default:
        return { kind: 'done' };
    }
  }
}
