/** Wire types mirroring the annotation service's JSON schemas. */

export type RGB = [number, number, number];

export interface TreeNode {
  id: string;
  name: string;
  kind: 'and' | 'or';
  color: RGB;
  children: TreeNode[];
}

export interface VerificationShape {
  shape_id: string;
  parts: number[];
  proposed: Record<string, string> | null;
  group_label: string | null;
  confidence: number;
}

export interface VerificationPayload {
  batch_id: string;
  node: string;
  node_kind: 'and' | 'or';
  iteration: number;
  children: string[];
  palette: Record<string, RGB>;
  shapes: VerificationShape[];
}

export interface ModificationPayload {
  shape_id: string;
  node: string;
  node_kind: 'and' | 'or';
  iteration: number;
  children: string[];
  palette: Record<string, RGB>;
  parts: number[];
  proposed: Record<string, string> | null;
  group_label: string | null;
  symmetry_groups: number[][];
}

export type Task =
  | { kind: 'verification_batch'; payload: VerificationPayload }
  | { kind: 'modification'; payload: ModificationPayload }
  | { kind: 'training_wait'; payload: { progress: number | null } }
  | { kind: 'done'; payload: Record<string, never> };

export interface ShapePart {
  id: number;
  points: number[][];
  obb: { center: number[]; axes: number[][]; extents: number[] };
  label: string | null;
  gt_label: string | null;
}

export interface ShapePayload {
  shape_id: string;
  parts: ShapePart[];
  symmetry_groups: number[][];
  palette: Record<string, RGB>;
}

export interface SessionStatus {
  session_id: string;
  mode: string;
  complete: boolean;
  failed: boolean;
  error: string | null;
  snapshot: {
    active_node: string | null;
    nodes: Record<string, {
      kind: string;
      iteration: number;
      phase: string;
      verified_per_iteration: number[];
      confirmed: number;
    }>;
    cost: { total_seconds: number; total_hours: number };
  };
}

export interface VerificationResult {
  passed: number;
  failed: number;
  stopped: boolean;
}

export interface ModificationResult {
  labels: Record<string, string>;
  edited: number[];
  filled: number[];
  edited_group: boolean | null;
}

export interface SessionCreate {
  dataset: string;
  mode: 'live' | 'simulated';
  proposer: 'builtin' | 'random' | 'none';
  config?: Record<string, unknown>;
  train_dataset?: string;
  oracle?: { error_rate: number; seed: number };
  idempotency_key?: string;
}
