"""Label-proposal backends.

The built-in proposer is a per-node 3-layer MLP over hand-crafted part
features: at AND nodes each part is scored from its own feature vector
concatenated with a pooled group feature; at OR nodes only the pooled group
feature is used and one distribution covers the whole part group. External
backends (e.g. a point-cloud network in another process) speak a small JSON
protocol and their responses are validated before use.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import FEATURE_DIM, features_for_shape
from .tree import AND, OR, LabelTree

log = logging.getLogger(__name__)

AGGREGATES = ("min", "mean", "product")


class ProposerError(ValueError):
    pass


class PaddingError(ProposerError):
    pass


class BackendError(RuntimeError):
    """External backend failed or returned an invalid response."""


@dataclass
class ProposerConfig:
    n_sample_points: int = 8192
    feature_dim: int = FEATURE_DIM
    p_max: int = 150
    hidden: tuple[int, int] = (64, 64)
    pretrain_epochs: int = 250
    pretrain_lr: float = 0.001
    lr_decay: float = 0.8
    lr_decay_every: int = 25
    finetune_epochs: int = 125
    finetune_lr: float = 0.0001
    momentum: float = 0.9
    optimizer: str = "sgd"  # sgd (with momentum) or adam
    minibatch: int = 32
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_sample_points", "feature_dim", "p_max",
                     "pretrain_epochs", "finetune_epochs", "minibatch",
                     "lr_decay_every"):
            if getattr(self, name) < 1:
                raise ProposerError(f"{name} must be positive")
        for name in ("pretrain_lr", "finetune_lr", "lr_decay"):
            if getattr(self, name) <= 0:
                raise ProposerError(f"{name} must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ProposerError(f"unknown optimizer {self.optimizer!r}")
        if any(h < 1 for h in self.hidden):
            raise ProposerError("hidden widths must be positive")


@dataclass
class Proposal:
    """Per-part (AND) or per-group (OR) distributions over a node's children."""

    shape_id: str
    node_id: str
    kind: str
    part_ids: list[int]
    children: list[str]
    part_probs: dict[int, np.ndarray] | None  # AND nodes
    group_probs: np.ndarray | None            # OR nodes
    labels: dict[int, str] | None
    group_label: str | None
    confidence: float


def _validate_probs(vec: np.ndarray, n_children: int, where: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (n_children,):
        raise ProposerError(f"{where}: expected {n_children} probabilities, "
                            f"got shape {vec.shape}")
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ProposerError(f"{where}: probabilities must be finite and >= 0")
    if abs(float(vec.sum()) - 1.0) > 1e-6:
        raise ProposerError(f"{where}: probabilities sum to {vec.sum():.8f}, not 1")
    return vec


def _aggregate(values: list[float], rule: str) -> float:
    if rule == "min":
        return min(values)
    if rule == "mean":
        return sum(values) / len(values)
    if rule == "product":
        out = 1.0
        for v in values:
            out *= v
        return out
    raise ProposerError(f"unknown confidence aggregate {rule!r}")


def build_proposal(shape_id: str, node_id: str, kind: str, children: list[str],
                   part_ids: list[int], raw, aggregate: str = "min") -> Proposal:
    """Assemble and validate a Proposal from raw probability vectors.

    `raw` is {part_id: vector} at AND nodes or a single vector at OR nodes.
    Used for built-in and external backends alike, so invalid distributions
    are rejected before they can touch session state.
    """
    n = len(children)
    if kind == AND:
        probs = {}
        labels = {}
        maxima = []
        for pid in part_ids:
            if pid not in raw:
                raise ProposerError(
                    f"{shape_id}/{node_id}: no probabilities for part {pid}")
            vec = _validate_probs(raw[pid], n, f"{shape_id}/part {pid}")
            probs[pid] = vec
            k = int(np.argmax(vec))
            labels[pid] = children[k]
            maxima.append(float(vec[k]))
        conf = _aggregate(maxima, aggregate)
        return Proposal(shape_id, node_id, kind, list(part_ids), list(children),
                        probs, None, labels, None, conf)
    vec = _validate_probs(raw, n, f"{shape_id}/{node_id}")
    k = int(np.argmax(vec))
    return Proposal(shape_id, node_id, kind, list(part_ids), list(children),
                    None, vec, None, children[k], float(vec[k]))


# ---------------------------------------------------------------------------
# MLP head: functional core, kept separate so gradients can be checked.


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_params(rng: np.random.Generator, in_dim: int, hidden: tuple[int, int],
                out_dim: int) -> dict[str, np.ndarray]:
    sizes = [in_dim, hidden[0], hidden[1], out_dim]
    params: dict[str, np.ndarray] = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        params[f"b{i}"] = np.zeros(b)
    return params


def forward(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    h1 = np.maximum(x @ params["W0"] + params["b0"], 0.0)
    h2 = np.maximum(h1 @ params["W1"] + params["b1"], 0.0)
    return softmax(h2 @ params["W2"] + params["b2"])


def loss_and_grads(params: dict[str, np.ndarray], x: np.ndarray,
                   y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its analytic gradients."""
    n = x.shape[0]
    h1 = np.maximum(x @ params["W0"] + params["b0"], 0.0)
    h2 = np.maximum(h1 @ params["W1"] + params["b1"], 0.0)
    probs = softmax(h2 @ params["W2"] + params["b2"])
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))

    dz3 = probs.copy()
    dz3[np.arange(n), y] -= 1.0
    dz3 /= n
    grads = {
        "W2": h2.T @ dz3,
        "b2": dz3.sum(axis=0),
    }
    dh2 = dz3 @ params["W2"].T
    dh2[h2 <= 0] = 0.0
    grads["W1"] = h1.T @ dh2
    grads["b1"] = dh2.sum(axis=0)
    dh1 = dh2 @ params["W1"].T
    dh1[h1 <= 0] = 0.0
    grads["W0"] = x.T @ dh1
    grads["b0"] = dh1.sum(axis=0)
    return loss, grads


def _train(params, x, y, *, epochs, lr0, decay, decay_every, momentum,
           batch, rng, optimizer="sgd", eval_set=None, progress=None):
    """Minibatch training; returns (params, per-epoch losses).

    With `eval_set` given, keeps the weights scoring best on it (ties favor
    later epochs), so fine-tuning never ends worse on the confirmed set than
    it started.
    """
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    sq = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    best = None
    step = 0
    if eval_set is not None:
        best = (_accuracy(params, *eval_set),
                {k: v.copy() for k, v in params.items()})
    for epoch in range(epochs):
        lr = lr0 * decay ** (epoch // decay_every)
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        for start in range(0, x.shape[0], batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grads(params, x[idx], y[idx])
            epoch_loss += loss * len(idx)
            step += 1
            for k in params:
                if optimizer == "adam":
                    vel[k] = 0.9 * vel[k] + 0.1 * grads[k]
                    sq[k] = 0.999 * sq[k] + 0.001 * grads[k] ** 2
                    mhat = vel[k] / (1 - 0.9 ** step)
                    vhat = sq[k] / (1 - 0.999 ** step)
                    params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + 1e-8)
                else:
                    vel[k] = momentum * vel[k] - lr * grads[k]
                    params[k] = params[k] + vel[k]
        losses.append(epoch_loss / x.shape[0])
        if eval_set is not None:
            acc = _accuracy(params, *eval_set)
            if acc >= best[0]:
                best = (acc, {k: v.copy() for k, v in params.items()})
        if progress is not None:
            progress((epoch + 1) / epochs)
    if best is not None:
        return best[1], losses
    return params, losses


def _accuracy(params, x, y) -> float:
    pred = forward(params, x).argmax(axis=1)
    return float((pred == y).mean())


@dataclass
class NodeModel:
    node_id: str
    kind: str
    children: list[str]
    params: dict[str, np.ndarray]
    feat_mean: np.ndarray
    feat_std: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    missing_children: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


class BuiltinProposer:
    """Per-node MLP classifier over the 12-dim geometric part features."""

    trainable = True

    def __init__(self, tree: LabelTree, config: ProposerConfig | None = None):
        self.tree = tree
        self.config = config or ProposerConfig()
        self.config.validate()
        self.models: dict[str, NodeModel] = {}
        self._feature_cache: dict[int, tuple] = {}

    def _node_rng(self, node_id: str, salt: str = "") -> np.random.Generator:
        digest = hashlib.sha256(
            f"{self.config.seed}:{node_id}:{salt}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "big"))

    def is_trained(self, node_id: str) -> bool:
        return node_id in self.models

    def _features(self, shape) -> dict[int, np.ndarray]:
        # Keyed by object identity, not shape id: train/test splits may reuse
        # ids. The cached shape reference keeps the key from being recycled.
        key = id(shape)
        hit = self._feature_cache.get(key)
        if hit is None or hit[0] is not shape:
            hit = (shape, features_for_shape(shape))
            self._feature_cache[key] = hit
        return hit[1]

    def _rows(self, node_kind: str, shape, part_ids: list[int]) -> np.ndarray:
        feats = self._features(shape)
        ordered = sorted(part_ids)
        group = np.mean([feats[p] for p in ordered], axis=0)
        if node_kind == OR:
            return group[None, :]
        return np.stack([np.concatenate([feats[p], group]) for p in ordered])

    def _build_data(self, node_id: str, examples):
        node = self.tree.node(node_id)
        children = self.tree.children_labels(node_id)
        child_index = {c: i for i, c in enumerate(children)}
        xs, ys = [], []
        for shape, part_ids, labels in examples:
            rows = self._rows(node.kind, shape, part_ids)
            if node.kind == OR:
                if labels not in child_index:
                    raise ProposerError(
                        f"label {labels!r} is not a child of {node_id!r}")
                xs.append(rows)
                ys.append(child_index[labels])
            else:
                for row, pid in zip(rows, sorted(part_ids)):
                    if labels[pid] not in child_index:
                        raise ProposerError(
                            f"label {labels[pid]!r} is not a child of {node_id!r}")
                    xs.append(row[None, :])
                    ys.append(child_index[labels[pid]])
        if not xs:
            raise ProposerError(f"no training data for node {node_id!r}")
        return np.concatenate(xs), np.asarray(ys, dtype=int), children

    def pretrain(self, node_id: str, examples) -> NodeModel:
        """Train the node's classifier head from scratch on labeled shapes."""
        cfg = self.config
        x, y, children = self._build_data(node_id, examples)
        missing = [c for i, c in enumerate(children) if i not in set(y.tolist())]
        if missing:
            log.warning("node %s: no training data for child labels %s",
                        node_id, missing)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        # A feature that is constant on the training set carries no signal;
        # leave it unscaled instead of exploding small test-time deviations.
        std[std < 1e-6] = 1.0
        xs = (x - mean) / std
        rng = self._node_rng(node_id, "pretrain")
        params = init_params(rng, x.shape[1], cfg.hidden, len(children))
        params, losses = _train(
            params, xs, y, epochs=cfg.pretrain_epochs, lr0=cfg.pretrain_lr,
            decay=cfg.lr_decay, decay_every=cfg.lr_decay_every,
            momentum=cfg.momentum, batch=cfg.minibatch, rng=rng,
            optimizer=cfg.optimizer)
        model = NodeModel(node_id, self.tree.kind(node_id), children, params,
                          mean, std, x, y, missing, losses)
        self.models[node_id] = model
        return model

    def finetune(self, node_id: str, examples, progress=None) -> None:
        """Continue training on confirmed shapes mixed with the original set.

        No-op on an empty confirmed set. The confirmed subset doubles as the
        checkpoint-selection set, so accuracy on it cannot regress.
        """
        if not examples:
            return
        model = self.models.get(node_id)
        if model is None:
            raise ProposerError(f"node {node_id!r} has no trained model")
        cfg = self.config
        x_new, y_new, _ = self._build_data(node_id, examples)
        x = np.concatenate([x_new, model.train_x])
        y = np.concatenate([y_new, model.train_y])
        xs = (x - model.feat_mean) / model.feat_std
        eval_set = (xs[:len(y_new)], y_new)
        rng = self._node_rng(node_id, "finetune")
        params, losses = _train(
            model.params, xs, y, epochs=cfg.finetune_epochs,
            lr0=cfg.finetune_lr, decay=1.0, decay_every=cfg.lr_decay_every,
            momentum=cfg.momentum, batch=cfg.minibatch, rng=rng,
            optimizer=cfg.optimizer, eval_set=eval_set, progress=progress)
        model.params = params
        model.losses.extend(losses)

    def propose(self, node_id: str, shape, part_ids: list[int]):
        """Raw probability vectors for one shape's routed parts.

        Parts are scored one row at a time, so results are bit-identical no
        matter how much padding headroom `p_max` leaves.
        """
        model = self.models.get(node_id)
        if model is None:
            raise ProposerError(f"node {node_id!r} has no trained model")
        if len(part_ids) > self.config.p_max:
            raise PaddingError(
                f"shape {shape.id!r} has {len(part_ids)} parts at node "
                f"{node_id!r}, above the padding limit {self.config.p_max}")
        rows = (self._rows(model.kind, shape, part_ids) - model.feat_mean) \
            / model.feat_std
        if model.kind == OR:
            return forward(model.params, rows[0][None, :])[0]
        out = {}
        for row, pid in zip(rows, sorted(part_ids)):
            out[pid] = forward(model.params, row[None, :])[0]
        return out

    # --- persistence ---

    def save(self, directory) -> None:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {}
        for node_id, m in self.models.items():
            fname = hashlib.sha256(node_id.encode()).hexdigest()[:16] + ".npz"
            arrays = {f"param_{k}": v for k, v in m.params.items()}
            arrays["feat_mean"] = m.feat_mean
            arrays["feat_std"] = m.feat_std
            arrays["train_x"] = m.train_x
            arrays["train_y"] = m.train_y
            np.savez(d / fname, **arrays)
            meta[node_id] = {"file": fname, "kind": m.kind,
                             "children": m.children,
                             "missing_children": m.missing_children}
        (d / "models.json").write_text(
            json.dumps({"meta": meta, "config_seed": self.config.seed},
                       indent=2, sort_keys=True),
            encoding="utf-8")

    def load(self, directory) -> None:
        from pathlib import Path
        d = Path(directory)
        data = json.loads((d / "models.json").read_text(encoding="utf-8"))
        for node_id, info in data["meta"].items():
            blob = np.load(d / info["file"])
            params = {k[len("param_"):]: blob[k]
                      for k in blob.files if k.startswith("param_")}
            self.models[node_id] = NodeModel(
                node_id, info["kind"], list(info["children"]), params,
                blob["feat_mean"], blob["feat_std"],
                blob["train_x"], blob["train_y"],
                list(info.get("missing_children", [])))


class RandomProposer:
    """Seeded noise proposals; the worst-case baseline the loop must survive."""

    trainable = False

    def __init__(self, tree: LabelTree, seed: int = 0):
        self.tree = tree
        self._rng = np.random.default_rng(seed)

    def is_trained(self, node_id: str) -> bool:
        return True

    def pretrain(self, node_id: str, examples) -> None:
        return None

    def finetune(self, node_id: str, examples, progress=None) -> None:
        return None

    def propose(self, node_id: str, shape, part_ids: list[int]):
        n = len(self.tree.children_labels(node_id))
        if self.tree.kind(node_id) == OR:
            return self._rng.dirichlet(np.ones(n))
        return {pid: self._rng.dirichlet(np.ones(n)) for pid in sorted(part_ids)}


# ---------------------------------------------------------------------------
# External backend protocol: length-delimited JSON frames or HTTP POST.


def write_frame(stream, obj: dict) -> None:
    data = json.dumps(obj, sort_keys=True).encode("utf-8")
    stream.write(struct.pack(">I", len(data)) + data)
    stream.flush()


def read_frame(stream) -> dict:
    header = stream.read(4)
    if len(header) < 4:
        raise BackendError("stream closed before frame header")
    (length,) = struct.unpack(">I", header)
    data = stream.read(length)
    if len(data) < length:
        raise BackendError("stream closed mid-frame")
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BackendError(f"malformed frame: {exc}") from exc


class StreamBackend:
    """Backend over a byte stream pair (e.g. a subprocess's stdio)."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    def call(self, request: dict) -> dict:
        write_frame(self.writer, request)
        return read_frame(self.reader)


class HttpBackend:
    """Backend over HTTP POST; expects/returns one JSON body per call."""

    def __init__(self, url: str, client=None, timeout: float = 30.0):
        import httpx
        self.url = url
        self.client = client or httpx.Client(timeout=timeout)

    def call(self, request: dict) -> dict:
        import httpx
        try:
            resp = self.client.post(self.url, json=request)
        except httpx.HTTPError as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"backend returned non-JSON body: {exc}") from exc


class ExternalProposer:
    """Adapter that sources proposals from an external backend.

    Responses are validated downstream exactly like built-in output; a
    malformed or invariant-violating reply raises before any session state
    is touched.
    """

    def __init__(self, tree: LabelTree, backend, trainable: bool = False):
        self.tree = tree
        self.backend = backend
        self.trainable = trainable

    def is_trained(self, node_id: str) -> bool:
        return True

    def _shapes_payload(self, shape, part_ids):
        return [{
            "id": shape.id,
            "parts": [
                {"id": p.id, "points": np.asarray(p.points).tolist()}
                for p in shape.parts if p.id in set(part_ids)
            ],
        }]

    def pretrain(self, node_id: str, examples) -> None:
        if not self.trainable:
            return
        self.backend.call({"cmd": "pretrain", "node": node_id,
                           "shapes": [{"id": s.id} for s, _, _ in examples]})

    def finetune(self, node_id: str, examples, progress=None) -> None:
        if not self.trainable:
            return
        self.backend.call({"cmd": "finetune", "node": node_id,
                           "shapes": [{"id": s.id} for s, _, _ in examples]})

    def propose(self, node_id: str, shape, part_ids: list[int]):
        reply = self.backend.call({
            "cmd": "propose",
            "node": node_id,
            "kind": self.tree.kind(node_id),
            "children": self.tree.children_labels(node_id),
            "shapes": self._shapes_payload(shape, part_ids),
        })
        if not isinstance(reply, dict) or "proposals" not in reply \
                or not isinstance(reply["proposals"], list) or not reply["proposals"]:
            raise BackendError("backend reply missing 'proposals'")
        entry = reply["proposals"][0]
        if self.tree.kind(node_id) == OR:
            if "probs" not in entry:
                raise BackendError("backend proposal missing 'probs'")
            return np.asarray(entry["probs"], dtype=np.float64)
        probs = entry.get("probs")
        if not isinstance(probs, dict):
            raise BackendError("backend proposal 'probs' must map part id -> vector")
        out = {}
        for pid in part_ids:
            key = str(pid)
            if key not in probs and pid not in probs:
                raise BackendError(f"backend proposal missing part {pid}")
            out[pid] = np.asarray(probs.get(key, probs.get(pid)),
                                  dtype=np.float64)
        return out
