import io

import numpy as np
import pytest

from partlab.dataset import PartRecord, ShapeRecord, normalize_shape
from partlab.proposer import (BackendError, BuiltinProposer, ExternalProposer,
                              PaddingError, ProposerConfig, ProposerError,
                              RandomProposer, StreamBackend, build_proposal,
                              forward, init_params, loss_and_grads,
                              read_frame, softmax, write_frame)
from partlab.tree import LabelTree

TREE = LabelTree.from_dict({
    "id": "root", "name": "root", "kind": "and", "color": [0, 0, 0],
    "children": [
        {"id": "tall", "name": "tall", "kind": "and", "color": [1, 0, 0],
         "children": []},
        {"id": "flat", "name": "flat", "kind": "and", "color": [0, 1, 0],
         "children": []},
        {"id": "kind", "name": "kind", "kind": "or", "color": [0, 0, 1],
         "children": [
             {"id": "boxy", "name": "boxy", "kind": "and",
              "color": [2, 2, 2], "children": []},
             {"id": "rod", "name": "rod", "kind": "and",
              "color": [3, 3, 3], "children": []},
         ]},
    ],
})


def tall_cloud(rng, center):
    return rng.uniform(-1, 1, (60, 3)) * np.array([0.02, 0.02, 0.2]) + center


def flat_cloud(rng, center):
    return rng.uniform(-1, 1, (60, 3)) * np.array([0.2, 0.2, 0.015]) + center


def make_shape(sid, rng, n_tall=2, n_flat=1):
    parts = []
    pid = 0
    labels = {}
    for _ in range(n_tall):
        parts.append(PartRecord(pid, tall_cloud(rng, rng.uniform(-0.3, 0.3, 3))))
        labels[pid] = "tall"
        pid += 1
    for _ in range(n_flat):
        parts.append(PartRecord(pid, flat_cloud(rng, rng.uniform(-0.3, 0.3, 3))))
        labels[pid] = "flat"
        pid += 1
    return normalize_shape(ShapeRecord(sid, parts)), labels


def training_examples(n, seed=0):
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        shape, labels = make_shape(f"s{i:03d}", rng)
        examples.append((shape, sorted(labels), labels))
    return examples


def fast_config(**kw):
    defaults = dict(pretrain_epochs=60, minibatch=16, seed=0)
    defaults.update(kw)
    return ProposerConfig(**defaults)


def test_softmax_normalized_and_nonnegative():
    rng = np.random.default_rng(0)
    z = rng.normal(scale=20, size=(40, 7))
    p = softmax(z)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    params = init_params(rng, 6, (5, 4), 3)
    x = rng.normal(size=(8, 6))
    y = rng.integers(0, 3, size=8)
    _, grads = loss_and_grads(params, x, y)
    eps = 1e-6
    for key, grad in grads.items():
        flat = params[key].reshape(-1)
        gflat = grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grads(params, x, y)
            flat[i] = orig - eps
            lm, _ = loss_and_grads(params, x, y)
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-8)
            assert abs(fd - gflat[i]) / denom < 1e-4, (key, i, fd, gflat[i])


def test_pretrain_separable_blobs_high_accuracy():
    proposer = BuiltinProposer(TREE, fast_config())
    examples = training_examples(30)
    model = proposer.pretrain("root", examples)
    correct = 0
    total = 0
    for shape, part_ids, labels in examples:
        raw = proposer.propose("root", shape, part_ids)
        for pid in part_ids:
            total += 1
            if model.children[int(np.argmax(raw[pid]))] == labels[pid]:
                correct += 1
    assert correct / total >= 0.99


def test_pretrain_loss_decreases():
    proposer = BuiltinProposer(TREE, fast_config())
    model = proposer.pretrain("root", training_examples(20))
    assert model.losses[-1] < model.losses[0]


def test_pretrain_deterministic():
    a = BuiltinProposer(TREE, fast_config())
    b = BuiltinProposer(TREE, fast_config())
    examples = training_examples(10)
    ma = a.pretrain("root", examples)
    mb = b.pretrain("root", examples)
    assert ma.losses[-1] == mb.losses[-1]
    for key in ma.params:
        assert np.array_equal(ma.params[key], mb.params[key])


def test_pretrain_single_class_confident():
    rng = np.random.default_rng(2)
    examples = []
    for i in range(12):
        shape, labels = make_shape(f"s{i}", rng, n_tall=3, n_flat=0)
        examples.append((shape, sorted(labels), labels))
    proposer = BuiltinProposer(TREE, fast_config())
    model = proposer.pretrain("root", examples)
    assert "flat" in model.missing_children
    held, labels = make_shape("held", rng, n_tall=2, n_flat=0)
    raw = proposer.propose("root", held, sorted(labels))
    tall_idx = model.children.index("tall")
    for vec in raw.values():
        assert vec[tall_idx] >= 0.95


def test_or_node_single_vector():
    rng = np.random.default_rng(3)
    examples = []
    for i in range(16):
        boxy = i % 2 == 0
        shape, _ = make_shape(f"s{i}", rng, n_tall=0 if boxy else 3,
                              n_flat=3 if boxy else 0)
        labels = "boxy" if boxy else "rod"
        examples.append((shape, shape.part_ids(), labels))
    proposer = BuiltinProposer(TREE, fast_config())
    proposer.pretrain("kind", examples)
    shape, _ = make_shape("probe", rng, n_tall=0, n_flat=4)
    raw = proposer.propose("kind", shape, shape.part_ids())
    assert raw.shape == (2,)
    prop = build_proposal("probe", "kind", "or", ["boxy", "rod"],
                          shape.part_ids(), raw)
    assert prop.group_label == "boxy"
    assert prop.confidence == pytest.approx(float(raw.max()))


def test_duplicate_part_same_distribution():
    proposer = BuiltinProposer(TREE, fast_config())
    examples = training_examples(10)
    proposer.pretrain("root", examples)
    rng = np.random.default_rng(4)
    shape, labels = make_shape("dup", rng)
    # Duplicate part 0's geometry as a new part id.
    clone = PartRecord(99, shape.parts[0].points.copy())
    shape.parts.append(clone)
    raw = proposer.propose("root", shape, sorted([*labels, 99]))
    assert np.array_equal(raw[0], raw[99])


def test_padding_limit_enforced_and_bit_equivalent():
    examples = training_examples(10)
    rng = np.random.default_rng(5)
    shape, labels = make_shape("pad", rng, n_tall=2, n_flat=1)

    wide = BuiltinProposer(TREE, fast_config(p_max=150))
    tight = BuiltinProposer(TREE, fast_config(p_max=len(labels)))
    wide.pretrain("root", examples)
    tight.pretrain("root", examples)
    raw_wide = wide.propose("root", shape, sorted(labels))
    raw_tight = tight.propose("root", shape, sorted(labels))
    for pid in labels:
        assert np.array_equal(raw_wide[pid], raw_tight[pid])

    over = BuiltinProposer(TREE, fast_config(p_max=2))
    over.pretrain("root", examples)
    with pytest.raises(PaddingError):
        over.propose("root", shape, sorted(labels))


def test_propose_untrained_node_raises():
    proposer = BuiltinProposer(TREE, fast_config())
    rng = np.random.default_rng(6)
    shape, labels = make_shape("u", rng)
    with pytest.raises(ProposerError, match="no trained model"):
        proposer.propose("root", shape, sorted(labels))


def test_permutation_equivariance():
    proposer = BuiltinProposer(TREE, fast_config())
    proposer.pretrain("root", training_examples(10))
    rng = np.random.default_rng(7)
    shape, labels = make_shape("perm", rng, n_tall=3, n_flat=2)
    pids = sorted(labels)
    fwd = proposer.propose("root", shape, pids)
    shuffled = ShapeRecord(shape.id, shape.parts[::-1], shape.scale, shape.offset)
    rev = proposer.propose("root", shuffled, pids[::-1])
    for pid in pids:
        assert np.array_equal(fwd[pid], rev[pid])


def test_finetune_empty_noop_and_perfect_fixed_point():
    proposer = BuiltinProposer(TREE, fast_config())
    examples = training_examples(20)
    model = proposer.pretrain("root", examples)
    before = {k: v.copy() for k, v in model.params.items()}
    proposer.finetune("root", [])
    for key in before:
        assert np.array_equal(before[key], model.params[key])

    def accuracy(exs):
        good = bad = 0
        for shape, pids, labels in exs:
            raw = proposer.propose("root", shape, pids)
            for pid in pids:
                if model.children[int(np.argmax(raw[pid]))] == labels[pid]:
                    good += 1
                else:
                    bad += 1
        return good / (good + bad)

    assert accuracy(examples) == 1.0
    proposer.finetune("root", examples[:5])
    assert accuracy(examples[:5]) == 1.0


def test_finetune_adapts_to_shifted_cluster():
    # Shapes from a region the pretraining never covered, labeled opposite
    # to what the pretrained decision surface says.
    cfg = fast_config(finetune_epochs=125)
    proposer = BuiltinProposer(TREE, cfg)
    proposer.pretrain("root", training_examples(20))
    rng = np.random.default_rng(8)
    shifted = []
    for i in range(20):
        pts = rng.uniform(-1, 1, (60, 3)) * np.array([0.05, 0.05, 0.05]) \
            + np.array([0.0, 0.0, 0.45])
        anchor = flat_cloud(rng, np.array([0.0, 0.0, -0.3]))
        shape = normalize_shape(ShapeRecord(f"shift{i}",
                                            [PartRecord(0, pts),
                                             PartRecord(1, anchor)]))
        shifted.append((shape, [0, 1], {0: "tall", 1: "flat"}))

    def argmax_correct(exs):
        hits = 0
        for shape, pids, labels in exs:
            raw = proposer.propose("root", shape, pids)
            model = proposer.models["root"]
            if model.children[int(np.argmax(raw[0]))] == labels[0]:
                hits += 1
        return hits

    before = argmax_correct(shifted)
    proposer.finetune("root", shifted)
    after = argmax_correct(shifted)
    assert after >= before
    assert after >= 0.8 * len(shifted)


def test_save_load_round_trip(tmp_path):
    proposer = BuiltinProposer(TREE, fast_config())
    proposer.pretrain("root", training_examples(10))
    proposer.save(tmp_path)
    fresh = BuiltinProposer(TREE, fast_config())
    fresh.load(tmp_path)
    rng = np.random.default_rng(9)
    shape, labels = make_shape("rt", rng)
    a = proposer.propose("root", shape, sorted(labels))
    b = fresh.propose("root", shape, sorted(labels))
    for pid in labels:
        assert np.array_equal(a[pid], b[pid])


def test_build_proposal_validates():
    with pytest.raises(ProposerError, match="sum"):
        build_proposal("s", "root", "and", ["a", "b"], [0],
                       {0: np.array([0.4, 0.4])})
    with pytest.raises(ProposerError, match=">= 0"):
        build_proposal("s", "root", "and", ["a", "b"], [0],
                       {0: np.array([1.2, -0.2])})
    prop = build_proposal("s", "root", "and", ["a", "b"], [0, 1],
                          {0: np.array([0.9, 0.1]), 1: np.array([0.3, 0.7])},
                          aggregate="min")
    assert prop.labels == {0: "a", 1: "b"}
    assert prop.confidence == pytest.approx(0.7)


def test_random_proposer_valid_distributions():
    rp = RandomProposer(TREE, seed=3)
    rng = np.random.default_rng(10)
    shape, labels = make_shape("r", rng)
    raw = rp.propose("root", shape, sorted(labels))
    for vec in raw.values():
        assert vec.sum() == pytest.approx(1.0, abs=1e-9)


class EchoBackend:
    """Returns uniform distributions for whatever is asked."""

    def __init__(self):
        self.requests = []

    def call(self, request):
        self.requests.append(request)
        n = len(request["children"])
        shape = request["shapes"][0]
        if request["kind"] == "or":
            return {"proposals": [{"shape": shape["id"],
                                   "probs": [1.0 / n] * n}]}
        return {"proposals": [{"shape": shape["id"],
                               "probs": {str(p["id"]): [1.0 / n] * n
                                         for p in shape["parts"]}}]}


def test_external_uniform_backend_accepted():
    backend = EchoBackend()
    ext = ExternalProposer(TREE, backend)
    rng = np.random.default_rng(11)
    shape, labels = make_shape("e", rng)
    raw = ext.propose("root", shape, sorted(labels))
    prop = build_proposal("e", "root", "and", ["tall", "flat", "kind"],
                          sorted(labels), raw)
    assert prop.confidence == pytest.approx(1.0 / 3.0)


def test_external_invalid_sum_rejected():
    class BadBackend:
        def call(self, request):
            return {"proposals": [{"shape": "e",
                                   "probs": {"0": [0.5, 0.2, 0.1],
                                             "1": [0.5, 0.2, 0.1],
                                             "2": [0.5, 0.2, 0.1]}}]}

    ext = ExternalProposer(TREE, BadBackend())
    rng = np.random.default_rng(12)
    shape, labels = make_shape("e", rng)
    raw = ext.propose("root", shape, sorted(labels))
    with pytest.raises(ProposerError, match="sum"):
        build_proposal("e", "root", "and", ["tall", "flat", "kind"],
                       sorted(labels), raw)


def test_external_malformed_reply_rejected():
    class Empty:
        def call(self, request):
            return {"nope": []}

    ext = ExternalProposer(TREE, Empty())
    rng = np.random.default_rng(13)
    shape, labels = make_shape("e", rng)
    with pytest.raises(BackendError, match="proposals"):
        ext.propose("root", shape, sorted(labels))


def test_stream_backend_frames():
    buf = io.BytesIO()
    write_frame(buf, {"cmd": "propose", "node": "root"})
    buf.seek(0)
    assert read_frame(buf) == {"cmd": "propose", "node": "root"}

    truncated = io.BytesIO(b"\x00\x00\x00\x10{\"a\"")
    with pytest.raises(BackendError, match="mid-frame"):
        read_frame(truncated)


def test_stream_backend_round_trip():
    req_buf = io.BytesIO()
    resp_buf = io.BytesIO()
    write_frame(resp_buf, {"proposals": []})
    resp_buf.seek(0)
    backend = StreamBackend(resp_buf, req_buf)
    reply = backend.call({"cmd": "finetune"})
    assert reply == {"proposals": []}
    req_buf.seek(0)
    assert read_frame(req_buf) == {"cmd": "finetune"}
