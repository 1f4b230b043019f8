"""Labeling-quality metrics: part label accuracy and point-level mean IoU."""

from __future__ import annotations

from dataclasses import dataclass, field


class MetricsError(ValueError):
    pass


@dataclass
class EvalReport:
    part_accuracy: float
    per_label_iou: dict[str, float]
    miou: float
    per_category: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "part_accuracy": self.part_accuracy,
            "miou": self.miou,
            "per_label_iou": dict(sorted(self.per_label_iou.items())),
            "per_category": self.per_category,
        }


def part_accuracy(assignments: dict[str, dict[int, str]],
                  gt: dict[str, dict[int, str]]) -> float:
    """Fraction of parts whose predicted leaf label equals GT.

    `assignments` and `gt` map shape id -> part id -> leaf label; every GT
    part must have a prediction and vice versa.
    """
    correct = 0
    total = 0
    for sid in sorted(gt):
        if sid not in assignments:
            raise MetricsError(f"missing prediction for shape {sid!r}")
        pred_parts = assignments[sid]
        for pid in sorted(gt[sid]):
            if pid not in pred_parts:
                raise MetricsError(f"missing prediction for part {sid!r}/{pid}")
            if gt[sid][pid] is None:
                raise MetricsError(f"missing GT label for part {sid!r}/{pid}")
            total += 1
            if pred_parts[pid] == gt[sid][pid]:
                correct += 1
    for sid in assignments:
        if sid not in gt:
            raise MetricsError(f"missing GT for shape {sid!r}")
    if total == 0:
        raise MetricsError("no parts to evaluate")
    return correct / total


def miou(assignments: dict[str, dict[int, str]],
         gt: dict[str, dict[int, str]],
         point_counts: dict[str, dict[int, int]]) -> tuple[float, dict[str, float]]:
    """Point-level mean IoU; each point inherits its part's label.

    IoU per label is computed globally over all shapes' points; the mean runs
    over labels with a nonempty union (present in GT or prediction). Returns
    (miou, per-label IoU map).
    """
    inter: dict[str, int] = {}
    pred_count: dict[str, int] = {}
    gt_count: dict[str, int] = {}
    for sid in sorted(gt):
        if sid not in assignments:
            raise MetricsError(f"missing prediction for shape {sid!r}")
        for pid in sorted(gt[sid]):
            if pid not in assignments[sid]:
                raise MetricsError(f"missing prediction for part {sid!r}/{pid}")
            n = point_counts[sid][pid]
            pl = assignments[sid][pid]
            gl = gt[sid][pid]
            pred_count[pl] = pred_count.get(pl, 0) + n
            gt_count[gl] = gt_count.get(gl, 0) + n
            if pl == gl:
                inter[gl] = inter.get(gl, 0) + n
    labels = sorted(set(pred_count) | set(gt_count))
    per_label: dict[str, float] = {}
    for label in labels:
        i = inter.get(label, 0)
        u = pred_count.get(label, 0) + gt_count.get(label, 0) - i
        if u > 0:
            per_label[label] = i / u
    if not per_label:
        raise MetricsError("no labels with nonempty union")
    mean = sum(per_label.values()) / len(per_label)
    return mean, per_label


def evaluate(assignments: dict[str, dict[int, str]],
             gt: dict[str, dict[int, str]],
             point_counts: dict[str, dict[int, int]],
             category: str = "") -> EvalReport:
    acc = part_accuracy(assignments, gt)
    mean, per_label = miou(assignments, gt, point_counts)
    report = EvalReport(part_accuracy=acc, per_label_iou=per_label, miou=mean)
    if category:
        report.per_category[category] = {"part_accuracy": acc, "miou": mean}
    return report
