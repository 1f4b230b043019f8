"""Human-interaction time model and the per-session cost ledger.

Four interaction rates, all linear in their count with a label-count slope:
checking a correctly labeled part, rejecting a wrongly labeled shape in
verification, checking a part during modification (same rate as the first),
and editing a wrong part label. Coefficients come from recorded annotator
timings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

TERMS = ("verify_check", "verify_fail", "modify_check", "modify_edit")


class CostError(ValueError):
    pass


def _check(count: float, n_labels: int) -> None:
    if count < 0:
        raise CostError(f"count must be nonnegative, got {count}")
    if n_labels < 1:
        raise CostError(f"label count must be >= 1, got {n_labels}")


def t_verify_correct(p_v: float, n_labels: int) -> float:
    """Seconds to check p_v correctly labeled parts in verification."""
    _check(p_v, n_labels)
    return (0.31 + 0.03 * n_labels) * p_v


def t_verify_fail(s_v: float, n_labels: int) -> float:
    """Seconds to flag s_v incorrectly labeled shapes in verification."""
    _check(s_v, n_labels)
    return (1.47 + 0.05 * n_labels) * s_v


def t_modify_check(p_c_m: float, n_labels: int) -> float:
    """Seconds to check p_c_m already-correct parts in modification.

    Same rate as verification checking; kept as its own term so ledgers
    can attribute modification-phase effort separately.
    """
    _check(p_c_m, n_labels)
    return (0.31 + 0.03 * n_labels) * p_c_m


def t_modify_wrong(p_w_m: float, n_labels: int) -> float:
    """Seconds to edit p_w_m wrong part labels in modification."""
    _check(p_w_m, n_labels)
    return (5.28 + 0.23 * n_labels) * p_w_m


_FORMULAS = {
    "verify_check": t_verify_correct,
    "verify_fail": t_verify_fail,
    "modify_check": t_modify_check,
    "modify_edit": t_modify_wrong,
}

_COUNTERS = {
    "verify_check": "parts_verified",
    "verify_fail": "shapes_rejected",
    "modify_check": "parts_checked",
    "modify_edit": "parts_edited",
}


@dataclass
class CostLedger:
    """Accumulated simulated human time, split by the four interaction terms.

    Counters: parts_verified (correct parts checked in verification),
    shapes_rejected (shapes flagged bad in verification), parts_checked
    (correct parts checked in modification), parts_edited (part labels the
    user changed). Charges are applied with the label count of the node in
    scope at charge time, so seconds accumulate incrementally.
    """

    parts_verified: int = 0
    shapes_rejected: int = 0
    parts_checked: int = 0
    parts_edited: int = 0
    seconds: dict[str, float] = field(
        default_factory=lambda: {term: 0.0 for term in TERMS}
    )
    per_node: dict[str, dict] = field(default_factory=dict)

    def charge(self, term: str, count: int, n_labels: int, node_id: str = "") -> float:
        """Add `count` events of `term` under a node with n_labels labels."""
        if term not in TERMS:
            raise CostError(f"unknown cost term {term!r}")
        if count < 0:
            raise CostError("count must be nonnegative")
        if count == 0:
            return 0.0
        secs = _FORMULAS[term](count, n_labels)
        counter = _COUNTERS[term]
        setattr(self, counter, getattr(self, counter) + count)
        self.seconds[term] += secs
        node = self.per_node.setdefault(
            node_id,
            {"n_labels": n_labels,
             "counts": {t: 0 for t in TERMS},
             "seconds": {t: 0.0 for t in TERMS}},
        )
        node["n_labels"] = n_labels
        node["counts"][term] += count
        node["seconds"][term] += secs
        return secs

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds[t] for t in TERMS)

    def to_dict(self) -> dict:
        return {
            "counters": {
                "parts_verified": self.parts_verified,
                "shapes_rejected": self.shapes_rejected,
                "parts_checked": self.parts_checked,
                "parts_edited": self.parts_edited,
            },
            "seconds": dict(self.seconds),
            "total_seconds": self.total_seconds,
            "total_hours": self.total_seconds / 3600.0,
            "per_node": self.per_node,
        }


def total_time(p_v: int, s_v: int, p_c_m: int, p_w_m: int, n_labels: int) -> float:
    """Total seconds for a flat session with the given counters."""
    return (
        t_verify_correct(p_v, n_labels)
        + t_verify_fail(s_v, n_labels)
        + t_modify_check(p_c_m, n_labels)
        + t_modify_wrong(p_w_m, n_labels)
    )
