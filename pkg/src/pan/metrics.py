"""Detection evaluation: greedy matching, AP, TP errors, and the NDS score.

Conventions follow the published nuScenes evaluation semantics: predictions
match ground truth greedily in descending score order by BEV center
distance at thresholds {0.5, 1, 2, 4} m; the precision-recall curve is
interpolated on a 101-point recall grid; AP averages precision over recall
in [0.1, 1] after subtracting the 0.1 precision floor and renormalizing by
0.9. True-positive errors are plain means over the pairs matched at the
2.0 m threshold. NDS = 0.5 * mAP + 0.1 * sum(1 - min(1, mTP)).

Range filtering is half-open [min, max) on BEV distance from the ego
origin, so adjacent bands partition exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLASS_NAMES = (
    "car", "truck", "bus", "trailer", "construction_vehicle",
    "pedestrian", "motorcycle", "bicycle", "traffic_cone", "barrier",
)

ATTRIBUTES = (
    "cycle.with_rider", "cycle.without_rider",
    "pedestrian.moving", "pedestrian.sitting_lying_down", "pedestrian.standing",
    "vehicle.moving", "vehicle.parked", "vehicle.stopped",
)

CONDITIONS = ("day", "rain", "night")

TP_METRICS = ("ate", "ase", "aoe", "ave", "aae")

# per-class metric exclusions: no orientation for cones, no attributes for
# cones or barriers
_EXCLUDED = {
    "traffic_cone": {"aoe", "aae"},
    "barrier": {"aae"},
}


def _normalize_yaw(yaw: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass
class Box3D:
    """Axis sizes are (w, l, h) with l along the heading; score only on predictions."""

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float
    vx: float
    vy: float
    class_name: str
    attribute: str | None = None
    score: float | None = None

    def __post_init__(self):
        if min(self.w, self.l, self.h) <= 0:
            raise ValueError("box sizes must be positive")
        if self.class_name not in CLASS_NAMES:
            raise ValueError(f"unknown class {self.class_name!r}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError("prediction score must be in [0, 1]")
        self.yaw = _normalize_yaw(self.yaw)

    def bev_distance_to(self, other: "Box3D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def range_from_ego(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass
class FrameAnnotations:
    frame_id: str
    condition: str = "day"
    gt: list[Box3D] = field(default_factory=list)
    pred: list[Box3D] = field(default_factory=list)


@dataclass
class EvalConfig:
    match_thresholds_m: tuple = (0.5, 1.0, 2.0, 4.0)
    range_filter: tuple = (0.0, 50.0)
    min_recall: float = 0.1
    min_precision: float = 0.1
    tp_threshold_m: float = 2.0

    def __post_init__(self):
        if list(self.match_thresholds_m) != sorted(self.match_thresholds_m):
            raise ValueError("match thresholds must be ascending")


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def match_frame(gt: list[Box3D], pred: list[Box3D], threshold_m: float):
    """Greedy single-frame matching for one class.

    Predictions in descending score order each take the nearest unmatched
    ground truth within ``threshold_m`` BEV center distance (distance ties
    go to the lower GT index). Returns (matches, unmatched_pred,
    unmatched_gt) with matches as (pred_idx, gt_idx) pairs.
    """
    order = sorted(range(len(pred)), key=lambda idx: (-(pred[idx].score or 0.0), idx))
    taken: set[int] = set()
    matches: list[tuple[int, int]] = []
    unmatched_pred: list[int] = []
    for pi in order:
        best_dist = math.inf
        best_gi = None
        for gi, g in enumerate(gt):
            if gi in taken:
                continue
            d = pred[pi].bev_distance_to(g)
            if d < best_dist:
                best_dist = d
                best_gi = gi
        if best_gi is not None and best_dist < threshold_m:
            taken.add(best_gi)
            matches.append((pi, best_gi))
        else:
            unmatched_pred.append(pi)
    unmatched_gt = [gi for gi in range(len(gt)) if gi not in taken]
    return matches, unmatched_pred, unmatched_gt


def _class_boxes(frame: FrameAnnotations, class_name: str):
    gt = [b for b in frame.gt if b.class_name == class_name]
    pred = [b for b in frame.pred if b.class_name == class_name]
    return gt, pred


# ---------------------------------------------------------------------------
# average precision
# ---------------------------------------------------------------------------

def average_precision(frames: list[FrameAnnotations], class_name: str,
                      threshold_m: float, cfg: EvalConfig) -> float | None:
    """101-point interpolated AP for one class and distance threshold.

    Returns None when the class has no ground truth (undefined, excluded
    from mAP); 0.0 when ground truth exists but nothing scores.
    """
    n_pos = 0
    scored: list[tuple[float, bool]] = []  # (score, is_true_positive)
    for frame in frames:
        gt, pred = _class_boxes(frame, class_name)
        n_pos += len(gt)
        matches, unmatched_pred, _ = match_frame(gt, pred, threshold_m)
        matched_pred = {pi for pi, _ in matches}
        for pi, p in enumerate(pred):
            scored.append((p.score or 0.0, pi in matched_pred))
    if n_pos == 0:
        return None
    if not scored:
        return 0.0
    scored.sort(key=lambda sc: -sc[0])
    tp = np.cumsum([1.0 if hit else 0.0 for _, hit in scored])
    fp = np.cumsum([0.0 if hit else 1.0 for _, hit in scored])
    recall = tp / n_pos
    precision = tp / (tp + fp)
    grid = np.linspace(0.0, 1.0, 101)
    interp = np.interp(grid, recall, precision, right=0.0)
    start = round(100 * cfg.min_recall) + 1
    clipped = np.maximum(interp[start:] - cfg.min_precision, 0.0)
    # guard the [0, 1] range against float round-off in the normalization
    return float(min(1.0, clipped.mean() / (1.0 - cfg.min_precision)))


# ---------------------------------------------------------------------------
# true-positive errors
# ---------------------------------------------------------------------------

def _scale_iou(a: Box3D, b: Box3D) -> float:
    """3-D IoU after aligning centers and yaw (size error only)."""
    inter = min(a.w, b.w) * min(a.l, b.l) * min(a.h, b.h)
    union = a.w * a.l * a.h + b.w * b.l * b.h - inter
    return inter / union


def _yaw_error(pred: Box3D, gt: Box3D, period: float) -> float:
    diff = math.fmod(abs(pred.yaw - gt.yaw), period)
    return min(diff, period - diff)


def tp_errors(pairs: list[tuple[Box3D, Box3D]], class_name: str) -> dict:
    """Mean errors over (pred, gt) matches from the TP threshold.

    Keys limited to the metrics defined for the class; by convention every
    applicable error is 1.0 when the class matched nothing.
    """
    excluded = _EXCLUDED.get(class_name, set())
    keys = [m for m in TP_METRICS if m not in excluded]
    if not pairs:
        return {m: 1.0 for m in keys}
    out = {}
    for metric in keys:
        if metric == "ate":
            vals = [p.bev_distance_to(g) for p, g in pairs]
        elif metric == "ase":
            vals = [1.0 - _scale_iou(p, g) for p, g in pairs]
        elif metric == "aoe":
            period = math.pi if class_name == "barrier" else 2.0 * math.pi
            vals = [_yaw_error(p, g, period) for p, g in pairs]
        elif metric == "ave":
            vals = [math.hypot(p.vx - g.vx, p.vy - g.vy) for p, g in pairs]
        else:  # aae: unknown or missing attributes count as errors
            vals = [0.0 if (g.attribute in ATTRIBUTES and p.attribute == g.attribute)
                    else 1.0 for p, g in pairs]
        out[metric] = float(np.mean(vals))
    return out


def nds(mean_ap: float, tp_values) -> float:
    """NDS = 0.5 * mAP + 0.1 * sum over five TP errors of (1 - min(1, err))."""
    tp_values = list(tp_values)
    if len(tp_values) != len(TP_METRICS):
        raise ValueError(f"expected {len(TP_METRICS)} TP errors, got {len(tp_values)}")
    if not 0.0 <= mean_ap <= 1.0:
        raise ValueError("mAP must be in [0, 1]")
    return 0.5 * mean_ap + 0.1 * sum(1.0 - min(1.0, v) for v in tp_values)


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Per-class AP plus aggregated mAP / TP errors / NDS for one split."""

    condition: str
    range_band: tuple
    n_frames: int
    n_gt: int
    n_pred: int
    empty: bool
    ap: dict            # class -> {threshold -> AP}
    class_tp: dict      # class -> {metric -> error}
    mean_ap: float | None
    tp: dict            # metric -> mean over classes
    nds: float | None
    match_counts: dict  # threshold -> matched pairs across classes/frames

    def to_json_dict(self) -> dict:
        return {
            "condition": self.condition,
            "range_band": list(self.range_band),
            "n_frames": self.n_frames,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "empty": self.empty,
            "mAP": self.mean_ap,
            "mATE": self.tp.get("ate"),
            "mASE": self.tp.get("ase"),
            "mAOE": self.tp.get("aoe"),
            "mAVE": self.tp.get("ave"),
            "mAAE": self.tp.get("aae"),
            "NDS": self.nds,
            "per_class_ap": self.ap,
            "per_class_tp": self.class_tp,
            "match_counts": {str(k): v for k, v in self.match_counts.items()},
        }


def _filter_range(boxes: list[Box3D], band: tuple) -> list[Box3D]:
    lo, hi = band
    return [b for b in boxes if lo <= b.range_from_ego() < hi]


def evaluate(frames: list[FrameAnnotations], cfg: EvalConfig,
             condition: str | None = None,
             range_band: tuple | None = None) -> MetricsReport:
    """Evaluate one split: optional condition tag plus a BEV range band.

    The band drops ground truth and predictions independently (half-open
    [min, max) on distance from ego). An empty split is reported with the
    explicit ``empty`` marker rather than zero metrics.
    """
    band = tuple(range_band if range_band is not None else cfg.range_filter)
    if condition is not None and condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    selected = [f for f in frames if condition is None or f.condition == condition]
    clipped = [
        FrameAnnotations(
            frame_id=f.frame_id,
            condition=f.condition,
            gt=_filter_range(f.gt, band),
            pred=_filter_range(f.pred, band),
        )
        for f in selected
    ]
    n_gt = sum(len(f.gt) for f in clipped)
    n_pred = sum(len(f.pred) for f in clipped)
    classes_present = [c for c in CLASS_NAMES
                       if any(b.class_name == c for f in clipped for b in f.gt)]
    if not clipped or not classes_present:
        return MetricsReport(
            condition=condition or "all", range_band=band, n_frames=len(clipped),
            n_gt=n_gt, n_pred=n_pred, empty=True, ap={}, class_tp={},
            mean_ap=None, tp={}, nds=None, match_counts={},
        )

    ap: dict = {}
    match_counts = {t: 0 for t in cfg.match_thresholds_m}
    for cls in classes_present:
        ap[cls] = {}
        for thr in cfg.match_thresholds_m:
            ap[cls][thr] = average_precision(clipped, cls, thr, cfg)
            for frame in clipped:
                gt, pred = _class_boxes(frame, cls)
                matches, _, _ = match_frame(gt, pred, thr)
                match_counts[thr] += len(matches)

    class_tp: dict = {}
    for cls in classes_present:
        pairs = []
        for frame in clipped:
            gt, pred = _class_boxes(frame, cls)
            matches, _, _ = match_frame(gt, pred, cfg.tp_threshold_m)
            pairs.extend((pred[pi], gt[gi]) for pi, gi in matches)
        class_tp[cls] = tp_errors(pairs, cls)

    ap_values = [v for per_thr in ap.values() for v in per_thr.values() if v is not None]
    mean_ap = float(np.mean(ap_values))
    tp_agg = {}
    for metric in TP_METRICS:
        vals = [class_tp[c][metric] for c in classes_present if metric in class_tp[c]]
        tp_agg[metric] = float(np.mean(vals)) if vals else 1.0
    score = nds(mean_ap, [tp_agg[m] for m in TP_METRICS])
    return MetricsReport(
        condition=condition or "all", range_band=band, n_frames=len(clipped),
        n_gt=n_gt, n_pred=n_pred, empty=False, ap=ap, class_tp=class_tp,
        mean_ap=mean_ap, tp=tp_agg, nds=score, match_counts=match_counts,
    )


def format_report_table(report: MetricsReport) -> str:
    """Aligned text table with the familiar leaderboard columns (x100)."""
    header = f"{'split':<18}{'NDS':>7}{'mAP':>7}{'mATE':>7}{'mASE':>7}{'mAOE':>7}{'mAVE':>7}{'mAAE':>7}"
    label = f"{report.condition} {report.range_band[0]:g}-{report.range_band[1]:g}m"
    if report.empty:
        return f"{header}\n{label:<18}{'(empty split)':>7}"
    row = (
        f"{label:<18}"
        f"{100 * report.nds:>7.1f}"
        f"{100 * report.mean_ap:>7.1f}"
        + "".join(f"{report.tp[m]:>7.3f}" for m in TP_METRICS)
    )
    return f"{header}\n{row}"
