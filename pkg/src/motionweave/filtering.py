"""Two-criterion sample filter with calibrated thresholds.

A pair is accepted when its tracked motion-fidelity against the reference
and the target's temporal consistency both clear their thresholds.
Thresholds are calibrated as a low percentile of clean calibration-pair
scores rather than copied from anywhere.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .dataset import SampleRecord
from .errors import ParameterError
from .metrics import temporal_consistency, tracked_motion_fidelity
from .tracking import TrackerConfig
from .video import load_video

HIST_EDGES = np.round(np.arange(0.0, 1.0001, 0.05), 2)  # 0.0:0.05:1.0


@dataclass(frozen=True)
class FilterThresholds:
    """Minimum scores for acceptance; nominal range [0, 1] for both, but
    out-of-range probes (e.g. -1 or 1.01) are legal for accept-all /
    reject-all sweeps."""

    min_motion_fidelity: float
    min_temporal_consistency: float


def compute_record_metrics(
    record: SampleRecord,
    root: str,
    tracker: TrackerConfig = TrackerConfig(),
    min_displacement: float = 1.5,
) -> dict:
    """Tracked ref-vs-target motion fidelity plus target temporal consistency."""
    ref = load_video(os.path.join(root, record.ref_dir))
    tgt = load_video(os.path.join(root, record.tgt_dir))
    mf = tracked_motion_fidelity(ref, tgt, tracker, min_displacement)
    tc = temporal_consistency(tgt)
    return {"motion_fidelity": float(mf), "temporal_consistency": float(tc)}


def ensure_metrics(
    records: list[SampleRecord],
    root: str,
    tracker: TrackerConfig = TrackerConfig(),
    min_displacement: float = 1.5,
) -> list[SampleRecord]:
    out = []
    for r in records:
        if r.metrics is None:
            r = replace(r, metrics=compute_record_metrics(r, root, tracker, min_displacement))
        out.append(r)
    return out


def calibrate_thresholds(records: list[SampleRecord], percentile: float = 5.0) -> FilterThresholds:
    """Percentile of clean calibration-pair scores; records need metrics."""
    scored = [r for r in records if r.metrics is not None]
    if not scored:
        raise ParameterError("no scored records to calibrate from")
    mf = np.array([r.metrics["motion_fidelity"] for r in scored])
    tc = np.array([r.metrics["temporal_consistency"] for r in scored])
    return FilterThresholds(
        min_motion_fidelity=float(np.percentile(mf, percentile)),
        min_temporal_consistency=float(np.percentile(tc, percentile)),
    )


@dataclass
class FilterReport:
    total: int
    accepted: int
    rejected_motion: int
    rejected_temporal: int
    rejected_both: int
    thresholds: FilterThresholds
    hist_motion: np.ndarray
    hist_temporal: np.ndarray

    def render_text(self) -> str:
        lines = [
            "sample filter report",
            f"  thresholds: motion_fidelity >= {self.thresholds.min_motion_fidelity:.4f}, "
            f"temporal_consistency >= {self.thresholds.min_temporal_consistency:.4f}",
            f"  total    {self.total}",
            f"  accepted {self.accepted}",
            f"  rejected: motion-only {self.rejected_motion}, temporal-only "
            f"{self.rejected_temporal}, both {self.rejected_both}",
            "",
            "  score histograms (bins 0.00:0.05:1.00, out-of-range clipped)",
            "  bin        motion_fidelity  temporal_consistency",
        ]
        for i in range(len(HIST_EDGES) - 1):
            lines.append(
                f"  [{HIST_EDGES[i]:.2f},{HIST_EDGES[i + 1]:.2f})"
                f"  {int(self.hist_motion[i]):>15d}  {int(self.hist_temporal[i]):>20d}"
            )
        return "\n".join(lines)


def _histogram(values: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, HIST_EDGES[0], HIST_EDGES[-1] - 1e-9)
    hist, _ = np.histogram(clipped, bins=HIST_EDGES)
    return hist


def filter_manifest(
    records: list[SampleRecord],
    thresholds: FilterThresholds,
    root: str,
    tracker: TrackerConfig = TrackerConfig(),
    min_displacement: float = 1.5,
) -> tuple[list[SampleRecord], FilterReport]:
    """Score (if needed) and accept/reject every record; returns updated
    records plus a report with per-criterion counts and histograms."""
    scored = ensure_metrics(records, root, tracker, min_displacement)
    out = []
    counts = {"motion": 0, "temporal": 0, "both": 0}
    for r in scored:
        ok_mf = r.metrics["motion_fidelity"] >= thresholds.min_motion_fidelity
        ok_tc = r.metrics["temporal_consistency"] >= thresholds.min_temporal_consistency
        if not ok_mf and not ok_tc:
            counts["both"] += 1
        elif not ok_mf:
            counts["motion"] += 1
        elif not ok_tc:
            counts["temporal"] += 1
        out.append(replace(r, accepted=bool(ok_mf and ok_tc)))
    report = FilterReport(
        total=len(out),
        accepted=sum(1 for r in out if r.accepted),
        rejected_motion=counts["motion"],
        rejected_temporal=counts["temporal"],
        rejected_both=counts["both"],
        thresholds=thresholds,
        hist_motion=_histogram(np.array([r.metrics["motion_fidelity"] for r in out])),
        hist_temporal=_histogram(np.array([r.metrics["temporal_consistency"] for r in out])),
    )
    return out, report
