"""Ranking metrics and the three evaluation harnesses.

Average precision follows the step-interpolation convention: sort by
descending score (ties keep input order), then average the precision at
each positive's rank.  The equal error rate pools every (example, class)
score into one detection problem and interpolates the ROC crossing where
false-positive and false-negative rates meet.

Harnesses turn annotated test clips into score/label matrices:

* ``omni``     one inference per crop, labels are all classes present;
* ``fixed``    six 60-degree tiles partition the circle, per-tile
               inferences and labels aggregate with elementwise max;
* ``location`` one region per present event, centred on its azimuth, with
               regions overlapping an earlier one by more than half the
               width dropped, aggregated with elementwise max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import read_clip
from .dsp import stft
from .features import build_feature_stack
from .geometry import ArrayGeometry, default_geometry
from .model import CompactCnn, forward_batch
from .regionfeat import AngleGrid, AngularRegion, angular_overlap_deg
from .scenesim import SceneAnnotation, read_annotation, read_manifest

HARNESS_MODES = ("omni", "fixed", "location")

FIXED_TILE_WIDTH_DEG = 60.0


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Step-interpolated average precision for one class.

    Returns None when the class has no positive labels.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order].astype(bool)
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precisions = cum_tp[hits] / ranks[hits]
    return math.fsum(precisions.tolist()) / n_pos


@dataclass(frozen=True)
class MapResult:
    """Macro mean average precision with per-class detail."""

    mean_ap: float
    per_class: tuple
    skipped_classes: tuple[int, ...]


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> MapResult:
    """Macro-averaged AP over classes of an (N, C) score/label pair.

    Classes without positives are skipped and reported.  Raises ValueError
    when no class has a positive example.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"scores and labels must both be (N, C), got {scores.shape}")
    per_class = []
    skipped = []
    for c in range(scores.shape[1]):
        ap = average_precision(scores[:, c], labels[:, c])
        per_class.append(ap)
        if ap is None:
            skipped.append(c)
    kept = [ap for ap in per_class if ap is not None]
    if not kept:
        raise ValueError("every class is empty; mean average precision undefined")
    return MapResult(
        mean_ap=math.fsum(kept) / len(kept),
        per_class=tuple(per_class),
        skipped_classes=tuple(skipped),
    )


def equal_error_rate(scores: np.ndarray, labels: np.ndarray) -> float:
    """Pooled equal error rate with linear ROC interpolation.

    All score/label pairs form one detection problem.  Operating points
    are the distinct-score thresholds; the returned value is
    (FPR + FNR)/2 at the interpolated crossing of the two rates.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("equal error rate needs both positive and negative labels")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    cum_tp = np.cumsum(sorted_labels)
    cum_fp = np.cumsum(~sorted_labels)
    # Keep one operating point per distinct score (the last index of each
    # tied group), starting from the reject-everything point.
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    idx = np.concatenate([boundary, [scores.size - 1]])
    fpr = np.concatenate([[0.0], cum_fp[idx] / n_neg])
    fnr = np.concatenate([[1.0], 1.0 - cum_tp[idx] / n_pos])
    diff = fpr - fnr
    cross = int(np.searchsorted(diff >= 0.0, True))
    if diff[cross] == 0.0:
        return float((fpr[cross] + fnr[cross]) / 2.0)
    if cross == 0:
        return float((fpr[0] + fnr[0]) / 2.0)
    d0, d1 = diff[cross - 1], diff[cross]
    alpha = -d0 / (d1 - d0)
    fpr_star = fpr[cross - 1] + alpha * (fpr[cross] - fpr[cross - 1])
    fnr_star = fnr[cross - 1] + alpha * (fnr[cross] - fnr[cross - 1])
    return float((fpr_star + fnr_star) / 2.0)


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HarnessResult:
    mode: str
    scores: np.ndarray
    labels: np.ndarray
    mean_ap: float
    eer: float
    per_class_ap: tuple
    skipped_classes: tuple[int, ...]
    n_examples: int


def crop_windows(
    annotation: SceneAnnotation, clip_length_s: float, crop_s: float
) -> list[tuple[float, float]]:
    """Consecutive non-overlapping crops that contain at least one event."""
    out = []
    start = 0.0
    while start + crop_s <= clip_length_s + 1e-9:
        if annotation.active_in_window(start, start + crop_s):
            out.append((start, start + crop_s))
        start += crop_s
    return out


def fixed_tiles(width_deg: float = FIXED_TILE_WIDTH_DEG) -> list[AngularRegion]:
    """Regions tiling [-180, 180) from the left edge in width_deg steps."""
    n = int(round(360.0 / width_deg))
    return [
        AngularRegion(-180.0 + i * width_deg, -180.0 + (i + 1) * width_deg)
        for i in range(n)
    ]


def tile_index(azimuth_deg: float, width_deg: float = FIXED_TILE_WIDTH_DEG) -> int:
    """Partition cell of an azimuth: lower edge inclusive, upper exclusive."""
    n = int(round(360.0 / width_deg))
    return int((azimuth_deg % 360.0 + 180.0) % 360.0 // width_deg) % n


def _check_model_mode(model: CompactCnn, mode: str) -> None:
    if mode not in HARNESS_MODES:
        raise ValueError(f"mode must be one of {HARNESS_MODES}, got {mode!r}")
    if mode == "omni":
        if model.recipe.needs_query:
            raise ValueError(
                f"omnidirectional harness needs a query-free model, got recipe "
                f"{model.recipe} with query_mode {model.query_mode!r}"
            )
    else:
        if model.query_mode != "angular":
            raise ValueError(
                f"{mode} harness needs an angular model, got query_mode "
                f"{model.query_mode!r}"
            )


def _crop_tensor(clip: np.ndarray, start_s: float, crop_s: float, model, sample_rate):
    i0 = int(round(start_s * sample_rate))
    i1 = i0 + int(round(crop_s * sample_rate))
    return stft(clip[:, i0:i1], sample_rate, n_fft=model.n_fft, hop=model.hop)


def run_harness(
    model: CompactCnn,
    manifest_path,
    mode: str,
    split: str = "test",
    geometry: ArrayGeometry | None = None,
    crop_s: float = 2.0,
    region_width_deg: float = FIXED_TILE_WIDTH_DEG,
    grid: AngleGrid | None = None,
) -> HarnessResult:
    """Score every eligible crop of a manifest split under one harness."""
    _check_model_mode(model, mode)
    if geometry is None:
        geometry = default_geometry()
    if grid is None:
        grid = AngleGrid()
    entries = [e for e in read_manifest(manifest_path) if e[0] == split]
    if not entries:
        raise ValueError(f"manifest has no '{split}' clips")

    all_scores = []
    all_labels = []
    for _, wav_path, csv_path in entries:
        clip = read_clip(wav_path, geometry.sample_rate)
        annotation = read_annotation(csv_path)
        clip_len_s = clip.shape[1] / geometry.sample_rate
        for start, stop in crop_windows(annotation, clip_len_s, crop_s):
            spec = _crop_tensor(clip, start, crop_s, model, geometry.sample_rate)
            events = annotation.active_in_window(start, stop)
            scores, labels = _score_crop(
                model, spec, geometry, grid, events, mode, region_width_deg
            )
            all_scores.append(scores)
            all_labels.append(labels)

    scores = np.stack(all_scores)
    labels = np.stack(all_labels)
    map_result = mean_average_precision(scores, labels)
    eer = equal_error_rate(scores, labels)
    return HarnessResult(
        mode=mode,
        scores=scores,
        labels=labels,
        mean_ap=map_result.mean_ap,
        eer=eer,
        per_class_ap=map_result.per_class,
        skipped_classes=map_result.skipped_classes,
        n_examples=scores.shape[0],
    )


def _predict_regions(model, spec, geometry, grid, regions):
    stacks = [
        build_feature_stack(
            spec,
            geometry,
            model.recipe,
            query=region,
            pairs=model.pairs,
            grid=grid,
            gcc_max_lag=model.gcc_max_lag,
        ).data
        for region in regions
    ]
    queries = regions if model.recipe.wants_embedding else None
    return forward_batch(model, np.stack(stacks), queries)


def _score_crop(model, spec, geometry, grid, events, mode, region_width_deg):
    n_classes = model.n_classes
    labels = np.zeros(n_classes, dtype=int)
    if mode == "omni":
        stack = build_feature_stack(
            spec, geometry, model.recipe, query=None,
            pairs=model.pairs, gcc_max_lag=model.gcc_max_lag,
        )
        probs = forward_batch(model, stack.data[None])[0]
        for ev in events:
            labels[ev["class_index"]] = 1
        return probs, labels

    if mode == "fixed":
        regions = fixed_tiles(region_width_deg)
        probs = _predict_regions(model, spec, geometry, grid, regions)
        region_labels = np.zeros((len(regions), n_classes), dtype=int)
        for ev in events:
            cell = tile_index(ev["azimuth_deg"], region_width_deg)
            region_labels[cell, ev["class_index"]] = 1
        return probs.max(axis=0), region_labels.max(axis=0)

    # location-aware: one candidate region per present event, deduplicated
    # against earlier kept regions when they overlap by more than half the
    # region width.
    kept: list[AngularRegion] = []
    for ev in events:
        region = AngularRegion.centered(ev["azimuth_deg"], region_width_deg)
        if all(
            angular_overlap_deg(region, prev) <= region_width_deg / 2.0
            for prev in kept
        ):
            kept.append(region)
    probs = _predict_regions(model, spec, geometry, grid, kept)
    region_labels = np.zeros((len(kept), n_classes), dtype=int)
    for r, region in enumerate(kept):
        for ev in events:
            if region.contains(ev["azimuth_deg"]):
                region_labels[r, ev["class_index"]] = 1
    return probs.max(axis=0), region_labels.max(axis=0)
