"""Mini-batch training loop with query sampling and early stopping.

Each step draws random 2 s crops from the training clips, attaches a
random query (angular region, distance, or none for omnidirectional
models), and builds binary targets from the events active in the crop:

* angular   classes of events whose azimuth falls inside the region;
* distance  classes of events within the half-band of the queried range;
* omni      classes of all active events.

Crops are resampled until they contain at least one event; after a bounded
number of misses the crop is centred on a randomly chosen event instead.
Half of the queries are centred on an active event so positive targets
stay frequent; the rest are drawn uniformly.

Validation uses a fixed set of examples built once from the val split.
Early stopping tracks validation mean average precision and restores the
best parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import read_clip
from .dsp import stft
from .evaluation import equal_error_rate, mean_average_precision
from .features import FeatureRecipe, build_feature_stack
from .geometry import ArrayGeometry, default_geometry, wrap_azimuth
from .model import (
    CompactCnn,
    adam_init,
    adam_step,
    backward_batch,
    forward_batch,
    init_model,
)
from .regionfeat import AngleGrid, AngularRegion, DistanceQuery
from .scenesim import read_annotation, read_manifest

MAX_CROP_RETRIES = 20

LOG_HEADER = ("epoch", "train_loss", "val_mAP", "val_EER")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run."""

    learning_rate: float = 1e-5
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    steps_per_epoch: int | None = None
    crop_s: float = 2.0
    query_width_deg: float = 60.0
    event_centered_prob: float = 0.5
    distance_range_m: tuple[float, float] = (0.5, 3.5)
    val_crops_per_clip: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning rate and batch size must be positive")
        if not 0.0 <= self.event_centered_prob <= 1.0:
            raise ValueError("event_centered_prob must lie in [0, 1]")
        if self.crop_s <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("crop_s, max_epochs and patience must be positive")


@dataclass
class TrainResult:
    model: CompactCnn
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_map: float = float("nan")


@dataclass(frozen=True)
class _LoadedClip:
    clip: np.ndarray
    annotation: object
    length_s: float


def _load_split(manifest_path, split: str, sample_rate: int) -> list[_LoadedClip]:
    entries = [e for e in read_manifest(manifest_path) if e[0] == split]
    if not entries:
        raise ValueError(f"manifest has no '{split}' clips")
    out = []
    for _, wav_path, csv_path in entries:
        clip = read_clip(wav_path, sample_rate)
        annotation = read_annotation(csv_path)
        out.append(_LoadedClip(clip, annotation, clip.shape[1] / sample_rate))
    return out


def _sample_crop(rng: np.random.Generator, loaded: _LoadedClip, crop_s: float):
    """Crop start and active events, resampling empty windows."""
    max_start = loaded.length_s - crop_s
    if max_start < 0:
        raise ValueError(f"clip shorter than the {crop_s} s crop")
    for _ in range(MAX_CROP_RETRIES):
        start = float(rng.uniform(0.0, max_start)) if max_start > 0 else 0.0
        events = loaded.annotation.active_in_window(start, start + crop_s)
        if events:
            return start, events
    # Fall back to centring the crop on a random event.
    all_events = loaded.annotation.events()
    keys = sorted(all_events)
    ev = all_events[keys[int(rng.integers(len(keys)))]]
    mid = (min(ev["frames"]) + max(ev["frames"]) + 1) / 2.0
    mid_s = mid * loaded.annotation.frame_hop_s
    start = min(max(mid_s - crop_s / 2.0, 0.0), max_start)
    events = loaded.annotation.active_in_window(start, start + crop_s)
    if not events:
        raise RuntimeError("event-centred crop contains no events")
    return start, events


def _sample_query(rng, events, model, config):
    if model.query_mode == "omni":
        return None
    centred = events and rng.uniform() < config.event_centered_prob
    if model.query_mode == "angular":
        if centred:
            ev = events[int(rng.integers(len(events)))]
            centre = ev["azimuth_deg"]
        else:
            centre = float(rng.uniform(-180.0, 180.0))
        centre = wrap_azimuth(centre)
        return AngularRegion.centered(centre, config.query_width_deg)
    if centred:
        ev = events[int(rng.integers(len(events)))]
        distance = ev["distance_m"]
    else:
        distance = float(rng.uniform(*config.distance_range_m))
    return DistanceQuery(distance)


def _targets(events, query, n_classes: int) -> np.ndarray:
    t = np.zeros(n_classes)
    for ev in events:
        if query is None:
            t[ev["class_index"]] = 1.0
        elif isinstance(query, AngularRegion):
            if query.contains(ev["azimuth_deg"]):
                t[ev["class_index"]] = 1.0
        else:
            if query.contains(ev["distance_m"]):
                t[ev["class_index"]] = 1.0
    return t


def distance_stats(clips: list[_LoadedClip]) -> tuple[float, float]:
    """Mean and standard deviation of event distances across clips."""
    values = []
    for loaded in clips:
        for ev in loaded.annotation.events().values():
            values.append(ev["distance_m"])
    if not values:
        raise ValueError("no events found for distance statistics")
    mean = float(np.mean(values))
    std = float(np.std(values))
    return mean, (std if std > 1e-9 else 1.0)


def train(
    recipe: FeatureRecipe | str,
    manifest_path,
    config: TrainConfig | None = None,
    query_mode: str = "angular",
    geometry: ArrayGeometry | None = None,
    log_path=None,
    grid: AngleGrid | None = None,
) -> TrainResult:
    """Train a model on the manifest's train split, validating on val."""
    if isinstance(recipe, str):
        recipe = FeatureRecipe.parse(recipe)
    if config is None:
        config = TrainConfig()
    if geometry is None:
        geometry = default_geometry()
    if grid is None:
        grid = AngleGrid()

    train_clips = _load_split(manifest_path, "train", geometry.sample_rate)
    val_clips = _load_split(manifest_path, "val", geometry.sample_rate)

    if query_mode == "distance":
        dist_mean, dist_std = distance_stats(train_clips)
    else:
        dist_mean, dist_std = 0.0, 1.0

    model = init_model(
        recipe,
        query_mode=query_mode,
        seed=config.seed,
        dist_mean=dist_mean,
        dist_std=dist_std,
    )
    optimiser = adam_init(model.params)
    rng = np.random.default_rng([config.seed, 0x7E41])

    def build_planes(loaded, start, query):
        sample_rate = geometry.sample_rate
        i0 = int(round(start * sample_rate))
        i1 = i0 + int(round(config.crop_s * sample_rate))
        spec = stft(
            loaded.clip[:, i0:i1], sample_rate, n_fft=model.n_fft, hop=model.hop
        )
        stack = build_feature_stack(
            spec,
            geometry,
            recipe,
            query=query,
            pairs=model.pairs,
            grid=grid,
            gcc_max_lag=model.gcc_max_lag,
        )
        return stack.data

    # Fixed validation set: deterministic crops and queries per val clip.
    # A draw of purely off-target queries would leave mean AP undefined, so
    # retry with every query centred on an event.
    for centred_prob in (config.event_centered_prob, 1.0):
        val_config = replace(config, event_centered_prob=centred_prob)
        val_rng = np.random.default_rng([config.seed, 0x7E42])
        val_planes, val_queries, val_targets = [], [], []
        for loaded in val_clips:
            for _ in range(config.val_crops_per_clip):
                start, events = _sample_crop(val_rng, loaded, config.crop_s)
                query = _sample_query(val_rng, events, model, val_config)
                val_planes.append(build_planes(loaded, start, query))
                val_queries.append(query)
                val_targets.append(_targets(events, query, model.n_classes))
        if any(t.any() for t in val_targets):
            break
    val_planes = np.stack(val_planes)
    val_targets = np.stack(val_targets)
    if not recipe.wants_embedding:
        val_queries = None

    steps = config.steps_per_epoch
    if steps is None:
        steps = max(1, math.ceil(len(train_clips) / config.batch_size))

    history: list[dict] = []
    best_map = -float("inf")
    best_epoch = -1
    best_params = None
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for _ in range(steps):
            planes, queries, targets = [], [], []
            for _ in range(config.batch_size):
                loaded = train_clips[int(rng.integers(len(train_clips)))]
                start, events = _sample_crop(rng, loaded, config.crop_s)
                query = _sample_query(rng, events, model, config)
                planes.append(build_planes(loaded, start, query))
                queries.append(query)
                targets.append(_targets(events, query, model.n_classes))
            planes = np.stack(planes)
            targets = np.stack(targets)
            batch_queries = queries if recipe.wants_embedding else None
            probs, cache = forward_batch(
                model, planes, batch_queries, want_cache=True
            )
            loss, grads = backward_batch(model, cache, targets)
            adam_step(model.params, grads, optimiser, config.learning_rate)
            losses.append(loss)

        val_probs = forward_batch(model, val_planes, val_queries)
        val_map = mean_average_precision(val_probs, val_targets).mean_ap
        try:
            val_eer = equal_error_rate(val_probs, val_targets)
        except ValueError:
            val_eer = float("nan")
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_mAP": val_map,
                "val_EER": val_eer,
            }
        )
        if val_map > best_map + 1e-9:
            best_map = val_map
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if best_params is not None:
        model.params.update(best_params)
    if log_path is not None:
        write_training_log(log_path, history)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_map=best_map,
    )


def write_training_log(path, history: list[dict]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for row in history:
            writer.writerow(
                [
                    row["epoch"],
                    repr(float(row["train_loss"])),
                    repr(float(row["val_mAP"])),
                    repr(float(row["val_EER"])),
                ]
            )


def read_training_log(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != LOG_HEADER:
            raise ValueError(f"unexpected training log header: {header}")
        out = []
        for row in reader:
            out.append(
                {
                    "epoch": int(row[0]),
                    "train_loss": float(row[1]),
                    "val_mAP": float(row[2]),
                    "val_EER": float(row[3]),
                }
            )
    return out
