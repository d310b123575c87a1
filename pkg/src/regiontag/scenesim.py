"""Free-field simulation of annotated four-channel sound scenes.

Scenes are built from a bank of 13 synthetic event classes, each a
deterministic mix of a harmonic comb and band-limited noise with a
class-specific fundamental, noise band and tremolo rate.  Events are
placed in time and space, rendered through a windowed-sinc fractional
delay per capsule with 1/r gain (unity at 1 m), summed, and optionally
covered with spatially white Gaussian noise at a chosen SNR.  Ground truth
is written on a 100 ms annotation grid.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import write_wav
from .geometry import ArrayGeometry, DirectionOfArrival, default_geometry

ANNOTATION_HOP_S = 0.1
PEAK_LIMIT = 0.99
MIN_DISTANCE_M = 0.3
FRACTIONAL_DELAY_TAPS = 32

CLASS_NAMES = (
    "female_speech",
    "male_speech",
    "clapping",
    "telephone",
    "laughter",
    "domestic_sounds",
    "footsteps",
    "door",
    "music",
    "musical_instrument",
    "water_tap",
    "bell",
    "knock",
)

N_CLASSES = len(CLASS_NAMES)

# Per-class synthesis recipe: fundamental of the harmonic comb (Hz), number
# of harmonics, harmonic share of the mix, noise band (Hz), tremolo rate
# (Hz).  Fundamentals and bands are spread so class-mean log spectra stay
# far apart.
CLASS_RECIPES = (
    (220.0, 8, 0.80, (150.0, 900.0), 5.0),
    (120.0, 10, 0.80, (80.0, 600.0), 4.0),
    (0.0, 0, 0.00, (1800.0, 5200.0), 9.0),
    (880.0, 5, 0.85, (700.0, 1600.0), 2.0),
    (330.0, 6, 0.55, (900.0, 2400.0), 7.0),
    (0.0, 0, 0.00, (300.0, 1100.0), 3.0),
    (0.0, 0, 0.00, (600.0, 2000.0), 6.0),
    (70.0, 12, 0.60, (60.0, 400.0), 1.5),
    (262.0, 9, 0.90, (200.0, 3000.0), 0.8),
    (523.0, 7, 0.90, (400.0, 4200.0), 1.2),
    (0.0, 0, 0.00, (2600.0, 7800.0), 11.0),
    (1760.0, 4, 0.85, (1400.0, 3600.0), 0.5),
    (0.0, 0, 0.00, (100.0, 700.0), 13.0),
)


@dataclass(frozen=True)
class EventSpec:
    """One sound event placed in a scene."""

    class_index: int
    onset_s: float
    duration_s: float
    azimuth_deg: float
    elevation_deg: float
    distance_m: float
    gain: float = 1.0
    signal_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.class_index < N_CLASSES:
            raise ValueError(f"class_index out of range: {self.class_index}")
        if self.onset_s < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset_s}")
        if self.duration_s <= 0:
            raise ValueError(f"duration must be positive, got {self.duration_s}")
        if self.distance_m < MIN_DISTANCE_M:
            raise ValueError(
                f"distance must be >= {MIN_DISTANCE_M} m, got {self.distance_m}"
            )

    @property
    def offset_s(self) -> float:
        return self.onset_s + self.duration_s

    @property
    def doa(self) -> DirectionOfArrival:
        return DirectionOfArrival(self.azimuth_deg, self.elevation_deg)


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one scene to render."""

    clip_length_s: float
    events: tuple[EventSpec, ...]
    snr_db: float | None = 30.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.clip_length_s <= 0:
            raise ValueError(f"clip length must be positive, got {self.clip_length_s}")
        if len(self.events) == 0:
            raise ValueError("a scene must contain at least one event")
        for ev in self.events:
            if ev.offset_s > self.clip_length_s + 1e-9:
                raise ValueError(
                    f"event ends at {ev.offset_s:.3f}s, past clip end "
                    f"{self.clip_length_s:.3f}s"
                )
        object.__setattr__(self, "events", tuple(self.events))


def _rng(*parts) -> np.random.Generator:
    """Generator seeded by a flat tuple of non-negative ints."""
    flat: list[int] = []
    for p in parts:
        if isinstance(p, (tuple, list)):
            flat.extend(int(x) & 0x7FFFFFFF for x in p)
        else:
            flat.append(int(p) & 0x7FFFFFFF)
    return np.random.default_rng(flat)


AnnotationRow = tuple[int, int, int, float, float, float]

ANNOTATION_HEADER = (
    "frame_index",
    "class_index",
    "event_index",
    "azimuth_deg",
    "elevation_deg",
    "distance_m",
)


@dataclass(frozen=True)
class SceneAnnotation:
    """Frame-level ground truth on a fixed annotation grid.

    Rows are (frame_index, class_index, event_index, azimuth_deg,
    elevation_deg, distance_m), one per event active in a frame, sorted by
    (frame_index, event_index).  Frames with no rows are silent.
    """

    frame_hop_s: float
    n_frames: int
    rows: tuple[AnnotationRow, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "rows", tuple(sorted(self.rows, key=lambda r: (r[0], r[2])))
        )

    def events(self) -> dict[int, dict]:
        """Per-event summary: class, position, active frame range."""
        out: dict[int, dict] = {}
        for frame, cls, ev, az, el, dist in self.rows:
            entry = out.setdefault(
                ev,
                {
                    "class_index": cls,
                    "azimuth_deg": az,
                    "elevation_deg": el,
                    "distance_m": dist,
                    "frames": [],
                },
            )
            entry["frames"].append(frame)
        return out

    def active_in_window(self, start_s: float, end_s: float) -> list[dict]:
        """Events with at least one annotation frame overlapping [start, end)."""
        f0 = int(math.floor(start_s / self.frame_hop_s + 1e-9))
        f1 = int(math.ceil(end_s / self.frame_hop_s - 1e-9))
        seen: dict[int, dict] = {}
        for frame, cls, ev, az, el, dist in self.rows:
            if f0 <= frame < f1 and ev not in seen:
                seen[ev] = {
                    "event_index": ev,
                    "class_index": cls,
                    "azimuth_deg": az,
                    "elevation_deg": el,
                    "distance_m": dist,
                }
        return [seen[k] for k in sorted(seen)]


def event_bank(
    class_index: int, duration_s: float, sample_rate: int, seed
) -> np.ndarray:
    """Deterministic mono signal for one event class, peak-normalised to 0.5.

    The same (class, duration, seed) triple always yields the same samples.
    """
    if not 0 <= class_index < N_CLASSES:
        raise ValueError(f"class_index out of range: {class_index}")
    n = int(round(duration_s * sample_rate))
    if n < 16:
        raise ValueError(f"duration too short: {duration_s}s")
    rng = _rng(seed, class_index)
    f0, n_harm, harm_mix, (band_lo, band_hi), trem_hz = CLASS_RECIPES[class_index]
    t = np.arange(n) / sample_rate

    sig = np.zeros(n)
    if f0 > 0 and n_harm > 0:
        comb = np.zeros(n)
        nyquist = sample_rate / 2
        for h in range(1, n_harm + 1):
            fh = f0 * h
            if fh >= nyquist:
                break
            comb += np.sin(2 * np.pi * fh * t + rng.uniform(0, 2 * np.pi)) / h
        sig += harm_mix * comb / max(np.abs(comb).max(), 1e-12)

    noise = rng.standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum[(freqs < band_lo) | (freqs > band_hi)] = 0.0
    band_noise = np.fft.irfft(spectrum, n=n)
    band_noise /= max(np.abs(band_noise).max(), 1e-12)
    sig += (1.0 - harm_mix) * band_noise

    sig *= 1.0 + 0.3 * np.sin(2 * np.pi * trem_hz * t + rng.uniform(0, 2 * np.pi))

    ramp = max(2, min(int(0.01 * sample_rate), n // 4))
    env = np.ones(n)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = fade
    env[-ramp:] = fade[::-1]
    sig *= env

    return 0.5 * sig / max(np.abs(sig).max(), 1e-12)


def _fractional_delay_filter(frac: float, taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Hann-windowed sinc interpolator delaying by `frac` in [0, 1) samples.

    The filter's group delay is taps/2 + frac samples.
    """
    n = np.arange(taps + 1)
    h = np.sinc(n - taps / 2 - frac)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / taps)
    h *= w
    return h / h.sum()


def spatialize(
    signal: np.ndarray,
    doa: DirectionOfArrival,
    distance_m: float,
    geometry: ArrayGeometry,
    gain: float = 1.0,
) -> np.ndarray:
    """Render a mono event as a four-channel free-field segment.

    Each capsule hears the signal delayed by its exact propagation path and
    scaled by gain/r (unity gain at 1 m).  Delays are applied relative to
    the wavefront's arrival at the closest possible capsule position, so
    the segment stays aligned with the event onset.  The output is longer
    than the input by a constant interpolation tail.
    """
    if distance_m < MIN_DISTANCE_M:
        raise ValueError(f"distance must be >= {MIN_DISTANCE_M} m, got {distance_m}")
    signal = np.asarray(signal, dtype=float)
    c = geometry.sound_speed
    fs = geometry.sample_rate
    source = distance_m * doa.unit_vector()
    radius = float(np.linalg.norm(geometry.mic_positions, axis=1).max())
    taps = FRACTIONAL_DELAY_TAPS
    max_extra = int(math.ceil(2 * radius / c * fs)) + 1
    out = np.zeros((geometry.n_mics, len(signal) + taps + max_extra))
    for i in range(geometry.n_mics):
        path = float(np.linalg.norm(source - geometry.mic_positions[i]))
        # Delay relative to a virtual capsule sitting `radius` closer to the
        # source than the origin; always >= 0 for any capsule on the sphere.
        delay = (path - distance_m + radius) / c * fs
        whole = int(math.floor(delay))
        frac = delay - whole
        h = _fractional_delay_filter(frac)
        seg = np.convolve(signal, h) * (gain / path)
        out[i, whole : whole + len(seg)] = seg
    return out


def render_scene(
    spec: SceneSpec, geometry: ArrayGeometry | None = None
) -> tuple[np.ndarray, SceneAnnotation]:
    """Render a scene to a (4, L) clip plus its annotation.

    Rendering is deterministic for a fixed spec: event signals derive from
    per-event seeds and the noise floor from the scene's noise seed.
    """
    if geometry is None:
        geometry = default_geometry()
    fs = geometry.sample_rate
    n_samples = int(round(spec.clip_length_s * fs))
    clip = np.zeros((geometry.n_mics, n_samples))

    for ev in spec.events:
        signal = event_bank(ev.class_index, ev.duration_s, fs, ev.signal_seed)
        seg = spatialize(signal, ev.doa, ev.distance_m, geometry, ev.gain)
        start = int(round(ev.onset_s * fs))
        stop = min(n_samples, start + seg.shape[1])
        clip[:, start:stop] += seg[:, : stop - start]

    if spec.snr_db is not None:
        rng = _rng(spec.noise_seed, 0xD1F)
        signal_power = float(np.mean(clip**2))
        noise_power = signal_power / (10.0 ** (spec.snr_db / 10.0))
        clip = clip + rng.standard_normal(clip.shape) * math.sqrt(noise_power)

    peak = float(np.abs(clip).max())
    if peak > PEAK_LIMIT:
        clip *= PEAK_LIMIT / peak

    return clip, annotate_scene(spec)


def annotate_scene(spec: SceneSpec) -> SceneAnnotation:
    """Ground-truth rows on the annotation grid for a scene spec."""
    hop = ANNOTATION_HOP_S
    n_frames = int(math.ceil(spec.clip_length_s / hop - 1e-9))
    rows: list[AnnotationRow] = []
    for idx, ev in enumerate(spec.events):
        first = int(math.floor(ev.onset_s / hop + 1e-9))
        last = int(math.ceil(ev.offset_s / hop - 1e-9))
        for frame in range(max(0, first), min(n_frames, last)):
            rows.append(
                (
                    frame,
                    ev.class_index,
                    idx,
                    float(ev.azimuth_deg),
                    float(ev.elevation_deg),
                    float(ev.distance_m),
                )
            )
    return SceneAnnotation(frame_hop_s=hop, n_frames=n_frames, rows=tuple(rows))


def write_annotation(path, annotation: SceneAnnotation) -> None:
    """Write annotation rows as CSV with a header line.

    Floats are written with repr so the round trip is lossless.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for frame, cls, ev, az, el, dist in annotation.rows:
            writer.writerow([frame, cls, ev, repr(az), repr(el), repr(dist)])


def read_annotation(
    path, frame_hop_s: float = ANNOTATION_HOP_S, n_frames: int | None = None
) -> SceneAnnotation:
    """Read an annotation CSV written by :func:`write_annotation`.

    When ``n_frames`` is not given it is inferred from the last active
    frame, so trailing silent frames are not recoverable from file alone.
    """
    rows: list[AnnotationRow] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ANNOTATION_HEADER:
            raise ValueError(f"{path}: missing or malformed annotation header")
        for line in reader:
            if not line:
                continue
            if len(line) != 6:
                raise ValueError(f"{path}: malformed annotation row {line!r}")
            rows.append(
                (
                    int(line[0]),
                    int(line[1]),
                    int(line[2]),
                    float(line[3]),
                    float(line[4]),
                    float(line[5]),
                )
            )
    if n_frames is None:
        n_frames = (max(r[0] for r in rows) + 1) if rows else 0
    return SceneAnnotation(frame_hop_s=frame_hop_s, n_frames=n_frames, rows=tuple(rows))


def sample_scene_spec(
    clip_length_s: float,
    n_classes: int,
    seed,
    mean_events_per_minute: float = 25.0,
    std_events_per_minute: float = 3.0,
    snr_db: float | None = 30.0,
    duration_range_s: tuple[float, float] = (0.6, 3.0),
    distance_range_m: tuple[float, float] = (0.5, 3.5),
    elevation_range_deg: tuple[float, float] = (-40.0, 40.0),
    gain_range: tuple[float, float] = (0.5, 1.0),
) -> SceneSpec:
    """Draw a random scene: event count ~ Normal scaled to the clip length,
    rounded and clamped to at least one event; placements uniform."""
    if not 1 <= n_classes <= N_CLASSES:
        raise ValueError(f"n_classes must lie in [1, {N_CLASSES}], got {n_classes}")
    rng = _rng(seed, 0x5CE)
    scale = clip_length_s / 60.0
    n_events = max(
        1,
        int(round(rng.normal(mean_events_per_minute * scale, std_events_per_minute * scale))),
    )
    events = []
    for k in range(n_events):
        duration = min(
            rng.uniform(*duration_range_s), max(0.1, clip_length_s - 1e-3)
        )
        onset = rng.uniform(0.0, clip_length_s - duration)
        events.append(
            EventSpec(
                class_index=int(rng.integers(0, n_classes)),
                onset_s=float(onset),
                duration_s=float(duration),
                azimuth_deg=float(rng.uniform(-180.0, 180.0)),
                elevation_deg=float(rng.uniform(*elevation_range_deg)),
                distance_m=float(rng.uniform(*distance_range_m)),
                gain=float(rng.uniform(*gain_range)),
                signal_seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return SceneSpec(
        clip_length_s=clip_length_s,
        events=tuple(events),
        snr_db=snr_db,
        noise_seed=int(rng.integers(0, 2**31 - 1)),
    )


# ---------------------------------------------------------------------------
# dataset generation and manifests
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ("split", "wav", "csv")
SPLITS = ("train", "val", "test")


def write_manifest(path, entries: list[tuple[str, str, str]]) -> None:
    """Write (split, wav, csv) rows; paths are relative to the manifest."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(entries)


def read_manifest(path) -> list[tuple[str, Path, Path]]:
    """Read a manifest, resolving paths against its directory.

    Returns (split, wav_path, csv_path) tuples.
    """
    base = Path(path).parent
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise ValueError(f"{path}: missing or malformed manifest header")
        for line in reader:
            if not line:
                continue
            if len(line) != 3 or line[0] not in SPLITS:
                raise ValueError(f"{path}: malformed manifest row {line!r}")
            out.append((line[0], base / line[1], base / line[2]))
    if not out:
        raise ValueError(f"{path}: manifest lists no clips")
    return out


def split_counts(n_clips: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Deterministic train/val/test sizes; train absorbs rounding."""
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be >= 0 and sum to 1, got {fractions}")
    n_val = int(round(n_clips * fractions[1]))
    n_test = int(round(n_clips * fractions[2]))
    n_train = n_clips - n_val - n_test
    if n_train <= 0:
        raise ValueError(f"split {fractions} leaves no training clips of {n_clips}")
    return n_train, n_val, n_test


def _render_entry(args) -> tuple[str, str, str]:
    """Render one dataset clip to disk; top level so worker pools can run it."""
    (out_dir, index, split, clip_length_s, n_classes, seed, snr_db, sample_kwargs) = args
    geometry = default_geometry()
    spec = sample_scene_spec(
        clip_length_s, n_classes, seed=(seed, index), snr_db=snr_db, **sample_kwargs
    )
    clip, annotation = render_scene(spec, geometry)
    wav_name = f"clip_{index:05d}.wav"
    csv_name = f"clip_{index:05d}.csv"
    write_wav(Path(out_dir) / wav_name, clip, geometry.sample_rate)
    write_annotation(Path(out_dir) / csv_name, annotation)
    return (split, wav_name, csv_name)


def generate_dataset(
    out_dir,
    n_clips: int,
    clip_length_s: float,
    n_classes: int,
    seed: int,
    snr_db: float | None = 30.0,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    jobs: int = 1,
    **sample_kwargs,
) -> Path:
    """Render a dataset of random scenes plus a manifest.

    File names, contents and manifest rows depend only on the arguments,
    never on ``jobs``; workers only spread the rendering.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train, n_val, n_test = split_counts(n_clips, split_fractions)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    tasks = [
        (str(out_dir), i, splits[i], clip_length_s, n_classes, seed, snr_db, sample_kwargs)
        for i in range(n_clips)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_render_entry, tasks))
    else:
        entries = [_render_entry(t) for t in tasks]
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, entries)
    return manifest_path
