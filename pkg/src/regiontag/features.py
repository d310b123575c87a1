"""Assembling per-crop feature stacks and the on-disk feature container.

A feature recipe is an ordered list of plane kinds drawn from::

    lps      log power spectrogram of the reference channel     (1 plane)
    ipd      phase differences for each microphone pair          (P planes)
    gccphat  PHAT cross-correlation, lag axis resampled to F     (P planes)
    df       directional feature at the query's middle azimuth   (1 plane)
    fov      field-of-view contrast over the query span          (1 plane)
    embed    learned query embedding, appended by the model      (1 plane)

The static planes (everything except ``embed``) are stacked into a
(k, T, F) float array.  ``embed`` is resolved inside the model because its
plane depends on trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SpectroTensor, gcc_phat, ipd, lps
from .geometry import ArrayGeometry, DEFAULT_PAIRS
from .regionfeat import (
    AngleGrid,
    AngularRegion,
    DistanceQuery,
    directional_feature,
    fov_feature,
)

KNOWN_KINDS = ("lps", "ipd", "gccphat", "df", "fov", "embed")

DEFAULT_GCC_MAX_LAG = 32


@dataclass(frozen=True)
class FeatureRecipe:
    """Ordered plane kinds making up the model input."""

    kinds: tuple[str, ...]

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("a feature recipe needs at least one kind")
        for kind in self.kinds:
            if kind not in KNOWN_KINDS:
                raise ValueError(
                    f"unknown feature kind {kind!r}; choose from {KNOWN_KINDS}"
                )
        if len(set(self.kinds)) != len(self.kinds):
            raise ValueError(f"duplicate feature kinds in {self.kinds}")

    @classmethod
    def parse(cls, text: str) -> "FeatureRecipe":
        return cls(tuple(k.strip() for k in text.split(",") if k.strip()))

    def __str__(self) -> str:
        return ",".join(self.kinds)

    @property
    def wants_embedding(self) -> bool:
        return "embed" in self.kinds

    @property
    def needs_angular_query(self) -> bool:
        return "df" in self.kinds or "fov" in self.kinds

    @property
    def needs_query(self) -> bool:
        return self.needs_angular_query or self.wants_embedding

    def n_static_planes(self, n_pairs: int = len(DEFAULT_PAIRS)) -> int:
        count = 0
        for kind in self.kinds:
            if kind in ("ipd", "gccphat"):
                count += n_pairs
            elif kind != "embed":
                count += 1
        return count

    def n_model_planes(self, n_pairs: int = len(DEFAULT_PAIRS)) -> int:
        return self.n_static_planes(n_pairs) + (1 if self.wants_embedding else 0)


@dataclass(frozen=True)
class FeatureStack:
    """Static feature planes for one crop: data (k, T, F) plus labels."""

    data: np.ndarray
    labels: tuple[str, ...]
    embed_requested: bool


def _resample_lags(plane: np.ndarray, n_bins: int) -> np.ndarray:
    """Linearly resample the lag axis of a (T, L) array to n_bins columns."""
    n_lags = plane.shape[1]
    if n_lags == n_bins:
        return plane
    pos = np.linspace(0.0, n_lags - 1.0, n_bins)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_lags - 1)
    w = pos - lo
    return plane[:, lo] * (1.0 - w) + plane[:, hi] * w


def build_feature_stack(
    spec: SpectroTensor,
    geometry: ArrayGeometry,
    recipe: FeatureRecipe,
    query: AngularRegion | DistanceQuery | None = None,
    pairs=DEFAULT_PAIRS,
    grid: AngleGrid | None = None,
    gcc_max_lag: int = DEFAULT_GCC_MAX_LAG,
) -> FeatureStack:
    """Compute the static planes of a recipe for one spectrogram.

    Raises ValueError when the recipe needs a query of a kind the caller
    did not supply (directional planes need an angular query).
    """
    if recipe.needs_angular_query and not isinstance(query, AngularRegion):
        raise ValueError(
            f"recipe {recipe} has directional planes and needs an angular query"
        )
    if recipe.wants_embedding and query is None:
        raise ValueError(f"recipe {recipe} has an embedding plane and needs a query")
    if grid is None:
        grid = AngleGrid()

    planes: list[np.ndarray] = []
    labels: list[str] = []
    for kind in recipe.kinds:
        if kind == "lps":
            planes.append(lps(spec, channel=0))
            labels.append("lps:0")
        elif kind == "ipd":
            for pair in pairs:
                planes.append(ipd(spec, pair))
                labels.append(f"ipd:{pair[0]}-{pair[1]}")
        elif kind == "gccphat":
            for pair in pairs:
                planes.append(
                    _resample_lags(gcc_phat(spec, pair, gcc_max_lag), spec.n_bins)
                )
                labels.append(f"gcc:{pair[0]}-{pair[1]}")
        elif kind == "df":
            planes.append(
                directional_feature(spec, geometry, pairs, query.middle_deg)
            )
            labels.append("df")
        elif kind == "fov":
            planes.append(fov_feature(spec, geometry, pairs, query, grid))
            labels.append("fov")
        # "embed" is appended by the model.
    data = np.stack(planes) if planes else np.zeros((0, spec.n_frames, spec.n_bins))
    return FeatureStack(
        data=data, labels=tuple(labels), embed_requested=recipe.wants_embedding
    )


def embedding_plane(vector: np.ndarray, n_frames: int, n_bins: int) -> np.ndarray:
    """Broadcast an embedding vector to a (T, F) plane.

    The vector occupies the first ``len(vector)`` frequency bins of every
    frame; remaining bins are zero.
    """
    h = len(vector)
    if h > n_bins:
        raise ValueError(f"embedding dim {h} exceeds {n_bins} frequency bins")
    plane = np.zeros((n_frames, n_bins), dtype=float)
    plane[:, :h] = vector
    return plane


# ---------------------------------------------------------------------------
# feature dump container
# ---------------------------------------------------------------------------

FEATURE_MAGIC = b"RTFD"
FEATURE_VERSION = 1
_LABEL_BYTES = 16


def write_feature_dump(path, stack: FeatureStack) -> None:
    """Write a feature stack as a flat binary dump.

    Layout (all integers little-endian uint32): magic ``RTFD``, version,
    k, T, F, then k 16-byte zero-padded ASCII plane labels, then the
    (k, T, F) payload as little-endian float32 in C order.
    """
    data = np.ascontiguousarray(stack.data, dtype="<f4")
    k, t, f = data.shape
    header = np.array([FEATURE_VERSION, k, t, f], dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(header.tobytes())
        for label in stack.labels:
            raw = label.encode("ascii")
            if len(raw) > _LABEL_BYTES:
                raise ValueError(f"plane label too long: {label!r}")
            fh.write(raw.ljust(_LABEL_BYTES, b"\0"))
        fh.write(data.tobytes())


def read_feature_dump(path) -> FeatureStack:
    """Read a dump written by :func:`write_feature_dump`.

    The payload comes back as float64 planes (converted from the stored
    float32).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature dump (magic {magic!r})")
        version, k, t, f = np.frombuffer(fh.read(16), dtype="<u4")
        if version != FEATURE_VERSION:
            raise ValueError(f"{path}: unsupported feature dump version {version}")
        labels = []
        for _ in range(k):
            raw = fh.read(_LABEL_BYTES)
            labels.append(raw.rstrip(b"\0").decode("ascii"))
        payload = np.frombuffer(fh.read(int(k) * int(t) * int(f) * 4), dtype="<f4")
        if payload.size != k * t * f:
            raise ValueError(f"{path}: truncated feature dump payload")
    data = payload.reshape(int(k), int(t), int(f)).astype(np.float64)
    return FeatureStack(data=data, labels=tuple(labels), embed_requested=False)
