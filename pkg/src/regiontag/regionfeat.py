"""Region queries and the positional features derived from them.

An angular region is a span of azimuths walked counterclockwise from
``begin_deg`` to ``end_deg`` (degrees, boundary inclusive, may cross the
-180/180 seam).  A distance query selects sources inside a band around a
target range.  The directional feature scores how well measured phase
differences match a candidate direction; the field-of-view feature reduces
a bank of directional features to an in-region versus out-of-region
contrast per time-frequency bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SpectroTensor, ipd
from .geometry import ArrayGeometry, DirectionOfArrival, target_phase, wrap_azimuth
from . import kernels

# Half-width in metres of the band a distance query selects.
DISTANCE_BAND_M = 0.5

DEFAULT_GRID_RESOLUTION_DEG = 5.0


@dataclass(frozen=True)
class AngularRegion:
    """Azimuth span from begin_deg counterclockwise to end_deg, inclusive.

    The stored endpoints are wrapped into [-180, 180).  A span whose
    endpoints coincide after wrapping covers the full circle.
    """

    begin_deg: float
    end_deg: float

    def __post_init__(self):
        object.__setattr__(self, "begin_deg", wrap_azimuth(self.begin_deg))
        object.__setattr__(self, "end_deg", wrap_azimuth(self.end_deg))

    @property
    def width_deg(self) -> float:
        w = (self.end_deg - self.begin_deg) % 360.0
        return 360.0 if w == 0.0 else w

    @property
    def middle_deg(self) -> float:
        return wrap_azimuth(self.begin_deg + self.width_deg / 2.0)

    def contains(self, azimuth_deg: float) -> bool:
        rel = (wrap_azimuth(azimuth_deg) - self.begin_deg) % 360.0
        return rel <= self.width_deg

    @classmethod
    def centered(cls, center_deg: float, width_deg: float) -> "AngularRegion":
        if not 0.0 < width_deg <= 360.0:
            raise ValueError(f"width must lie in (0, 360], got {width_deg}")
        return cls(center_deg - width_deg / 2.0, center_deg + width_deg / 2.0)


@dataclass(frozen=True)
class DistanceQuery:
    """Distance band |source distance - distance_m| <= band_m."""

    distance_m: float
    band_m: float = DISTANCE_BAND_M

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError(f"distance must be positive, got {self.distance_m}")
        if self.band_m <= 0:
            raise ValueError(f"band must be positive, got {self.band_m}")

    def contains(self, distance_m: float) -> bool:
        return abs(distance_m - self.distance_m) <= self.band_m


def region_contains(region: AngularRegion, azimuth_deg: float) -> bool:
    """Whether an azimuth falls inside a region, boundaries inclusive."""
    return region.contains(azimuth_deg)


def angular_overlap_deg(a: AngularRegion, b: AngularRegion) -> float:
    """Total width in degrees of the overlap between two angular regions.

    Both spans are unrolled to [begin, begin + width) intervals on the real
    line; shifting one by -360/0/+360 and summing the positive intersections
    accounts for seam wrapping, including the two-arc case.
    """
    overlap = 0.0
    for shift in (-360.0, 0.0, 360.0):
        lo = max(a.begin_deg, b.begin_deg + shift)
        hi = min(a.begin_deg + a.width_deg, b.begin_deg + shift + b.width_deg)
        if hi > lo:
            overlap += hi - lo
    return min(overlap, a.width_deg, b.width_deg)


@dataclass(frozen=True)
class AngleGrid:
    """Evenly spaced azimuth grid covering [-180, 180)."""

    resolution_deg: float = DEFAULT_GRID_RESOLUTION_DEG

    def __post_init__(self):
        if self.resolution_deg <= 0 or 360.0 % self.resolution_deg != 0:
            raise ValueError(
                f"resolution must evenly divide 360, got {self.resolution_deg}"
            )

    @property
    def n_angles(self) -> int:
        return int(round(360.0 / self.resolution_deg))

    @property
    def angles_deg(self) -> np.ndarray:
        return -180.0 + self.resolution_deg * np.arange(self.n_angles)

    def bucket(self, azimuth_deg: float) -> int:
        """Index of the grid angle whose cell contains the azimuth."""
        return int((wrap_azimuth(azimuth_deg) + 180.0) // self.resolution_deg) % self.n_angles


def _ipd_stack(spec: SpectroTensor, pairs) -> np.ndarray:
    """Measured phase differences for each pair, shape (P, T, F)."""
    return np.stack([ipd(spec, pair) for pair in pairs])


def _phase_table(
    spec: SpectroTensor, geometry: ArrayGeometry, pairs, azimuths_deg
) -> np.ndarray:
    """Expected phase per (angle, pair, bin), elevation fixed at zero."""
    bins = np.arange(spec.n_bins)
    table = np.empty((len(azimuths_deg), len(pairs), spec.n_bins))
    for a, az in enumerate(azimuths_deg):
        doa = DirectionOfArrival(az, 0.0)
        for p, pair in enumerate(pairs):
            table[a, p] = target_phase(geometry, pair, doa, bins, spec.n_fft)
    return table


def directional_feature(
    spec: SpectroTensor,
    geometry: ArrayGeometry,
    pairs,
    azimuth_deg: float,
    ipd_planes: np.ndarray | None = None,
) -> np.ndarray:
    """Phase-alignment score toward one azimuth, shape (T, F).

    Sums cos(measured IPD - expected phase) over the microphone pairs, so
    values lie in [-len(pairs), len(pairs)].  ``ipd_planes`` may carry
    precomputed results of the per-pair phase differences to avoid
    recomputing them across many azimuths.
    """
    if ipd_planes is None:
        ipd_planes = _ipd_stack(spec, pairs)
    phase = _phase_table(spec, geometry, pairs, [azimuth_deg])
    return kernels.df_bank(ipd_planes, phase)[0]


def fov_feature(
    spec: SpectroTensor,
    geometry: ArrayGeometry,
    pairs,
    region: AngularRegion,
    grid: AngleGrid | None = None,
    count_df_evals: bool = False,
):
    """Field-of-view contrast for an angular region, shape (T, F).

    For each time-frequency bin the directional feature is evaluated at
    every grid angle (one evaluation per angle).  The result is the best
    in-region score where it beats the best out-of-region score, and -1
    elsewhere.  A full-circle region has no outside angles, so the best
    in-region score is returned everywhere.

    When ``count_df_evals`` is true, returns ``(plane, n_evaluations)``.
    """
    if grid is None:
        grid = AngleGrid()
    angles = grid.angles_deg
    in_mask = np.array([region.contains(a) for a in angles], dtype=bool)
    if not in_mask.any():
        raise ValueError(
            f"region {region} contains no grid angle at {grid.resolution_deg} deg"
        )
    ipd_planes = _ipd_stack(spec, pairs)
    phase = _phase_table(spec, geometry, pairs, angles)
    bank = kernels.df_bank(ipd_planes, phase)

    best_in = bank[in_mask].max(axis=0)
    if in_mask.all():
        plane = best_in
    else:
        best_out = bank[~in_mask].max(axis=0)
        plane = np.where(best_in > best_out, best_in, -1.0)
    if count_df_evals:
        return plane, len(angles)
    return plane
