"""Microphone array geometry and direction-of-arrival helpers.

The package targets a compact four-capsule array arranged as a tetrahedron
on a small rigid sphere.  All positions are Cartesian metres in a
right-handed frame: x forward, y left, z up.  Azimuth is measured
counterclockwise from the x axis in degrees, elevation upward from the
horizontal plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 24000

# Capsule radius of the reference array, metres.
ARRAY_RADIUS = 0.042

# Nominal (azimuth, elevation) of the four capsules, degrees.
CANONICAL_ANGLES = (
    (45.0, 35.0),
    (-45.0, -35.0),
    (135.0, -35.0),
    (-135.0, 35.0),
)

# Microphone pairs used for the phase-difference feature stack.  The
# degenerate (0, 0) pair is kept so the stack width matches the pair list.
DEFAULT_PAIRS = ((0, 0), (0, 1), (0, 2), (0, 3))


def wrap_azimuth(azimuth_deg: float) -> float:
    """Wrap an azimuth in degrees into [-180, 180)."""
    return float((azimuth_deg + 180.0) % 360.0 - 180.0)


def unit_vector(azimuth_deg: float, elevation_deg: float = 0.0) -> np.ndarray:
    """Unit direction vector pointing from the array origin toward a source."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )


@dataclass(frozen=True)
class DirectionOfArrival:
    """Source direction seen from the array origin.

    Parameters
    ----------
    azimuth_deg : float
        Azimuth in degrees; stored wrapped into [-180, 180).
    elevation_deg : float
        Elevation in degrees, must lie in [-90, 90].
    """

    azimuth_deg: float
    elevation_deg: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(
                f"elevation must lie in [-90, 90], got {self.elevation_deg}"
            )
        object.__setattr__(self, "azimuth_deg", wrap_azimuth(self.azimuth_deg))
        object.__setattr__(self, "elevation_deg", float(self.elevation_deg))

    def unit_vector(self) -> np.ndarray:
        return unit_vector(self.azimuth_deg, self.elevation_deg)


@dataclass(frozen=True)
class ArrayGeometry:
    """Positions and acoustic constants of a four-microphone array.

    Parameters
    ----------
    mic_positions : np.ndarray
        Array of shape (4, 3), Cartesian metres.  The centroid must sit at
        the origin (within 1e-9 m) so inter-channel delays are symmetric
        around the array centre.
    sound_speed : float
        Speed of sound in m/s.
    sample_rate : int
        Sample rate the array records at, Hz.
    """

    mic_positions: np.ndarray
    sound_speed: float = SPEED_OF_SOUND
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.shape != (4, 3):
            raise ValueError(f"mic_positions must have shape (4, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic_positions must be finite")
        centroid = np.abs(pos.mean(axis=0)).max()
        if centroid > 1e-9:
            raise ValueError(
                f"array centroid must sit at the origin within 1e-9 m, off by {centroid:.3e}"
            )
        if self.sound_speed <= 0:
            raise ValueError(f"sound_speed must be positive, got {self.sound_speed}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "mic_positions", pos)
        object.__setattr__(self, "sound_speed", float(self.sound_speed))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    def pair_vector(self, pair: tuple[int, int]) -> np.ndarray:
        """Position difference m[n1] - m[n2] for a microphone pair."""
        n1, n2 = pair
        return self.mic_positions[n1] - self.mic_positions[n2]

    def pair_distance(self, pair: tuple[int, int]) -> float:
        """Euclidean distance between the two capsules of a pair."""
        return float(np.linalg.norm(self.pair_vector(pair)))


def default_geometry() -> ArrayGeometry:
    """The canonical tetrahedral array: capsules at azimuth/elevation
    (45, 35), (-45, -35), (135, -35), (-135, 35) degrees on a 4.2 cm sphere."""
    pos = np.stack(
        [ARRAY_RADIUS * unit_vector(az, el) for az, el in CANONICAL_ANGLES]
    )
    # The four directions cancel pairwise, so the centroid is zero up to
    # rounding; snap it exactly to keep downstream symmetry checks tight.
    pos = pos - pos.mean(axis=0)
    return ArrayGeometry(mic_positions=pos)


def pair_delay(
    geometry: ArrayGeometry, pair: tuple[int, int], doa: DirectionOfArrival
) -> float:
    """Inter-channel delay in seconds for a far-field source.

    Returns (m[n1] - m[n2]) . u / c where u points toward the source.  The
    value is the arrival-time lag of channel n2 relative to channel n1:
    positive when n1 sits closer to the source.
    """
    u = doa.unit_vector()
    return float(geometry.pair_vector(pair) @ u / geometry.sound_speed)


def target_phase(
    geometry: ArrayGeometry,
    pair: tuple[int, int],
    doa: DirectionOfArrival,
    freq_bins: np.ndarray,
    n_fft: int,
    mode: str = "geometric",
) -> np.ndarray:
    """Expected inter-channel phase for a pair at the given direction.

    Parameters
    ----------
    freq_bins : np.ndarray
        Integer bin indices of a one-sided spectrum with `n_fft` points.
    mode : str
        "geometric" uses the full 3-D pair vector; "planar" models the pair
        as a line segment of the same length along the x axis, which only
        depends on cos(azimuth).  Both agree when the pair actually lies on
        the x axis and elevation is zero.

    Returns
    -------
    np.ndarray
        Phase in radians per frequency bin, unwrapped.
    """
    bins = np.asarray(freq_bins, dtype=float)
    freq_hz = bins * geometry.sample_rate / n_fft
    if mode == "geometric":
        tau = pair_delay(geometry, pair, doa)
        return 2.0 * np.pi * freq_hz * tau
    if mode == "planar":
        spacing = geometry.pair_distance(pair)
        cos_az = np.cos(np.deg2rad(doa.azimuth_deg))
        return 2.0 * np.pi * freq_hz * spacing * cos_az / geometry.sound_speed
    raise ValueError(f"unknown target_phase mode: {mode!r}")


def save_geometry(geometry: ArrayGeometry, path) -> None:
    """Write a geometry to a plain-text key-value file."""
    lines = []
    for i, row in enumerate(geometry.mic_positions):
        lines.append(
            f"mic{i} = {float(row[0])!r} {float(row[1])!r} {float(row[2])!r}"
        )
    lines.append(f"sound_speed = {geometry.sound_speed!r}")
    lines.append(f"sample_rate = {geometry.sample_rate}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_geometry(path) -> ArrayGeometry:
    """Read a geometry written by :func:`save_geometry`."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed geometry line: {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        pos = np.array(
            [[float(v) for v in values[f"mic{i}"].split()] for i in range(4)]
        )
        return ArrayGeometry(
            mic_positions=pos,
            sound_speed=float(values["sound_speed"]),
            sample_rate=int(values["sample_rate"]),
        )
    except KeyError as exc:
        raise ValueError(f"geometry file missing key {exc}") from exc
