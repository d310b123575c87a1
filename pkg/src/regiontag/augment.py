"""Channel-swap augmentation for the tetrahedral array.

The canonical capsule layout is closed under eight rigid maps: the four
90-degree rotations about the vertical axis and the four azimuth
reflections, each paired with whichever elevation flip keeps the capsule
set fixed.  Applying one of these maps to a scene is therefore equivalent
to permuting the recorded channels and moving the labels, which
multiplies a dataset eightfold without re-rendering audio.

The transforms are derived constructively from the geometry at import
time rather than hard-coded: for each candidate azimuth map the unique
elevation sign that maps capsules onto capsules is searched, and the
channel permutation follows from matching rotated capsule positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import read_clip, write_wav
from .geometry import ArrayGeometry, default_geometry, wrap_azimuth
from .scenesim import (
    SceneAnnotation,
    read_annotation,
    read_manifest,
    write_annotation,
    write_manifest,
)

# Candidate azimuth maps: az -> offset + sign * az, in lexicographic order
# (rotations first, then reflections).  Transform 0 is the identity.
_AZIMUTH_MAPS = (
    (0.0, 1),
    (90.0, 1),
    (180.0, 1),
    (-90.0, 1),
    (0.0, -1),
    (90.0, -1),
    (180.0, -1),
    (-90.0, -1),
)


@dataclass(frozen=True)
class AcsTransform:
    """One array symmetry: azimuth map, tied elevation sign, channel order.

    ``channel_permutation[i]`` names the source channel that becomes
    channel i of the transformed clip.
    """

    transform_id: int
    azimuth_offset_deg: float
    azimuth_sign: int
    elevation_sign: int
    channel_permutation: tuple[int, int, int, int]

    def map_azimuth(self, azimuth_deg: float) -> float:
        return wrap_azimuth(self.azimuth_offset_deg + self.azimuth_sign * azimuth_deg)

    def map_elevation(self, elevation_deg: float) -> float:
        return self.elevation_sign * elevation_deg

    def rotation_matrix(self) -> np.ndarray:
        """The rigid map as a 3x3 matrix acting on Cartesian positions."""
        th = np.deg2rad(self.azimuth_offset_deg)
        rot = np.array(
            [
                [np.cos(th), -np.sin(th), 0.0],
                [np.sin(th), np.cos(th), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        if self.azimuth_sign < 0:
            rot = rot @ np.diag([1.0, -1.0, 1.0])
        if self.elevation_sign < 0:
            rot = rot @ np.diag([1.0, 1.0, -1.0])
        return rot


def _match_mic(positions: np.ndarray, target: np.ndarray, tol: float = 1e-9) -> int:
    dists = np.linalg.norm(positions - target, axis=1)
    idx = int(np.argmin(dists))
    if dists[idx] > tol:
        raise ValueError("rotated capsule does not land on any capsule")
    return idx


def derive_transforms(geometry: ArrayGeometry | None = None) -> tuple[AcsTransform, ...]:
    """Derive the eight symmetry transforms for an array geometry.

    Raises ValueError if the geometry is not closed under some candidate
    azimuth map with either elevation sign.
    """
    if geometry is None:
        geometry = default_geometry()
    pos = geometry.mic_positions
    transforms = []
    for tid, (offset, sign) in enumerate(_AZIMUTH_MAPS):
        match = None
        for elev_sign in (1, -1):
            candidate = AcsTransform(tid, offset, sign, elev_sign, (0, 1, 2, 3))
            rot = candidate.rotation_matrix()
            try:
                mapped = [_match_mic(pos, rot @ p) for p in pos]
            except ValueError:
                continue
            if sorted(mapped) != [0, 1, 2, 3]:
                continue
            if match is not None:
                raise ValueError(
                    f"azimuth map {offset:+g}{'+' if sign > 0 else '-'}az is a "
                    "symmetry for both elevation signs; geometry is degenerate"
                )
            # Transformed channel i must carry what the capsule now at
            # position i used to hear: the capsule the inverse map sends
            # position i to.
            inv = rot.T
            perm = tuple(_match_mic(pos, inv @ p) for p in pos)
            match = AcsTransform(tid, offset, sign, elev_sign, perm)
        if match is None:
            raise ValueError(
                f"geometry is not closed under azimuth map {offset:+g}, sign {sign}"
            )
        transforms.append(match)
    return tuple(transforms)


ACS_TRANSFORMS = derive_transforms()


def apply_acs_clip(clip: np.ndarray, transform: AcsTransform) -> np.ndarray:
    """Reorder the channels of a (4, L) clip under one transform."""
    clip = np.asarray(clip)
    if clip.ndim != 2 or clip.shape[0] != 4:
        raise ValueError(f"clip must have shape (4, L), got {clip.shape}")
    return clip[list(transform.channel_permutation), :]


def apply_acs_annotation(
    annotation: SceneAnnotation, transform: AcsTransform
) -> SceneAnnotation:
    """Move annotation directions under one transform."""
    rows = tuple(
        (
            frame,
            cls,
            ev,
            transform.map_azimuth(az),
            transform.map_elevation(el),
            dist,
        )
        for frame, cls, ev, az, el, dist in annotation.rows
    )
    return SceneAnnotation(
        frame_hop_s=annotation.frame_hop_s, n_frames=annotation.n_frames, rows=rows
    )


def compose(a: AcsTransform, b: AcsTransform) -> tuple[float, int]:
    """Azimuth map of 'apply b, then a' as an (offset, sign) pair."""
    offset = wrap_azimuth(a.azimuth_offset_deg + a.azimuth_sign * b.azimuth_offset_deg)
    return offset, a.azimuth_sign * b.azimuth_sign


def transform_by_map(offset: float, sign: int) -> AcsTransform:
    """Look up the derived transform with a given azimuth map."""
    offset = wrap_azimuth(offset)
    for t in ACS_TRANSFORMS:
        if t.azimuth_sign == sign and wrap_azimuth(t.azimuth_offset_deg) == offset:
            return t
    raise KeyError(f"no transform with azimuth map ({offset}, {sign})")


def expand_manifest(
    manifest_path,
    out_dir,
    geometry: ArrayGeometry | None = None,
    transforms: tuple[AcsTransform, ...] | None = None,
) -> Path:
    """Materialise the channel-swap expansion of a dataset.

    Every manifest clip is written once per transform with ``_acs{id}``
    suffixes (id 0 is the untouched copy), and a new manifest covering the
    expanded set is returned.
    """
    if geometry is None:
        geometry = default_geometry()
    if transforms is None:
        transforms = ACS_TRANSFORMS
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, wav_path, csv_path in read_manifest(manifest_path):
        clip = read_clip(wav_path, geometry.sample_rate)
        annotation = read_annotation(csv_path)
        stem = Path(wav_path).stem
        for t in transforms:
            wav_name = f"{stem}_acs{t.transform_id}.wav"
            csv_name = f"{stem}_acs{t.transform_id}.csv"
            write_wav(out_dir / wav_name, apply_acs_clip(clip, t), geometry.sample_rate)
            write_annotation(out_dir / csv_name, apply_acs_annotation(annotation, t))
            entries.append((split, wav_name, csv_name))
    manifest_out = out_dir / "manifest.csv"
    write_manifest(manifest_out, entries)
    return manifest_out
