"""WAV input/output for four-channel clips.

Clips travel in memory as float64 arrays of shape (channels, samples) with
values nominally in [-1, 1].  On disk they are float32 WAV files; 16- and
32-bit PCM files are accepted on read and normalised to [-1, 1).
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def write_wav(path, clip: np.ndarray, sample_rate: int) -> None:
    """Write a (channels, samples) clip as a float32 WAV file."""
    clip = np.asarray(clip)
    if clip.ndim != 2:
        raise ValueError(f"clip must be 2-D (channels, samples), got {clip.shape}")
    wavfile.write(path, int(sample_rate), clip.T.astype(np.float32))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file into a float64 (channels, samples) clip.

    Returns (clip, sample_rate).
    """
    sample_rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        clip = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        clip = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        clip = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    return clip.T, int(sample_rate)


def read_clip(path, expected_rate: int, expected_channels: int = 4) -> np.ndarray:
    """Read a clip and enforce the channel count and sample rate the
    pipeline was built for.  Raises ValueError on mismatch."""
    clip, rate = read_wav(path)
    if rate != expected_rate:
        raise ValueError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz"
        )
    if clip.shape[0] != expected_channels:
        raise ValueError(
            f"{path}: {clip.shape[0]} channels, expected {expected_channels}"
        )
    return clip
