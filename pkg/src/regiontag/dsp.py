"""Spectral and spatial feature primitives for four-channel clips.

A clip is a float array of shape (4, L) at the array sample rate.  The
short-time transform frames it without centre padding: frame t covers
samples [t*hop, t*hop + n_fft), so T = (L - n_fft)//hop + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor added inside logs and magnitude normalisations.
EPS = 1e-10

DEFAULT_N_FFT = 512
DEFAULT_HOP = 256


def hann_window(n_fft: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


@dataclass(frozen=True)
class SpectroTensor:
    """One-sided complex spectrogram per channel.

    Attributes
    ----------
    data : np.ndarray
        Complex array of shape (C, T, F) with F = n_fft//2 + 1.
    sample_rate : int
        Sample rate of the source clip, Hz.
    n_fft, hop : int
        Transform size and frame advance in samples.
    """

    data: np.ndarray
    sample_rate: int
    n_fft: int
    hop: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != self.n_fft // 2 + 1:
            raise ValueError(
                f"spectrogram must be (C, T, n_fft//2 + 1), got shape "
                f"{self.data.shape} for n_fft {self.n_fft}"
            )
        if not np.iscomplexobj(self.data):
            raise ValueError("spectrogram data must be complex")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]

    def bin_frequencies(self) -> np.ndarray:
        """Physical frequency in Hz of each one-sided bin."""
        return np.arange(self.n_bins) * self.sample_rate / self.n_fft


def n_frames_for(n_samples: int, n_fft: int, hop: int) -> int:
    """Frame count of the non-centred framing."""
    return (n_samples - n_fft) // hop + 1


def stft(
    clip: np.ndarray,
    sample_rate: int,
    n_fft: int = DEFAULT_N_FFT,
    hop: int = DEFAULT_HOP,
    window: str = "hann",
) -> SpectroTensor:
    """Short-time Fourier transform of a multichannel clip.

    Parameters
    ----------
    clip : np.ndarray
        Shape (C, L) float samples.
    window : str
        "hann" (default) or "rect".

    Raises
    ------
    ValueError
        If the clip is shorter than one frame or parameters are malformed.
    """
    clip = np.asarray(clip, dtype=float)
    if clip.ndim != 2:
        raise ValueError(f"clip must be 2-D (channels, samples), got {clip.shape}")
    if n_fft < 2 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"n_fft must be a power of two >= 2, got {n_fft}")
    if not 1 <= hop <= n_fft:
        raise ValueError(f"hop must lie in [1, n_fft], got {hop}")
    if clip.shape[1] < n_fft:
        raise ValueError(
            f"clip too short: {clip.shape[1]} samples < one {n_fft}-sample frame"
        )
    if window == "hann":
        win = hann_window(n_fft)
    elif window == "rect":
        win = np.ones(n_fft)
    else:
        raise ValueError(f"unknown window: {window!r}")

    T = n_frames_for(clip.shape[1], n_fft, hop)
    stride_c, stride_s = clip.strides
    frames = np.lib.stride_tricks.as_strided(
        clip,
        shape=(clip.shape[0], T, n_fft),
        strides=(stride_c, hop * stride_s, stride_s),
        writeable=False,
    )
    data = np.fft.rfft(frames * win, axis=-1)
    return SpectroTensor(
        data=data, sample_rate=int(sample_rate), n_fft=n_fft, hop=hop
    )


def lps(spec: SpectroTensor, channel: int = 0) -> np.ndarray:
    """Log power spectrogram of one channel: log(|X|^2 + eps), shape (T, F)."""
    x = spec.data[channel]
    return np.log(np.abs(x) ** 2 + EPS)


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap phase values in radians into (-pi, pi]."""
    out = np.mod(phase, 2.0 * np.pi)
    return np.where(out > np.pi, out - 2.0 * np.pi, out)


def ipd(spec: SpectroTensor, pair: tuple[int, int]) -> np.ndarray:
    """Inter-channel phase difference angle(X[n1]) - angle(X[n2]), (T, F).

    Values are wrapped into (-pi, pi].
    """
    n1, n2 = pair
    diff = np.angle(spec.data[n1]) - np.angle(spec.data[n2])
    return wrap_phase(diff)


def gcc_phat(spec: SpectroTensor, pair: tuple[int, int], max_lag: int) -> np.ndarray:
    """Per-frame PHAT-weighted cross-correlation on a symmetric lag axis.

    The cross-spectrum is normalised by its magnitude, transformed back to
    the time domain, and read out at lags -max_lag..+max_lag.  The peak lag
    estimates the arrival delay of channel n2 relative to channel n1 in
    samples, matching the sign of ``geometry.pair_delay``.

    Returns
    -------
    np.ndarray
        Shape (T, 2*max_lag + 1), lag axis ordered -max_lag..+max_lag.
    """
    if not 1 <= max_lag <= spec.n_fft // 2:
        raise ValueError(
            f"max_lag must lie in [1, n_fft//2={spec.n_fft // 2}], got {max_lag}"
        )
    n1, n2 = pair
    cross = spec.data[n2] * np.conj(spec.data[n1])
    cross = cross / (np.abs(cross) + EPS)
    cc = np.fft.irfft(cross, n=spec.n_fft, axis=-1)
    lags = np.arange(-max_lag, max_lag + 1)
    return cc[:, lags % spec.n_fft]
