"""Utterance-level acoustic features: 16 low-level descriptors, their deltas,
and 12 functionals per contour, giving a 384-dimensional vector.

Layout of the output vector is ``contour_index * 12 + functional_index`` with
contours ordered as :data:`CONTOUR_NAMES` and functionals as
:data:`FUNCTIONAL_NAMES`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from .errors import EmptySignal, InvalidConfig, InvalidInput, NumericalError

F0_MIN_HZ = 50.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.3
HNR_CLIP_DB = 100.0
N_MEL_FILTERS = 26
N_MFCC = 12
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
MIN_SAMPLE_RATE = 8000

BASE_LLD_NAMES: tuple[str, ...] = ("zcr", "rms_energy", "f0_hz", "hnr_db") + tuple(
    f"mfcc_{i}" for i in range(1, N_MFCC + 1)
)
CONTOUR_NAMES: tuple[str, ...] = BASE_LLD_NAMES + tuple(f"{n}_delta" for n in BASE_LLD_NAMES)
FUNCTIONAL_NAMES: tuple[str, ...] = (
    "mean",
    "std",
    "kurtosis",
    "skewness",
    "min",
    "max",
    "relpos_min",
    "relpos_max",
    "range",
    "linreg_offset",
    "linreg_slope",
    "linreg_mse",
)
N_FUNCTIONALS = len(FUNCTIONAL_NAMES)
FEATURE_DIM = len(CONTOUR_NAMES) * N_FUNCTIONALS  # 384

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rectangular": np.ones,
}


def feature_names() -> list[str]:
    """Human-readable name for each of the 384 feature indices."""
    return [f"{c}__{f}" for c in CONTOUR_NAMES for f in FUNCTIONAL_NAMES]


def feature_index(contour: str, functional: str) -> int:
    return CONTOUR_NAMES.index(contour) * N_FUNCTIONALS + FUNCTIONAL_NAMES.index(functional)


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).ravel()
        if x.size == 0:
            raise InvalidInput("audio clip has no samples")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("audio clip contains non-finite samples")
        if np.max(np.abs(x)) > 1.0:
            raise InvalidInput("audio samples must lie in [-1, 1]")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate < MIN_SAMPLE_RATE:
            raise InvalidInput(f"sample rate must be an integer >= {MIN_SAMPLE_RATE}, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameParams:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    window_fn: str = "hamming"

    def __post_init__(self):
        if not (0 < self.hop_ms <= self.window_ms):
            raise InvalidConfig(f"need 0 < hop_ms <= window_ms, got hop={self.hop_ms}, window={self.window_ms}")
        if self.window_fn not in _WINDOWS:
            raise InvalidConfig(f"unknown window_fn {self.window_fn!r}; choose from {sorted(_WINDOWS)}")

    def sizes(self, sample_rate: int) -> tuple[int, int]:
        """Window and hop length in samples."""
        win = int(round(sample_rate * self.window_ms / 1000.0))
        hop = max(1, int(round(sample_rate * self.hop_ms / 1000.0)))
        if win < 2:
            raise InvalidConfig(f"window of {self.window_ms} ms is shorter than two samples")
        return win, hop


@dataclass(frozen=True)
class LldContours:
    """Per-frame descriptors; ``base`` and ``delta`` are (16, frame_count)."""

    base: np.ndarray
    delta: np.ndarray
    names: tuple[str, ...] = field(default=BASE_LLD_NAMES)

    @property
    def frame_count(self) -> int:
        return self.base.shape[1]

    def contour(self, name: str) -> np.ndarray:
        if name.endswith("_delta"):
            return self.delta[self.names.index(name[: -len("_delta")])]
        return self.base[self.names.index(name)]

    def stacked(self) -> np.ndarray:
        """All 32 contours in layout order."""
        return np.vstack([self.base, self.delta])


def _raw_frames(clip: AudioClip, params: FrameParams) -> np.ndarray:
    win, hop = params.sizes(clip.sample_rate)
    n = clip.samples.size
    if n < win:
        raise EmptySignal(f"clip of {n} samples is shorter than one {win}-sample window")
    count = (n - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(count)[:, None]
    return clip.samples[idx]


def frame_signal(clip: AudioClip, params: FrameParams = FrameParams()) -> np.ndarray:
    """Split ``clip`` into tapered frames, shape ``(frame_count, window_len)``."""
    frames = _raw_frames(clip, params)
    return frames * _WINDOWS[params.window_fn](frames.shape[1])[None, :]


def zero_crossing_rate(frames: np.ndarray) -> np.ndarray:
    # zero counts as positive so silence never "crosses"
    positive = frames >= 0
    return np.count_nonzero(positive[:, 1:] != positive[:, :-1], axis=1) / (frames.shape[1] - 1)


def rms_energy(frames: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(frames**2, axis=1))


def _normalized_autocorrelation(frames: np.ndarray) -> np.ndarray:
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, :n]
    r0 = r[:, :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rn = np.where(r0 > 1e-20, r / r0, 0.0)
    return rn


def pitch_and_hnr(
    frames: np.ndarray, sample_rate: int, window: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation F0 (0 when unvoiced) and harmonics-to-noise ratio in dB.

    ``frames`` should be tapered by ``window``. The F0 candidate is the
    highest local maximum of the normalized autocorrelation with lag inside
    the [50, 500] Hz band; the frame is voiced when that peak reaches 0.3.
    The lag is then re-centred and refined to sub-sample precision on the
    autocorrelation divided by the window's own autocorrelation, which
    removes the taper's pull towards short lags.
    """
    n = frames.shape[1]
    rn = _normalized_autocorrelation(frames)
    rw = _normalized_autocorrelation(np.ones((1, n)) if window is None else window[None, :])[0]
    lo = max(1, int(np.ceil(sample_rate / F0_MAX_HZ)))
    hi = min(n - 2, int(np.floor(sample_rate / F0_MIN_HZ)))
    f0 = np.zeros(frames.shape[0])
    hnr = np.full(frames.shape[0], -HNR_CLIP_DB)
    if hi < lo:
        return f0, hnr
    lags = np.arange(lo, hi + 1)
    for t in range(frames.shape[0]):
        r = rn[t]
        seg = r[lags]
        is_peak = (seg >= r[lags - 1]) & (seg >= r[lags + 1]) & (seg > 0)
        if np.any(is_peak):
            k = lags[is_peak][np.argmax(seg[is_peak])]
            peak = r[k]
        else:
            k = None
            peak = float(np.max(seg))
        if peak > 0:
            p = min(peak, 1.0 - 1e-12)
            hnr[t] = np.clip(10.0 * np.log10(p / (1.0 - p)), -HNR_CLIP_DB, HNR_CLIP_DB)
        if k is not None and peak >= VOICING_THRESHOLD:
            rc = r / np.maximum(rw, 1e-3)
            near = np.arange(max(lo, k - k // 4), min(hi, k + k // 4) + 1)
            k = int(near[np.argmax(rc[near])])
            a, b, c = rc[k - 1 : k + 2]
            denom = a - 2.0 * b + c
            shift = float(np.clip(0.5 * (a - c) / denom, -1.0, 1.0)) if denom < 0 else 0.0
            f0[t] = np.clip(sample_rate / (k + shift), F0_MIN_HZ, F0_MAX_HZ)
    return f0, hnr


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, nfft: int, n_filters: int = N_MEL_FILTERS) -> np.ndarray:
    """Triangular filters, equally spaced on the mel scale over [0, sr/2]."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (centre - lower)
    falling = (upper - freqs[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(frames: np.ndarray, sample_rate: int) -> np.ndarray:
    """MFCC 1-12 per tapered frame, shape ``(12, frame_count)``."""
    nfft = 1 << int(np.ceil(np.log2(frames.shape[1])))
    power = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2
    energies = power @ mel_filterbank(sample_rate, nfft).T
    cep = dct(np.log(np.maximum(energies, LOG_FLOOR)), type=2, norm="ortho", axis=1)
    return cep[:, 1 : N_MFCC + 1].T


def deltas(contours: np.ndarray, width: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    contours = np.atleast_2d(contours)
    n = contours.shape[1]
    padded = np.pad(contours, ((0, 0), (width, width)), mode="edge")
    num = np.zeros_like(contours, dtype=np.float64)
    for k in range(1, width + 1):
        num += k * (padded[:, width + k : width + k + n] - padded[:, width - k : width - k + n])
    return num / (2.0 * sum(k * k for k in range(1, width + 1)))


def compute_llds(clip: AudioClip, params: FrameParams = FrameParams()) -> LldContours:
    raw = _raw_frames(clip, params)
    window = _WINDOWS[params.window_fn](raw.shape[1])
    tapered = raw * window[None, :]
    f0, hnr = pitch_and_hnr(tapered, clip.sample_rate, window)
    base = np.vstack(
        [
            zero_crossing_rate(raw),
            rms_energy(raw),
            f0,
            hnr,
            mfcc(tapered, clip.sample_rate),
        ]
    )
    return LldContours(base=base, delta=deltas(base))


def functionals(contour) -> np.ndarray:
    """Twelve statistics of a contour, ordered as :data:`FUNCTIONAL_NAMES`.

    Moments are population moments; a constant contour has std, skewness,
    excess kurtosis, slope and regression error all equal to 0.
    """
    c = np.asarray(contour, dtype=np.float64).ravel()
    n = c.size
    if n == 0:
        raise EmptySignal("cannot compute functionals of an empty contour")
    mean = c.mean()
    lo, hi = c.min(), c.max()
    i_min, i_max = int(np.argmin(c)), int(np.argmax(c))
    span = n - 1
    relpos_min = i_min / span if span else 0.0
    relpos_max = i_max / span if span else 0.0

    if hi == lo:
        std = skew = kurt = 0.0
        slope, offset, mse = 0.0, float(c[0]), 0.0
    else:
        d = c - mean
        m2 = np.mean(d**2)
        std = np.sqrt(m2)
        skew = np.mean(d**3) / m2**1.5
        kurt = np.mean(d**4) / m2**2 - 3.0
        t = np.arange(n) / span
        tc = t - t.mean()
        slope = np.dot(tc, d) / np.dot(tc, tc)
        offset = mean - slope * t.mean()
        mse = np.mean((offset + slope * t - c) ** 2)

    return np.array(
        [mean, std, kurt, skew, lo, hi, relpos_min, relpos_max, hi - lo, offset, slope, mse],
        dtype=np.float64,
    )


def extract_features(clip: AudioClip, params: FrameParams = FrameParams()) -> np.ndarray:
    """384-dimensional feature vector of ``clip``."""
    contours = compute_llds(clip, params).stacked()
    vec = np.concatenate([functionals(c) for c in contours])
    if not np.all(np.isfinite(vec)):
        bad = [feature_names()[i] for i in np.flatnonzero(~np.isfinite(vec))[:5]]
        raise NumericalError(f"non-finite feature values: {', '.join(bad)}")
    return vec
