"""Range-Doppler spectrograms and the fixed-shape 3-channel input tensor.

The beat signal is cut into back-to-back, non-overlapping windows of one ramp
each; the FFT modulus of every window becomes one spectrogram column, with up
and down ramps collected into separate matrices.  Stacking up, down and their
average, zero-padding the time axis to a fixed width and subtracting the
train-set mean yields the classifier input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fourier
from .radar import BeatSignal, RadarParams, RampPolarity, VehicleClass


class PadOverflowError(ValueError):
    """Spectrogram wider than the tensor target; cropping must be explicit."""


@dataclass
class Spectrogram:
    """One-sided FFT moduli of the ramp windows of one polarity."""

    values: np.ndarray          # [freq_bins, num_columns], nonnegative
    bin_hz: float
    ramp_polarity: RampPolarity

    @property
    def freq_bins(self) -> int:
        return self.values.shape[0]

    @property
    def num_columns(self) -> int:
        return self.values.shape[1]


@dataclass
class RdTensor:
    """Fixed-shape network input: channels (up, down, average) x bins x width."""

    values: np.ndarray          # [3, height, width] float32
    label: VehicleClass | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[0] != 3:
            raise ValueError("tensor must have shape [3, height, width]")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def segment_ramps(sig: BeatSignal):
    """Split a beat signal into its up- and down-ramp windows.

    Windows are consecutive, disjoint stretches of samples_per_ramp samples,
    assigned alternately starting from sig.first_ramp; a trailing partial
    window is discarded.
    """
    spr = sig.samples_per_ramp
    n_full = sig.samples.size // spr
    if n_full < 2:
        raise ValueError(
            f"signal holds {n_full} full ramp(s); need at least one up/down pair"
        )
    windows = sig.samples[: n_full * spr].reshape(n_full, spr)
    if sig.first_ramp is RampPolarity.UP:
        return windows[0::2], windows[1::2]
    return windows[1::2], windows[0::2]


def fft_modulus(window, fft_size: int) -> np.ndarray:
    """One-sided FFT modulus |X[k]|, k = 0..fft_size/2, of one rectangular
    (untapered) window, zero-padded up to fft_size."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    n = window.shape[-1]
    if n > fft_size:
        raise ValueError(f"window of {n} samples exceeds fft_size {fft_size}")
    if n < fft_size:
        window = np.pad(window, ((0, 0), (0, fft_size - n)))
    mods = np.abs(fourier.fft(window)[..., : fft_size // 2 + 1])
    return mods[0] if mods.shape[0] == 1 else mods


def build_spectrograms(sig: BeatSignal, p: RadarParams):
    """Up- and down-ramp spectrograms of a beat signal; column j is the FFT
    modulus of the j-th window of that polarity."""
    up_windows, down_windows = segment_ramps(sig)
    bin_hz = sig.sample_rate / p.fft_size
    up = Spectrogram(
        values=np.atleast_2d(fft_modulus(up_windows, p.fft_size)).T.copy(),
        bin_hz=bin_hz,
        ramp_polarity=RampPolarity.UP,
    )
    down = Spectrogram(
        values=np.atleast_2d(fft_modulus(down_windows, p.fft_size)).T.copy(),
        bin_hz=bin_hz,
        ramp_polarity=RampPolarity.DOWN,
    )
    return up, down


def build_tensor(
    up: Spectrogram,
    down: Spectrogram,
    target_width: int,
    *,
    allow_crop: bool = False,
    freq_range: tuple | None = None,
    label: VehicleClass | None = None,
) -> RdTensor:
    """Stack up/down/average channels and zero-pad columns to target_width.

    Widths may differ by one (the shorter side gets a zero column); larger
    mismatches are an error.  Inputs wider than the target raise
    PadOverflowError unless cropping is explicitly allowed.  freq_range,
    a (lo, hi) bin window, crops rows first; this is how square network
    inputs (e.g. 227x227) are produced from the 257-bin spectra.
    """
    a, b = up.values, down.values
    if a.shape[0] != b.shape[0]:
        raise ValueError("up/down spectrograms disagree on frequency bins")
    if freq_range is not None:
        lo, hi = freq_range
        if not (0 <= lo < hi <= a.shape[0]):
            raise ValueError(f"frequency window {freq_range} outside 0..{a.shape[0]}")
        a = a[lo:hi]
        b = b[lo:hi]
    if abs(a.shape[1] - b.shape[1]) > 1:
        raise ValueError("up/down spectrograms differ by more than one column")
    if a.shape[1] < b.shape[1]:
        a = np.pad(a, ((0, 0), (0, 1)))
    elif b.shape[1] < a.shape[1]:
        b = np.pad(b, ((0, 0), (0, 1)))

    width = a.shape[1]
    if width > target_width:
        if not allow_crop:
            raise PadOverflowError(
                f"spectrogram width {width} exceeds target {target_width}"
            )
        a = a[:, :target_width]
        b = b[:, :target_width]
        width = target_width

    height = a.shape[0]
    values = np.zeros((3, height, target_width), dtype=np.float32)
    values[0, :, :width] = a
    values[1, :, :width] = b
    values[2] = 0.5 * (values[0] + values[1])
    return RdTensor(values=values, label=label)


def signal_to_tensor(
    sig: BeatSignal,
    p: RadarParams,
    target_width: int,
    *,
    allow_crop: bool = False,
    freq_range: tuple | None = None,
) -> RdTensor:
    """Full signal-to-input pipeline: segment, transform, stack, pad."""
    up, down = build_spectrograms(sig, p)
    return build_tensor(
        up, down, target_width,
        allow_crop=allow_crop, freq_range=freq_range, label=sig.label,
    )


def compute_mean_tensor(train_tensors) -> RdTensor:
    """Elementwise mean of the training tensors (accumulated in float64)."""
    tensors = list(train_tensors)
    if not tensors:
        raise ValueError("cannot average an empty tensor list")
    shape = tensors[0].values.shape
    for t in tensors[1:]:
        if t.values.shape != shape:
            raise ValueError(f"tensor shape {t.values.shape} != {shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for t in tensors:
        acc += t.values
    return RdTensor(values=(acc / len(tensors)).astype(np.float32))


def mean_normalize(t: RdTensor, mean: RdTensor) -> RdTensor:
    """Subtract the train-set mean tensor; applied to train and test alike."""
    if t.values.shape != mean.values.shape:
        raise ValueError(f"tensor shape {t.values.shape} != mean shape {mean.values.shape}")
    return RdTensor(values=t.values - mean.values, label=t.label)


def export_pgm(matrix, log_scale: bool = False) -> bytes:
    """Render a spectrogram or tensor channel as a binary (P5) PGM.

    Values are min-max scaled to 0..255 (after an optional 20*log10(x+eps)
    mapping); a constant matrix renders all-black.  Frequency bin 0 sits on
    the bottom pixel row.
    """
    if isinstance(matrix, Spectrogram):
        matrix = matrix.values
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("PGM export needs a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("PGM export needs finite entries")
    if log_scale:
        m = 20.0 * np.log10(m + 1e-12)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        pixels = np.round((m - lo) * (255.0 / (hi - lo))).astype(np.uint8)
    else:
        pixels = np.zeros(m.shape, dtype=np.uint8)
    pixels = pixels[::-1, :]    # bin 0 at the bottom
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
