"""FM-CW waveform model and baseband beat-signal synthesis.

A triangular frequency modulation sweeps the carrier by delta_f over each ramp
of duration t_ramp.  Dechirping a point echo at range R and radial velocity v
produces per-ramp sinusoids at

    f_up   = (delta_f / t_ramp) * (2R/c) + |f_D|
    f_down = (delta_f / t_ramp) * (2R/c) - |f_D|,     f_D = 2 v / wavelength

which is the model this module synthesizes directly at baseband: the RF chain
is never sampled.  Vehicle passes are simulated as point scatterers moving at
constant speed under a roadside radar, weighted by a raised-cosine antenna
footprint along the lane.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, fixed

CLASS_ORDER = "ABCDEG"


class VehicleClass(enum.Enum):
    """Vehicle categories, keyed by their single-letter labels."""

    CAR = "A"
    CAR_TRAILER = "B"
    TRUCK = "C"
    CARGO_TRUCK = "D"
    BUS = "E"
    MOTORCYCLE = "G"

    @property
    def index(self) -> int:
        return CLASS_ORDER.index(self.value)

    @classmethod
    def from_label(cls, label: "str | VehicleClass") -> "VehicleClass":
        if isinstance(label, VehicleClass):
            return label
        try:
            return cls(label.upper())
        except ValueError:
            raise ValueError(f"unknown vehicle class {label!r}, expected one of {CLASS_ORDER}") from None


class RampPolarity(enum.Enum):
    UP = "up"
    DOWN = "down"


class NyquistError(ValueError):
    """The requested scene produces beat frequencies the sampler cannot hold."""


@dataclass(frozen=True)
class Geometry:
    h: float = 5.3                       # mount height above the lane [m]
    alpha: float = math.radians(32.0)    # antenna depression angle [rad]

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("mount height must be positive")


@dataclass(frozen=True)
class RadarParams:
    """Waveform, sampling and mounting parameters of the roadside radar."""

    f0: float = 24e9            # carrier frequency [Hz]
    delta_f: float = 120e6      # sweep bandwidth [Hz]
    t_ramp: float = 0.040       # single ramp (sweep interval) duration [s]
    samples_per_ramp: int = 512
    fft_size: int = 512
    amplitude: float = 1.0      # transmit amplitude, dimensionless
    c: float = SPEED_OF_LIGHT
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.delta_f <= 0:
            raise ValueError("sweep bandwidth must be positive")
        if self.t_ramp <= 0:
            raise ValueError("ramp duration must be positive")
        if self.samples_per_ramp < 2:
            raise ValueError("need at least 2 samples per ramp")
        if self.fft_size < self.samples_per_ramp:
            raise ValueError("fft_size must be >= samples_per_ramp")

    @property
    def sample_rate(self) -> float:
        """Baseband sampling rate [Hz]."""
        return self.samples_per_ramp / self.t_ramp

    @property
    def wavelength(self) -> float:
        return self.c / self.f0

    @property
    def ramp_slope(self) -> float:
        """Sweep rate delta_f / t_ramp [Hz/s]."""
        return self.delta_f / self.t_ramp

    @property
    def bin_hz(self) -> float:
        """Spectral bin width of the per-ramp FFT [Hz]."""
        return self.sample_rate / self.fft_size

    @property
    def range_resolution(self) -> float:
        """c / (2 delta_f) [m]."""
        return self.c / (2.0 * self.delta_f)

    def to_dict(self) -> dict:
        return {
            "f0": self.f0,
            "delta_f": self.delta_f,
            "t_ramp": self.t_ramp,
            "samples_per_ramp": self.samples_per_ramp,
            "fft_size": self.fft_size,
            "amplitude": self.amplitude,
            "c": self.c,
            "geometry": {"h": self.geometry.h, "alpha": self.geometry.alpha},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RadarParams":
        d = dict(d)
        geo = d.pop("geometry", None)
        if geo is not None:
            d["geometry"] = Geometry(**geo)
        return cls(**d)


def tri(t):
    """Unit triangular pulse: peaks at 1 for t=0, zero outside the open interval (-1, 1)."""
    t = np.asarray(t, dtype=float)
    rising = (t > -1.0) & (t <= 0.0)
    falling = (t > 0.0) & (t < 1.0)
    out = np.where(rising, 1.0 + t, np.where(falling, 1.0 - t, 0.0))
    return out if out.ndim else float(out)


def modulating_frequency(t, p: RadarParams):
    """Instantaneous frequency deviation of the transmit sweep at time t.

    Symmetric triangle wave with period 2*t_ramp: minimum -delta_f/2 at even
    multiples of t_ramp, maximum +delta_f/2 at odd multiples, slope
    +-delta_f/t_ramp in between.
    """
    tm = np.mod(t, 2.0 * p.t_ramp)
    out = p.delta_f * (np.asarray(tri((tm - p.t_ramp) / p.t_ramp)) - 0.5)
    return out if out.ndim else float(out)


def instantaneous_tx_frequency(t, p: RadarParams):
    """Transmit RF frequency f0 + m(t); reference only, RF is never sampled."""
    return p.f0 + modulating_frequency(t, p)


def beat_frequencies(target_range, v_radial, p: RadarParams):
    """Per-ramp beat frequencies (up, down) of a point target.

    v_radial is signed with receding targets positive; only its magnitude
    enters, as the Doppler shift adds on the up-ramp and subtracts on the
    down-ramp regardless of direction.  The down-ramp value may be negative;
    a real-valued beat signal folds it to its magnitude.
    """
    target_range = np.asarray(target_range, dtype=float)
    if np.any(target_range < 0):
        raise ValueError("target range must be nonnegative")
    f_range = p.ramp_slope * (2.0 * target_range / p.c)
    f_doppler = np.abs(2.0 * np.asarray(v_radial, dtype=float) / p.wavelength)
    up = f_range + f_doppler
    down = f_range - f_doppler
    if up.ndim == 0:
        return float(up), float(down)
    return up, down


def invert_beat(f_b_up, f_b_down, p: RadarParams):
    """Recover (range, radial speed) from the up/down beat pair.

    Exact algebraic inverse of beat_frequencies: the half-sum is the delay
    term, the half-difference the Doppler magnitude.
    """
    f_range = 0.5 * (np.asarray(f_b_up, float) + np.asarray(f_b_down, float))
    if np.any(f_range < 0):
        raise ValueError("beat pair implies a negative range")
    tau = f_range / p.ramp_slope
    target_range = 0.5 * p.c * tau
    f_doppler = 0.5 * np.abs(np.asarray(f_b_up, float) - np.asarray(f_b_down, float))
    v_radial = 0.5 * p.wavelength * f_doppler
    if np.ndim(target_range) == 0:
        return float(target_range), float(v_radial)
    return target_range, v_radial


@dataclass(frozen=True)
class Scatterer:
    """One reflecting point of a vehicle."""

    along_track_offset: float   # position along the vehicle from the front [m]
    height: float = 0.0         # above road [m]; carried with the layout, not in the range model
    amplitude: float = 1.0      # dimensionless reflectivity

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("scatterer amplitude must be >= 0")
        if self.height < 0:
            raise ValueError("scatterer height must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """One vehicle pass: constant speed, point scatterers, additive noise."""

    class_label: VehicleClass
    speed: float                # [m/s], > 0
    entry_distance: float       # horizontal distance behind the radar at t=0 [m]
    footprint_length: float     # illuminated stretch of lane [m]
    scatterers: tuple
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("scenario speed must be positive")
        if self.footprint_length <= 0:
            raise ValueError("footprint length must be positive")
        if len(self.scatterers) == 0:
            raise ValueError("scenario needs at least one scatterer")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        object.__setattr__(self, "scatterers", tuple(self.scatterers))


@dataclass
class BeatSignal:
    """Sampled baseband beat waveform with its ramp framing."""

    samples: np.ndarray
    sample_rate: float
    first_ramp: RampPolarity = RampPolarity.UP
    samples_per_ramp: int = 512
    label: VehicleClass | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("beat signal samples must be one-dimensional")
        if self.samples_per_ramp < 1:
            raise ValueError("samples_per_ramp must be >= 1")

    @property
    def num_full_ramps(self) -> int:
        return self.samples.size // self.samples_per_ramp


def footprint_envelope(d, entry_distance: float, footprint_length: float):
    """Raised-cosine illumination weight over [entry, entry + footprint]."""
    u = (np.asarray(d, float) - entry_distance) / footprint_length
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * u)
    return np.where((u > 0.0) & (u < 1.0), w, 0.0)


def _ramp_polarity_signs(n_ramps: int, first_ramp: RampPolarity) -> np.ndarray:
    """+1 for up ramps, -1 for down ramps."""
    signs = np.ones(n_ramps)
    start = 0 if first_ramp is RampPolarity.UP else 1
    signs[(np.arange(n_ramps) + start) % 2 == 1] = -1.0
    return signs


def synthesize_beat_signal(
    scenario: Scenario,
    p: RadarParams,
    first_ramp: RampPolarity = RampPolarity.UP,
) -> BeatSignal:
    """Simulate the baseband beat signal of one vehicle pass.

    Geometry is frozen at each ramp midpoint (quasi-static: target motion
    within one ramp is far below the range resolution).  For scatterer k at
    horizontal distance d_k(t) = entry + offset_k + speed*t the slant range is
    R = sqrt(h^2 + d^2) and the radial speed speed*d/R, receding positive.
    Each ramp gets the polarity-matched beat tone per scatterer, weighted by
    reflectivity and the footprint envelope; contributions whose beat
    frequency would alias are suppressed, standing in for the receiver's
    anti-alias lowpass.  Duration is the smallest even ramp count covering
    footprint_length / speed.
    """
    fs = p.sample_rate
    nyquist = fs / 2.0
    h = p.geometry.h

    # Guard on the dominant response: at the envelope peak the up-beat must be
    # representable, otherwise the whole signature would be filtered away.
    d_peak = scenario.entry_distance + scenario.footprint_length / 2.0
    r_peak = math.hypot(h, d_peak)
    f_up_peak, _ = beat_frequencies(r_peak, scenario.speed * d_peak / r_peak, p)
    if f_up_peak >= nyquist:
        raise NyquistError(
            f"up-ramp beat {f_up_peak:.0f} Hz at the footprint center exceeds "
            f"the Nyquist limit {nyquist:.0f} Hz; reduce speed or footprint"
        )

    spr = p.samples_per_ramp
    pass_duration = scenario.footprint_length / scenario.speed
    n_ramps = int(math.ceil(pass_duration / p.t_ramp))
    n_ramps += n_ramps % 2
    n_ramps = max(n_ramps, 2)

    offsets = np.array([s.along_track_offset for s in scenario.scatterers])
    amps = np.array([s.amplitude for s in scenario.scatterers])

    rng = np.random.default_rng(scenario.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, offsets.size)

    t_mid = (np.arange(n_ramps) + 0.5) * p.t_ramp                      # [r]
    d = scenario.entry_distance + offsets[None, :] + scenario.speed * t_mid[:, None]  # [r, k]
    slant = np.hypot(h, d)
    v_radial = scenario.speed * d / slant
    f_range = p.ramp_slope * (2.0 * slant / p.c)
    f_doppler = 2.0 * v_radial / p.wavelength
    signs = _ramp_polarity_signs(n_ramps, first_ramp)
    f_beat = f_range + signs[:, None] * f_doppler                      # [r, k]

    weights = amps[None, :] * footprint_envelope(d, scenario.entry_distance, scenario.footprint_length)
    weights = np.where(np.abs(f_beat) < nyquist, weights, 0.0)

    t_local = np.arange(spr) / fs
    args = 2.0 * np.pi * f_beat[:, :, None] * t_local[None, None, :] + phases[None, :, None]
    samples = np.einsum("rk,rks->rs", weights, np.cos(args)).reshape(-1)

    if scenario.noise_sigma > 0:
        samples = samples + rng.normal(0.0, scenario.noise_sigma, samples.shape)

    return BeatSignal(
        samples=samples,
        sample_rate=fs,
        first_ramp=first_ramp,
        samples_per_ramp=spr,
        label=scenario.class_label,
    )


@dataclass(frozen=True)
class PointTarget:
    """Fixed-range, fixed-velocity reflector for calibration signals."""

    target_range: float
    v_radial: float = 0.0
    amplitude: float = 1.0


def synthesize_point_targets(
    targets: Sequence[PointTarget],
    n_ramps: int,
    p: RadarParams,
    *,
    noise_sigma: float = 0.0,
    seed: int = 0,
    first_ramp: RampPolarity = RampPolarity.UP,
) -> BeatSignal:
    """Beat signal of motionless beat tones: each target contributes its exact
    up/down-ramp frequencies on every ramp, with no footprint weighting.

    This is the calibration companion of synthesize_beat_signal: with the
    geometry frozen, FFT peaks must land on the predicted bins.
    """
    if n_ramps < 2:
        raise ValueError("need at least one up/down ramp pair")
    if not targets:
        raise ValueError("need at least one point target")
    fs = p.sample_rate
    spr = p.samples_per_ramp

    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, len(targets))

    ranges = np.array([t.target_range for t in targets])
    vels = np.array([t.v_radial for t in targets])
    amps = np.array([t.amplitude for t in targets])
    up, down = beat_frequencies(ranges, vels, p)
    if np.any(np.maximum(np.abs(up), np.abs(down)) >= fs / 2.0):
        raise NyquistError("point-target beat frequency exceeds the Nyquist limit")

    signs = _ramp_polarity_signs(n_ramps, first_ramp)
    f_beat = np.where(signs[:, None] > 0, up[None, :], down[None, :])    # [r, k]
    t_local = np.arange(spr) / fs
    args = 2.0 * np.pi * f_beat[:, :, None] * t_local[None, None, :] + phases[None, :, None]
    samples = np.einsum("k,rks->rs", amps, np.cos(args)).reshape(-1)
    if noise_sigma > 0:
        samples = samples + rng.normal(0.0, noise_sigma, samples.shape)
    return BeatSignal(samples=samples, sample_rate=fs, first_ramp=first_ramp, samples_per_ramp=spr)


@dataclass(frozen=True)
class ClassProfile:
    """Per-class simulation ranges the scenario sampler draws from."""

    length_range: tuple     # vehicle length [m]
    speed_range: tuple      # [m/s]
    reflectivity_range: tuple
    height_range: tuple = (0.3, 2.5)
    scatterer_spacing: float = 1.2   # ~1 scatterer per this many metres
    cluster_gap: float = 0.0         # fraction of length left empty mid-vehicle (cab/trailer gap)
    trailer_gain: float = 1.0        # reflectivity multiplier behind the gap


# Invented simulation knobs, not measured truth: lengths and speeds are
# plausible highway figures, while reflectivity, scatterer density and the
# cab/trailer layout separate body types that share kinematics (a towed
# trailer reflects faintly, a bus is one long bright slab, a cargo truck
# carries a dense strong container).
DEFAULT_PROFILES: Mapping[VehicleClass, ClassProfile] = {
    VehicleClass.CAR: ClassProfile((3.5, 5.0), (25.0, 36.0), (0.10, 0.18), (0.3, 1.4), 1.0),
    VehicleClass.CAR_TRAILER: ClassProfile((8.0, 12.0), (22.0, 33.0), (0.15, 0.28), (0.3, 2.4), 0.8, 0.28, 0.5),
    VehicleClass.TRUCK: ClassProfile((10.0, 14.0), (20.0, 25.0), (0.18, 0.34), (0.5, 3.2), 1.05),
    VehicleClass.CARGO_TRUCK: ClassProfile((14.0, 18.0), (20.0, 25.0), (0.24, 0.42), (0.5, 3.5), 0.85, 0.10),
    VehicleClass.BUS: ClassProfile((11.0, 14.0), (22.0, 28.0), (0.45, 0.70), (0.5, 3.2), 0.7),
    VehicleClass.MOTORCYCLE: ClassProfile((1.8, 2.5), (25.0, 38.0), (0.02, 0.05), (0.3, 1.2), 0.8),
}


@dataclass(frozen=True)
class ProfileTable:
    """Scenario sampling configuration shared across classes."""

    profiles: Mapping[VehicleClass, ClassProfile] = field(
        default_factory=lambda: dict(DEFAULT_PROFILES)
    )
    entry_range: tuple = (3.0, 8.0)   # horizontal distance of the front at t=0 [m]
    footprint_length: float = 30.0
    v_min: float = 10.0               # global clamps applied after the class draw
    v_max: float = 38.0
    snr_db: float = 20.0              # peak signal amplitude over noise sigma


def sample_vehicle_scenario(
    class_label: "str | VehicleClass",
    seed: int,
    profiles: ProfileTable | None = None,
) -> Scenario:
    """Draw one labeled vehicle pass, deterministic under (class, seed).

    Speed is drawn inside the class range then clamped to the global
    [v_min, v_max] band that keeps beat frequencies representable.  Scatterer
    count scales with drawn length; front and rear corners always reflect.
    """
    vclass = VehicleClass.from_label(class_label)
    table = profiles if profiles is not None else ProfileTable()
    try:
        prof = table.profiles[vclass]
    except KeyError:
        raise ValueError(f"profile table has no entry for class {vclass.value}") from None

    rng = np.random.default_rng([int(seed), vclass.index])
    speed = float(rng.uniform(*prof.speed_range))
    speed = min(max(speed, table.v_min), table.v_max)
    length = float(rng.uniform(*prof.length_range))
    entry = float(rng.uniform(*table.entry_range))

    n_scat = max(2, int(round(length / prof.scatterer_spacing)) + int(rng.integers(-1, 2)))
    interior = np.sort(rng.uniform(0.0, length, max(n_scat - 2, 0)))
    offsets = np.concatenate(([0.0], interior, [length]))
    if prof.cluster_gap > 0:
        # Push interior points out of the mid-vehicle gap, toward cab or trailer.
        gap_lo = length * (0.5 - prof.cluster_gap / 2.0)
        gap_hi = length * (0.5 + prof.cluster_gap / 2.0)
        in_gap = (offsets > gap_lo) & (offsets < gap_hi)
        offsets = np.where(in_gap & (offsets < length / 2.0), gap_lo, offsets)
        offsets = np.where(in_gap & (offsets >= length / 2.0), gap_hi, offsets)
    amplitudes = rng.uniform(*prof.reflectivity_range, offsets.size)
    if prof.trailer_gain != 1.0:
        amplitudes = np.where(offsets > length * 0.5, amplitudes * prof.trailer_gain, amplitudes)
    heights = rng.uniform(*prof.height_range, offsets.size)

    noise_sigma = float(np.sum(amplitudes)) * 10.0 ** (-table.snr_db / 20.0)
    scatterers = tuple(
        Scatterer(along_track_offset=float(o), height=float(h), amplitude=float(a))
        for o, h, a in zip(offsets, heights, amplitudes)
    )
    return Scenario(
        class_label=vclass,
        speed=speed,
        entry_distance=entry,
        footprint_length=table.footprint_length,
        scatterers=scatterers,
        noise_sigma=noise_sigma,
        seed=int(seed),
    )
