"""HRIR/HRTF containers, the on-disk format, and synthetic subjects.

Container format
----------------
Either a directory holding ``manifest.json`` and ``payload.bin``, or a
single file laid out as::

    uint32 little-endian manifest length | manifest JSON (UTF-8) | payload

The HRIR manifest carries ``sample_rate`` (int, Hz), ``num_positions``,
``ir_length`` and ``positions`` (``[azimuth_deg, elevation_deg, radius_m]``
per row). The payload is position-major, left ear before right ear, taps
contiguous, little-endian float32. Paths without a suffix, or existing
directories, use the directory form.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import sh
from .errors import ContainerError, DataError

FORMAT_TAG = "hrtf-container/1"
LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class SphericalDirection:
    azimuth: float
    elevation: float
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2.0 * math.pi))
        object.__setattr__(
            self, "elevation", float(np.clip(self.elevation, -math.pi / 2, math.pi / 2))
        )
        object.__setattr__(self, "radius", float(self.radius))


def as_positions(positions):
    """Normalise positions to an (P, 3) array: azimuth wrapped, elevation clamped."""
    if hasattr(positions, "azimuth"):
        positions = [positions]
    if len(positions) and hasattr(positions[0], "azimuth"):
        positions = [[p.azimuth, p.elevation, p.radius] for p in positions]
    arr = np.array(positions, dtype=float)
    if arr.ndim == 1 and arr.size in (2, 3):
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise DataError(f"positions must be (P, 2|3), got {arr.shape}")
    if arr.shape[1] == 2:
        arr = np.hstack([arr, np.ones((arr.shape[0], 1))])
    arr[:, 0] = np.mod(arr[:, 0], 2.0 * math.pi)
    arr[:, 1] = np.clip(arr[:, 1], -math.pi / 2, math.pi / 2)
    if not np.all(arr[:, 2] > 0):
        raise DataError("radii must be > 0")
    return arr


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _freeze(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HrirSet:
    """Impulse responses for both ears, ``irs`` shaped (P, 2, T)."""

    sample_rate: int
    positions: np.ndarray
    irs: np.ndarray

    def __post_init__(self):
        pos = as_positions(self.positions)
        irs = np.array(self.irs, dtype=float)
        if irs.ndim != 3 or irs.shape[1] != 2:
            raise DataError(f"irs must be (P, 2, T), got {irs.shape}")
        if irs.shape[0] < 1 or irs.shape[0] != pos.shape[0]:
            raise DataError("irs and positions disagree on P")
        if not _is_pow2(irs.shape[2]):
            raise DataError(f"IR length {irs.shape[2]} is not a power of two")
        if not np.all(np.isfinite(irs)):
            raise DataError("NaN or Inf in impulse responses")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "irs", _freeze(irs))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def from_ears(cls, sample_rate, positions, left_irs, right_irs):
        left, right = np.asarray(left_irs), np.asarray(right_irs)
        if left.shape != right.shape:
            raise DataError("left and right IR matrices differ in shape")
        return cls(sample_rate, positions, np.stack([left, right], axis=1))

    @property
    def left_irs(self):
        return self.irs[:, LEFT]

    @property
    def right_irs(self):
        return self.irs[:, RIGHT]

    @property
    def num_positions(self):
        return self.irs.shape[0]

    @property
    def ir_length(self):
        return self.irs.shape[2]

    def directions(self):
        return [SphericalDirection(*row) for row in self.positions]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return HrirSet(self.sample_rate, self.positions[idx], self.irs[idx])

    def with_irs(self, irs):
        return HrirSet(self.sample_rate, self.positions, irs)


@dataclass(frozen=True)
class HrtfSet:
    """Frequency responses as magnitude and phase, each (P, 2, B)."""

    positions: np.ndarray
    frequencies: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        pos = as_positions(self.positions)
        freqs = np.array(self.frequencies, dtype=float)
        mag = np.array(self.magnitude, dtype=float)
        ph = np.array(self.phase, dtype=float)
        if mag.shape != ph.shape or mag.ndim != 3 or mag.shape[1] != 2:
            raise DataError("magnitude/phase must share a (P, 2, B) shape")
        if mag.shape[0] != pos.shape[0] or mag.shape[2] != freqs.size:
            raise DataError("HRTF dimensions disagree with positions or frequencies")
        if np.any(mag < 0):
            raise DataError("negative magnitudes")
        if freqs.size > 1 and not np.all(np.diff(freqs) > 0):
            raise DataError("frequencies must be strictly increasing")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "frequencies", _freeze(freqs))
        object.__setattr__(self, "magnitude", _freeze(mag))
        object.__setattr__(self, "phase", _freeze(ph))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_positions(self):
        return self.magnitude.shape[0]

    @property
    def num_bins(self):
        return self.magnitude.shape[2]

    @property
    def left(self):
        return self.magnitude[:, LEFT] * np.exp(1j * self.phase[:, LEFT])

    @property
    def right(self):
        return self.magnitude[:, RIGHT] * np.exp(1j * self.phase[:, RIGHT])

    def magnitude_db(self):
        return sh.to_db(self.magnitude)

    def db_field(self):
        """dB magnitudes rearranged as (P, B, 2) for SH analysis."""
        return np.transpose(self.magnitude_db(), (0, 2, 1))

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return HrtfSet(self.positions[idx], self.frequencies, self.magnitude[idx],
                       self.phase[idx], self.sample_rate)

    def with_db_field(self, db_field, positions=None, phase=None):
        mag = np.transpose(sh.from_db(db_field), (0, 2, 1))
        return HrtfSet(self.positions if positions is None else positions,
                       self.frequencies, mag, self.phase if phase is None else phase,
                       self.sample_rate)


# ------------------------------------------------------------------ transforms


def hrir_to_hrtf(hrirs):
    """Real FFT of every IR; B = T/2 + 1 bins, DC first."""
    t = hrirs.ir_length
    if not _is_pow2(t):
        raise DataError(f"IR length {t} is not a power of two")
    spec = np.fft.rfft(hrirs.irs, axis=2)
    freqs = np.fft.rfftfreq(t, 1.0 / hrirs.sample_rate)
    return HrtfSet(hrirs.positions, freqs, np.abs(spec), np.angle(spec), hrirs.sample_rate)


def hrtf_to_hrir(hrtfs):
    t = 2 * (hrtfs.num_bins - 1)
    spec = hrtfs.magnitude * np.exp(1j * hrtfs.phase)
    irs = np.fft.irfft(spec, n=t, axis=2)
    return HrirSet(hrtfs.sample_rate, hrtfs.positions, irs)


# ------------------------------------------------------------------ container


def write_container(path, manifest, payload):
    """Write ``manifest`` + raw ``payload`` bytes to ``path`` (dir or file)."""
    if path is None or str(path) == "":
        raise ContainerError("empty output path")
    path = Path(path)
    manifest = dict(manifest, format=FORMAT_TAG)
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    try:
        if path.is_dir() or path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            (path / "manifest.json").write_bytes(text)
            (path / "payload.bin").write_bytes(payload)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(struct.pack("<I", len(text)) + text + payload)
    except OSError as exc:
        raise ContainerError(f"cannot write {path}: {exc}") from exc


def read_container(path):
    path = Path(path)
    try:
        if path.is_dir():
            text = (path / "manifest.json").read_bytes()
            payload = (path / "payload.bin").read_bytes()
        else:
            raw = path.read_bytes()
            if len(raw) < 4:
                raise ContainerError(f"{path}: truncated header")
            (n,) = struct.unpack("<I", raw[:4])
            if 4 + n > len(raw):
                raise ContainerError(f"{path}: manifest length exceeds file size")
            text, payload = raw[4:4 + n], raw[4 + n:]
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    try:
        manifest = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: malformed manifest ({exc})") from None
    if not isinstance(manifest, dict):
        raise ContainerError(f"{path}: manifest is not an object")
    return manifest, payload


def save_container(hrirs, path):
    """Write an HrirSet. Identical sets produce byte-identical files."""
    pos = hrirs.positions
    manifest = {
        "kind": "hrir",
        "sample_rate": int(hrirs.sample_rate),
        "num_positions": int(hrirs.num_positions),
        "ir_length": int(hrirs.ir_length),
        "positions": [
            [math.degrees(a), math.degrees(e), float(r)] for a, e, r in pos.tolist()
        ],
    }
    write_container(path, manifest, hrirs.irs.astype("<f4").tobytes())


def load_container(path):
    manifest, payload = read_container(path)
    try:
        fs = int(manifest["sample_rate"])
        p = int(manifest["num_positions"])
        t = int(manifest["ir_length"])
        pos = np.asarray(manifest["positions"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed manifest ({exc!r})") from None
    if manifest.get("kind", "hrir") != "hrir":
        raise ContainerError(f"{path}: container kind {manifest['kind']!r} is not 'hrir'")
    if pos.shape != (p, 3):
        raise ContainerError(f"{path}: positions shape {pos.shape} != ({p}, 3)")
    expected = p * 2 * t * 4
    if len(payload) != expected:
        raise ContainerError(
            f"{path}: payload holds {len(payload)} bytes, manifest implies {expected}"
        )
    irs = np.frombuffer(payload, dtype="<f4").reshape(p, 2, t).astype(float)
    if not np.all(np.isfinite(irs)):
        raise ContainerError(f"{path}: NaN or Inf in payload")
    positions = np.column_stack([np.radians(pos[:, 0]), np.radians(pos[:, 1]), pos[:, 2]])
    try:
        return HrirSet(fs, positions, irs)
    except DataError as exc:
        raise ContainerError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- subsampling

SUPPORTED_SPARSITY = (27, 18, 8, 4, 3)


def farthest_point_indices(vectors, count, start):
    """Greedy farthest-point order over unit ``vectors``, starting at ``start``.

    Ties go to the lowest index.
    """
    vectors = np.asarray(vectors, dtype=float)
    chosen = [int(start)]
    closest = vectors @ vectors[start]
    for _ in range(count - 1):
        cand = np.where(np.isin(np.arange(len(vectors)), chosen), np.inf, closest)
        nxt = int(np.argmin(cand))
        chosen.append(nxt)
        closest = np.maximum(closest, vectors @ vectors[nxt])
    return chosen


def subsample_indices(positions, count, seed):
    n = as_positions(positions).shape[0]
    if not 1 <= count <= n:
        raise DataError(f"count {count} outside [1, {n}]")
    if count == n:
        return np.arange(n)
    start = int(np.random.default_rng(seed).integers(n))
    idx = farthest_point_indices(sh.unit_vectors(positions), count, start)
    return np.sort(np.asarray(idx))


def subsample_positions(hrirs, count, seed):
    """Keep ``count`` well-spread positions (farthest-point sampling)."""
    idx = subsample_indices(hrirs.positions, count, seed)
    if len(idx) == hrirs.num_positions:
        return hrirs
    return hrirs.subset(idx)


# ---------------------------------------------------------- synthetic subjects


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic subject generator.

    ``seed`` drives the subject-specific part; ``population_seed`` the
    template shared by every subject of a cohort.
    """

    true_sh_order: int = 5
    spectral_smoothness: float = 4.0
    head_radius: float = 0.0875
    speed_of_sound: float = 343.0
    seed: int = 0
    population_seed: int = 0
    sample_rate: int = 48000
    ir_length: int = 256
    spatial_db: float = 6.0
    subject_spread: float = 0.5
    head_shadow_db: float = 8.0
    onset_delay: float = 24.0

    def __post_init__(self):
        if self.true_sh_order < 0:
            raise ValueError("true_sh_order must be >= 0")
        if not _is_pow2(self.ir_length):
            raise ValueError("ir_length must be a power of two")

    def replace(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


def woodworth_itd(lateral_angle, head_radius=0.0875, speed_of_sound=343.0):
    """Spherical-head ITD (a/c)(theta + sin theta), positive for sources on the left."""
    th = np.asarray(lateral_angle, dtype=float)
    return head_radius / speed_of_sound * (th + np.sin(th))


def lateral_angle(positions):
    """Angle from the median plane, positive towards the left ear (+y)."""
    return np.arcsin(np.clip(sh.unit_vectors(positions)[:, 1], -1.0, 1.0))


def _smooth_noise(rng, shape, width):
    white = rng.standard_normal(shape)
    if width <= 0:
        return white
    impulse = np.zeros(8 * int(math.ceil(width)) + 9)
    impulse[impulse.size // 2] = 1.0
    gain = np.sqrt(np.sum(gaussian_filter1d(impulse, width) ** 2))
    return gaussian_filter1d(white, width, axis=-1, mode="nearest") / gain


def _mirror(coeffs, order):
    """Reflect a left-ear coefficient field across the median plane (az -> -az)."""
    out = coeffs.copy()
    for l in range(order + 1):
        for m in range(1, l + 1):
            out[sh.acn(l, -m)] *= -1.0
    return out


def synth_coeffs(cfg):
    """True dB-magnitude SH coefficients of a subject, ((L+1)^2, B, 2)."""
    order = cfg.true_sh_order
    nb = cfg.ir_length // 2 + 1
    f = np.fft.rfftfreq(cfg.ir_length, 1.0 / cfg.sample_rate)
    fn = f / (cfg.sample_rate / 2.0)
    k = sh.num_coeffs(order)
    pop = np.random.default_rng([cfg.population_seed, 0x5EED])
    sub = np.random.default_rng([cfg.seed, 0xB0D1])
    width = cfg.spectral_smoothness

    env = np.zeros((k, nb))
    for l in range(1, order + 1):
        env[l * l:(l + 1) ** 2] = (
            cfg.spatial_db * (0.3 + 0.7 * fn ** 0.7) / (l * math.sqrt(2 * l + 1))
        )
    env *= math.sqrt(4.0 * math.pi)

    template = env * _smooth_noise(pop, (k, nb), width)
    # measurement-chain roll-off towards Nyquist
    level = -30.0 * fn ** 6 + 2.0 * _smooth_noise(pop, nb, 2 * width)
    template[0] = math.sqrt(4.0 * math.pi) * level
    if order >= 1:
        # left ear louder for sources on the left, growing with frequency
        template[sh.acn(1, -1)] += (
            math.sqrt(4.0 * math.pi / 3.0) * cfg.head_shadow_db * fn
        )

    spread = cfg.subject_spread
    dev_env = env.copy()
    dev_env[0] = math.sqrt(4.0 * math.pi) * 1.5
    left = template + spread * dev_env * _smooth_noise(sub, (k, nb), width)
    right = _mirror(template, order) + spread * dev_env * _smooth_noise(sub, (k, nb), width)
    return sh.ShCoeffTensor(order, np.stack([left, right], axis=2))


def _minimum_phase(mag, n):
    """Minimum-phase spectrum with the given rfft magnitudes (last axis)."""
    cep = np.fft.irfft(np.log(mag), n=n, axis=-1)
    fold = np.zeros_like(cep)
    fold[..., 0] = cep[..., 0]
    fold[..., 1:n // 2] = 2.0 * cep[..., 1:n // 2]
    fold[..., n // 2] = cep[..., n // 2]
    return np.exp(np.fft.rfft(fold, axis=-1))


def synth_subject(cfg, grid, coeffs=None):
    """Generate a synthetic subject on ``grid``.

    The dB magnitude at every bin is exactly band-limited to
    ``cfg.true_sh_order``. Each ear gets a minimum-phase response delayed
    by half the Woodworth ITD (left earlier for sources on the left) on top
    of a common onset delay.
    """
    positions = as_positions(grid)
    if positions.shape[0] < 1:
        raise DataError("empty grid")
    if sh.num_coeffs(cfg.true_sh_order) > positions.shape[0]:
        raise DataError(
            f"order {cfg.true_sh_order} needs {sh.num_coeffs(cfg.true_sh_order)} points, "
            f"grid has {positions.shape[0]}"
        )
    if coeffs is None:
        coeffs = synth_coeffs(cfg)
    n = cfg.ir_length
    db = sh.sht_eval(coeffs, positions)                   # (P, B, 2)
    mag = sh.from_db(np.transpose(db, (0, 2, 1)))         # (P, 2, B)
    spec = _minimum_phase(mag, n)

    itd = woodworth_itd(lateral_angle(positions), cfg.head_radius, cfg.speed_of_sound)
    delay = cfg.onset_delay / cfg.sample_rate + np.stack([-itd / 2, itd / 2], axis=1)
    f = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate)
    spec = spec * np.exp(-2j * np.pi * f[None, None, :] * delay[:, :, None])
    # the Nyquist bin of a real signal is real: keep |H|, choose the sign
    nyq = spec[..., -1]
    sign = np.where(nyq.real < 0, -1.0, 1.0)
    spec[..., -1] = sign * np.abs(nyq)
    spec[..., 0] = np.abs(spec[..., 0])
    irs = np.fft.irfft(spec, n=n, axis=2)
    return HrirSet(cfg.sample_rate, positions, irs)


def synth_cohort(n_subjects, cfg, grid, first_seed=0):
    """Subjects sharing ``cfg.population_seed``, seeds first_seed, first_seed+1, ..."""
    return [synth_subject(cfg.replace(seed=first_seed + i), grid) for i in range(n_subjects)]


__all__ = [
    "HrirSet",
    "HrtfSet",
    "SUPPORTED_SPARSITY",
    "SphericalDirection",
    "SynthConfig",
    "as_positions",
    "farthest_point_indices",
    "hrir_to_hrtf",
    "hrtf_to_hrir",
    "lateral_angle",
    "load_container",
    "read_container",
    "save_container",
    "subsample_indices",
    "subsample_positions",
    "synth_coeffs",
    "synth_cohort",
    "synth_subject",
    "woodworth_itd",
    "write_container",
]
