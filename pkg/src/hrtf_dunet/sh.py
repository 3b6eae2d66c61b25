"""Real spherical harmonics, least-squares SH analysis and synthesis.

Convention: orthonormal real harmonics (unit integral of Y^2 over the
sphere), no Condon-Shortley phase, ACN ordering ``n = l*l + l + m``.
Directions are (azimuth, elevation[, radius]) in radians; the Legendre
argument is sin(elevation), so Y_1^0 peaks at the north pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContainerError, DataError

FOUR_PI = 4.0 * math.pi
SPARSE_FIT_FACTOR = 2


def num_coeffs(order):
    return (order + 1) ** 2


def acn(l, m):
    return l * l + l + m


def max_order_for_points(n_points):
    """Highest order whose coefficient count does not exceed ``n_points``."""
    if n_points < 1:
        raise ValueError("need at least one point")
    return math.isqrt(int(n_points)) - 1


def as_directions(positions):
    """Coerce positions to an (P, 2) float array of (azimuth, elevation)."""
    if hasattr(positions, "azimuth"):
        return np.array([[positions.azimuth, positions.elevation]], dtype=float)
    arr = positions
    if len(arr) and hasattr(arr[0], "azimuth"):
        arr = [[p.azimuth, p.elevation] for p in arr]
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr[:, :2]


def unit_vectors(positions):
    d = as_directions(positions)
    az, el = d[:, 0], d[:, 1]
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def fibonacci_grid(n, radius=1.5):
    """``n`` near-uniform directions on a golden-angle spiral.

    Returns an (n, 3) array of (azimuth, elevation, radius).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    golden = math.pi * (3.0 - math.sqrt(5.0))
    az = np.mod(golden * i, 2.0 * math.pi)
    el = np.arcsin(np.clip(z, -1.0, 1.0))
    return np.stack([az, el, np.full(n, float(radius))], axis=1)


def _legendre_normalized(order, x):
    """Orthonormally scaled associated Legendre values, shape (P, L+1, L+1).

    ``out[:, l, m]`` = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(x) without the
    Condon-Shortley factor.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = np.zeros((x.size, order + 1, order + 1))
    out[:, 0, 0] = 1.0 / math.sqrt(FOUR_PI)
    for m in range(1, order + 1):
        out[:, m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * s * out[:, m - 1, m - 1]
    for m in range(0, order):
        out[:, m + 1, m] = math.sqrt(2 * m + 3) * x * out[:, m, m]
    for m in range(0, order + 1):
        for l in range(m + 2, order + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            out[:, l, m] = a * (x * out[:, l - 1, m] - b * out[:, l - 2, m])
    return out


def real_sh_basis(order, positions):
    """Basis matrix Y with shape (P, (order+1)^2).

    A single direction (``SphericalDirection`` or a length-2/3 sequence)
    gives a 1-D vector instead.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    single = hasattr(positions, "azimuth") or np.ndim(positions) == 1
    d = as_directions(positions)
    az, el = d[:, 0], d[:, 1]
    plm = _legendre_normalized(order, np.sin(el))
    y = np.empty((d.shape[0], num_coeffs(order)))
    sqrt2 = math.sqrt(2.0)
    for l in range(order + 1):
        y[:, acn(l, 0)] = plm[:, l, 0]
        for m in range(1, l + 1):
            y[:, acn(l, m)] = sqrt2 * plm[:, l, m] * np.cos(m * az)
            y[:, acn(l, -m)] = sqrt2 * plm[:, l, m] * np.sin(m * az)
    return y[0] if single else y


@dataclass(frozen=True)
class ShCoeffTensor:
    """SH coefficients per frequency bin and ear: shape ((L+1)^2, B, 2)."""

    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[2] != 2 or c.shape[0] != num_coeffs(self.order):
            raise DataError(
                f"coefficient tensor shape {c.shape} does not match order {self.order}"
            )
        if not np.all(np.isfinite(c)):
            raise DataError("non-finite SH coefficients")
        object.__setattr__(self, "coeffs", c)

    @property
    def num_bins(self):
        return self.coeffs.shape[1]

    def to_channels(self):
        """Network layout: (2*(L+1)^2, B), left-ear coefficients first."""
        return np.concatenate([self.coeffs[:, :, 0], self.coeffs[:, :, 1]], axis=0)

    @classmethod
    def from_channels(cls, arr, order=None):
        arr = np.asarray(arr, dtype=float)
        n = arr.shape[0] // 2
        if order is None:
            order = math.isqrt(n) - 1
        return cls(order, np.stack([arr[:n], arr[n:]], axis=2))

    def __add__(self, other):
        return ShCoeffTensor(self.order, self.coeffs + other.coeffs)


def gram_default_lambda(y):
    """1e-6 * trace(Y^T Y) / (L+1)^2."""
    return 1e-6 * float(np.sum(y * y)) / y.shape[1]


def default_lambda(positions, order):
    """Regulariser used when the caller does not pass one.

    Sparse fits, with fewer than ``SPARSE_FIT_FACTOR * (L+1)^2`` points,
    get the trace-scaled default; better-determined fits get none.
    """
    n_points = as_directions(positions).shape[0]
    if n_points >= SPARSE_FIT_FACTOR * num_coeffs(order):
        return 0.0
    return gram_default_lambda(real_sh_basis(order, positions))


def _check_distinct(vecs):
    if vecs.shape[0] < 2:
        return
    dots = vecs @ vecs.T
    np.fill_diagonal(dots, -np.inf)
    if np.max(dots) > 1.0 - 1e-12:
        raise DataError("positions are not pairwise distinct")


def fit_matrix(positions, order, lam=None):
    """Linear map from P values to (L+1)^2 coefficients, shape (K, P)."""
    y = real_sh_basis(order, positions)
    if y.ndim == 1:
        y = y[None, :]
    _check_distinct(unit_vectors(positions))
    if lam is None:
        lam = default_lambda(positions, order)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    k = y.shape[1]
    if lam == 0.0:
        if k > y.shape[0] or np.linalg.matrix_rank(y) < k:
            raise DataError(
                f"rank-deficient basis: order {order} needs {k} independent points"
            )
        return np.linalg.pinv(y)
    aug = np.vstack([y, math.sqrt(lam) * np.eye(k)])
    pinv = np.linalg.pinv(aug)
    return pinv[:, : y.shape[0]]


def sht_fit(values, positions, order, lam=None):
    """Tikhonov-regularised least-squares SH analysis.

    Parameters
    ----------
    values : array, shape (P, B, 2)
        Field samples per position, frequency bin and ear.
    positions : array (P, 2|3) or sequence of SphericalDirection
    order : int
    lam : float, optional
        Ridge weight. ``None`` selects :func:`default_lambda`.

    Returns
    -------
    ShCoeffTensor
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[:, :, None].repeat(2, axis=2)
    if v.shape[0] != as_directions(positions).shape[0]:
        raise DataError("values and positions disagree on P")
    mat = fit_matrix(positions, order, lam)
    coeffs = np.tensordot(mat, v, axes=(1, 0))
    return ShCoeffTensor(order, coeffs)


def sht_eval(coeffs, positions):
    """Synthesize field values (P, B, 2) at ``positions``."""
    y = real_sh_basis(coeffs.order, positions)
    if y.ndim == 1:
        y = y[None, :]
    return np.tensordot(y, coeffs.coeffs, axes=(1, 0))


def to_db(mag, floor=1e-12):
    return 20.0 * np.log10(np.maximum(mag, floor))


def from_db(db):
    return 10.0 ** (np.asarray(db) / 20.0)


# container I/O for coefficient caches -------------------------------------


def save_coeffs(tensor, path, frequencies=None):
    from .data import write_container

    manifest = {
        "kind": "sh_coeffs",
        "order": int(tensor.order),
        "num_bins": int(tensor.num_bins),
        "num_ears": 2,
    }
    if frequencies is not None:
        manifest["frequencies"] = [float(f) for f in frequencies]
    write_container(path, manifest, tensor.coeffs.astype("<f4").tobytes())


def load_coeffs(path):
    from .data import read_container

    manifest, payload = read_container(path)
    if manifest.get("kind") != "sh_coeffs":
        raise ContainerError(f"{path}: not an SH coefficient container")
    try:
        order, nb = int(manifest["order"]), int(manifest["num_bins"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"{path}: malformed manifest ({exc})") from None
    expected = num_coeffs(order) * nb * 2 * 4
    if len(payload) != expected:
        raise ContainerError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").astype(float).reshape(num_coeffs(order), nb, 2)
    if not np.all(np.isfinite(arr)):
        raise ContainerError(f"{path}: NaN or Inf in payload")
    return ShCoeffTensor(order, arr)


__all__ = [
    "ShCoeffTensor",
    "acn",
    "as_directions",
    "default_lambda",
    "fibonacci_grid",
    "fit_matrix",
    "from_db",
    "load_coeffs",
    "max_order_for_points",
    "num_coeffs",
    "real_sh_basis",
    "save_coeffs",
    "sht_eval",
    "sht_fit",
    "to_db",
    "unit_vectors",
]
