"""Shot-noise-limited probe: expected counts and Poisson frame sampling.

A coherent probe delivers N_bar photons per frame on average, spread over the
grid by a normalized illumination profile (uniform by default). The detected
mean count at a pixel is

    lam = N_bar * |alpha|^2 * g(T) / side**2

where g encodes the detection convention: g(T) = T for intensity-linear
detection, g(T) = T**2 when the object modulates the field amplitude and the
detector sees the squared amplitude (the default; this is the convention
under which the Poisson count statistics carry exactly the quantum Fisher
information of the probe). With T = 1 everywhere, N_bar = 4096 and side = 64
this gives lam = 1.0 photon/pixel under either convention.

Reproducibility contract
------------------------
Frame i of an ensemble with master seed m is drawn from a dedicated Philox
counter stream with key = m * 2**64 + i, so any subset of frames can be
regenerated independently and the ensemble bytes never depend on scheduling
or batching. Poisson variates come from numpy's Generator.poisson, which is
exact in both regimes it uses (product-of-uniforms for lam < 10, PTRS
transformed rejection above; no normal approximation) and whose stream is
fixed for a pinned numpy version.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError
from .grid import GridSpec


class Convention(enum.Enum):
    """How transmittance maps to detected mean intensity."""

    INTENSITY_LINEAR = "intensity-linear"    # lam ~ T
    AMPLITUDE_SQUARED = "amplitude-squared"  # lam ~ T**2

    @classmethod
    def from_name(cls, name: str) -> "Convention":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise InvalidArgumentError(f"unknown convention {name!r}; expected one of: {valid}")


@dataclass(frozen=True)
class ProbeConfig:
    """Probe strength, detection convention and illumination profile.

    ``illumination`` is |alpha|^2 per pixel, normalized so its grid average
    is 1 (uniform illumination is exactly 1 everywhere); None means uniform.
    """

    grid: GridSpec
    n_bar: float
    convention: Convention = Convention.AMPLITUDE_SQUARED
    illumination: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not np.isfinite(self.n_bar) or self.n_bar <= 0:
            raise InvalidArgumentError(f"n_bar must be positive and finite, got {self.n_bar}")
        if self.illumination is not None:
            illum = np.asarray(self.illumination, dtype=np.float64)
            if illum.shape != (self.grid.side, self.grid.side):
                raise DimensionMismatchError(
                    f"illumination shape {illum.shape} does not match grid side {self.grid.side}"
                )
            if illum.min() < 0 or not np.all(np.isfinite(illum)):
                raise InvalidArgumentError("illumination must be finite and non-negative")
            mean = illum.mean()
            if abs(mean - 1.0) > 1e-9:
                raise InvalidArgumentError(
                    f"illumination grid average must be 1 (got {mean:.12g}); normalize first"
                )
            illum = illum.copy()
            illum.setflags(write=False)
            object.__setattr__(self, "illumination", illum)

    def illumination_map(self) -> np.ndarray:
        if self.illumination is None:
            return np.ones((self.grid.side, self.grid.side))
        return self.illumination


def _check_transmittance(T: np.ndarray, grid: GridSpec) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (grid.side, grid.side):
        raise DimensionMismatchError(
            f"transmittance shape {T.shape} does not match grid side {grid.side}"
        )
    if not np.all(np.isfinite(T)):
        raise InvalidArgumentError("transmittance contains non-finite values")
    if T.size and (T.min() < 0.0 or T.max() > 1.0):
        raise InvalidArgumentError(
            f"transmittance outside [0, 1]: min {T.min():.6g}, max {T.max():.6g}"
        )
    return T


def expected_counts(T: np.ndarray, probe: ProbeConfig) -> np.ndarray:
    """Mean detected counts per pixel for a transmittance map.

    Exactly linear in n_bar: doubling n_bar doubles every entry bit-for-bit
    (a single float multiply per pixel).
    """
    T = _check_transmittance(T, probe.grid)
    g = T if probe.convention is Convention.INTENSITY_LINEAR else T * T
    scale = probe.n_bar * probe.grid.pixel_weight
    if probe.illumination is None:
        return scale * g
    return scale * (probe.illumination * g)


def count_gain(T: np.ndarray, probe: ProbeConfig) -> np.ndarray:
    """d(lam)/dT per pixel: the count-to-transmittance gain map."""
    T = _check_transmittance(T, probe.grid)
    gprime = np.ones_like(T) if probe.convention is Convention.INTENSITY_LINEAR else 2.0 * T
    return probe.n_bar * probe.grid.pixel_weight * probe.illumination_map() * gprime


def expected_count_jacobian(jac_T: np.ndarray, T: np.ndarray, probe: ProbeConfig) -> np.ndarray:
    """Chain-rule a transmittance Jacobian into count space.

    jac_T has shape (n_params, side, side) holding dT/dtheta_k; the result
    holds d(lam)/dtheta_k = d(lam)/dT * dT/dtheta_k.
    """
    jac_T = np.asarray(jac_T, dtype=np.float64)
    if jac_T.ndim != 3 or jac_T.shape[1:] != (probe.grid.side, probe.grid.side):
        raise DimensionMismatchError(
            f"jacobian shape {jac_T.shape} does not match grid side {probe.grid.side}"
        )
    return count_gain(T, probe)[None, :, :] * jac_T


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def derived_seed(master_seed: int, index: int) -> int:
    """Per-frame Philox key: master * 2**64 + index (a 128-bit counter scheme)."""
    if not 0 <= master_seed <= _MASK64:
        raise InvalidArgumentError(f"master seed must fit in 64 bits, got {master_seed}")
    if not 0 <= index <= _MASK64:
        raise InvalidArgumentError(f"frame index must fit in 64 bits, got {index}")
    return (master_seed << 64) | index


def philox_generator(seed: int) -> np.random.Generator:
    """Counter-based generator for a (possibly 128-bit) integer key."""
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Frame:
    """One Poisson-noisy detector readout plus the seed that produced it."""

    counts: np.ndarray
    seed: int


@dataclass(frozen=True)
class FrameEnsemble:
    """A stack of frames drawn from one expected-count map.

    ``counts`` is (n_frames, side, side) uint32; frame i used the stream
    keyed by derived_seed(master_seed, i).
    """

    counts: np.ndarray
    master_seed: int

    @property
    def n_frames(self) -> int:
        return self.counts.shape[0]


def sample_frame(lam: np.ndarray, seed: int) -> Frame:
    """Draw one Poisson frame from a mean-count map, deterministically per seed."""
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)) or (lam.size and lam.min() < 0):
        raise InvalidArgumentError("expected counts must be finite and non-negative")
    counts = philox_generator(seed).poisson(lam).astype(np.uint32)
    return Frame(counts=counts, seed=seed)


def sample_ensemble(lam: np.ndarray, count: int, master_seed: int) -> FrameEnsemble:
    """Draw ``count`` independent frames; frame i is sample_frame(lam, derived_seed(master_seed, i))."""
    if count < 1:
        raise InvalidArgumentError(f"ensemble size must be >= 1, got {count}")
    lam = np.asarray(lam, dtype=np.float64)
    out = np.empty((count,) + lam.shape, dtype=np.uint32)
    for i in range(count):
        out[i] = sample_frame(lam, derived_seed(master_seed, i)).counts
    return FrameEnsemble(counts=out, master_seed=master_seed)
