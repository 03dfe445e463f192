"""Fundamental precision bounds: Fisher information, QCRB, SQL, HL.

The probe-level (quantum) Fisher information for parameters of a
transmittance map under a shot-noise-limited coherent probe is

    F_ij = 4 * N_bar * sum_p w * |alpha_p|^2 * dT_p/dtheta_i * dT_p/dtheta_j

with w = 1/side**2 the pixel quadrature weight. Its inverse is the Cramer-Rao
covariance floor, propagated to a per-pixel image-variance map either through
the same Jacobian (exact linearization) or by Monte-Carlo rendering of
Normal-perturbed parameter vectors (an independent route kept deliberately
separate so the two can cross-check each other).

The classical Fisher information of the Poisson counts,
F_ij = sum_p d(lam_p)/dtheta_i * d(lam_p)/dtheta_j / lam_p, equals the
probe-level matrix exactly under the amplitude-squared detection convention;
under intensity-linear detection the two differ and both remain available.

Per-pixel benchmark scales: sql_map/hl_map emit the standard quantum limit
1/lam and Heisenberg scale 1/lam**2 in detected-count units, with an optional
rescaling into transmittance-variance units (divide by the squared log-gain
(dlam/dT / lam)**2, which for the SQL reproduces the per-pixel one-parameter
Cramer-Rao variance lam / (dlam/dT)**2).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    IllConditionedError,
    InvalidArgumentError,
    SingularModelError,
)
from .families import ParamVector, eval_raw_batch
from .grid import GridSpec
from .probe import ProbeConfig, count_gain, expected_counts, philox_generator

_EPS_COUNT = 1e-12  # counts below this are treated as dark pixels


class FimKind(enum.Enum):
    QUANTUM = "quantum"
    CLASSICAL_POISSON = "classical-poisson"


class MapKind(enum.Enum):
    QCRB_JACOBIAN = "qcrb-jacobian"
    QCRB_MC = "qcrb-mc"
    SQL = "sql"
    HL = "hl"


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric positive-semidefinite information matrix."""

    matrix: np.ndarray
    kind: FimKind
    n_bar: float | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"Fisher matrix must be square, got {m.shape}")
        scale = np.abs(m).max()
        if scale > 0 and np.abs(m - m.T).max() > 1e-12 * scale:
            raise InvalidArgumentError("Fisher matrix asymmetry exceeds 1e-12 relative")
        m = 0.5 * (m + m.T)
        trace = np.trace(m)
        eigvals = np.linalg.eigvalsh(m)
        if eigvals.min() < -1e-10 * max(trace, 0.0):
            raise InvalidArgumentError(
                f"Fisher matrix is not PSD: min eigenvalue {eigvals.min():.3e} "
                f"against trace {trace:.3e}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_params(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CovarianceBound:
    """Cramer-Rao covariance floor with its conditioning report."""

    matrix: np.ndarray
    fim_eigenvalues: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        e = np.asarray(self.fim_eigenvalues, dtype=np.float64).copy()
        e.setflags(write=False)
        object.__setattr__(self, "fim_eigenvalues", e)

    @property
    def total_parameter_variance(self) -> float:
        return float(np.trace(self.matrix))


@dataclass(frozen=True)
class VarianceMap:
    """Per-pixel variance scale with bookkeeping.

    ``total`` sums the finite entries; ``excluded`` counts pixels whose entry
    is +inf (dark pixels under SQL/HL) and therefore left out of the total.
    ``units`` is "transmittance2" for parameterized bounds and rescaled maps,
    "counts" for the literal 1/lam and 1/lam**2 scales.
    """

    values: np.ndarray
    kind: MapKind
    units: str
    total: float
    excluded: int = 0
    n_samples: int | None = None
    jitter: float = 0.0


def qfim(jac_T: np.ndarray, probe: ProbeConfig) -> FisherMatrix:
    """Probe-level Fisher information from a transmittance Jacobian stack.

    jac_T is (n_params, side, side) of dT/dtheta_k. All pixels contribute;
    the probe's illumination profile weights them.
    """
    J = np.asarray(jac_T, dtype=np.float64)
    side = probe.grid.side
    if J.ndim != 3 or J.shape[1:] != (side, side):
        raise DimensionMismatchError(f"jacobian shape {J.shape} does not match side {side}")
    illum = probe.illumination_map()
    F = 4.0 * probe.n_bar * probe.grid.pixel_weight * np.einsum(
        "ij,kij,lij->kl", illum, J, J, optimize=True
    )
    return FisherMatrix(matrix=F, kind=FimKind.QUANTUM, n_bar=probe.n_bar)


def classical_poisson_fim(jac_lam: np.ndarray, lam: np.ndarray) -> FisherMatrix:
    """Fisher information of Poisson counts with mean map ``lam``.

    jac_lam is (n_params, side, side) of d(lam)/dtheta_k. Dark pixels
    (lam < 1e-12) carry no counts and must carry no sensitivity either;
    a dark pixel with a nonzero derivative makes the model singular there
    (infinite per-count information) and is refused rather than floored.
    """
    J = np.asarray(jac_lam, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if J.ndim != 3 or J.shape[1:] != lam.shape:
        raise DimensionMismatchError(
            f"jacobian shape {J.shape} does not match count map shape {lam.shape}"
        )
    if not np.all(np.isfinite(lam)) or (lam.size and lam.min() < 0):
        raise InvalidArgumentError("count map must be finite and non-negative")
    dark = lam < _EPS_COUNT
    if np.any(dark):
        worst = np.abs(J[:, dark]).max() if J.size else 0.0
        if worst > _EPS_COUNT:
            raise SingularModelError(
                f"{int(dark.sum())} dark pixels have nonzero count sensitivity "
                f"(max |dlam/dtheta| = {worst:.3e}); information diverges there"
            )
    safe_lam = np.where(dark, 1.0, lam)
    weighted = np.where(dark[None, :, :], 0.0, J / safe_lam[None, :, :])
    F = np.einsum("kij,lij->kl", weighted, J, optimize=True)
    F = 0.5 * (F + F.T)
    return FisherMatrix(matrix=F, kind=FimKind.CLASSICAL_POISSON)


def invert_fim(fim: FisherMatrix, rcond: float = 1e-10) -> CovarianceBound:
    """Invert a Fisher matrix through its eigendecomposition.

    Refuses (IllConditionedError, carrying the spectrum) when any eigenvalue
    falls below rcond times the largest; a pseudo-inverse would silently
    report zero variance for unidentifiable directions, which is exactly the
    wrong answer for a lower bound.
    """
    eigvals, eigvecs = np.linalg.eigh(fim.matrix)
    if eigvals.max() <= 0:
        raise IllConditionedError(
            f"Fisher matrix has no positive eigenvalues (max {eigvals.max():.3e})",
            eigenvalues=eigvals,
        )
    if eigvals.min() < rcond * eigvals.max():
        raise IllConditionedError(
            "Fisher matrix is ill-conditioned: eigenvalues "
            + np.array2string(eigvals, precision=3)
            + f" with rcond {rcond:g}",
            eigenvalues=eigvals,
        )
    cov = (eigvecs / eigvals) @ eigvecs.T
    cov = 0.5 * (cov + cov.T)
    return CovarianceBound(matrix=cov, fim_eigenvalues=eigvals)


def variance_map_jacobian(jac_T: np.ndarray, cov: CovarianceBound) -> VarianceMap:
    """Propagate a parameter covariance to a per-pixel image variance map.

    Per pixel: Var[T(p)] = J(p)^T Sigma J(p), the exact first-order
    propagation of the parameter floor into transmittance units.
    """
    J = np.asarray(jac_T, dtype=np.float64)
    if J.ndim != 3 or J.shape[0] != cov.matrix.shape[0]:
        raise DimensionMismatchError(
            f"jacobian shape {J.shape} does not match covariance size {cov.matrix.shape[0]}"
        )
    values = np.einsum("kij,kl,lij->ij", J, cov.matrix, J, optimize=True)
    return VarianceMap(
        values=values,
        kind=MapKind.QCRB_JACOBIAN,
        units="transmittance2",
        total=float(values.sum()),
    )


def variance_map_mc(
    theta: ParamVector,
    cov: CovarianceBound,
    grid: GridSpec,
    n_samples: int,
    seed: int,
    batch: int = 2048,
) -> VarianceMap:
    """Monte-Carlo image-variance map: render theta_s ~ Normal(theta, Sigma).

    Population (1/n) per-pixel variance of the rendered transmittance maps.
    Sampling uses a dedicated Philox stream per seed; rendering is batched
    but the draw order is fixed, so results do not depend on the batch size
    beyond float addition order within the accumulators. The covariance is
    factored by Cholesky, retrying once with diagonal jitter 1e-12 * trace
    when the factorization fails; applied jitter is reported on the result.
    """
    if n_samples < 2:
        raise InvalidArgumentError(f"need at least 2 samples, got {n_samples}")
    sigma = np.asarray(cov.matrix, dtype=np.float64)
    if sigma.shape[0] != theta.n_params:
        raise DimensionMismatchError(
            f"covariance size {sigma.shape[0]} does not match {theta.n_params} parameters"
        )
    jitter = 0.0
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.trace(sigma))
        try:
            L = np.linalg.cholesky(sigma + jitter * np.eye(sigma.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise InvalidArgumentError(
                f"covariance is not positive definite even with jitter {jitter:.3e}"
            ) from exc

    rng = philox_generator(seed)
    total = np.zeros((grid.side, grid.side))
    total_sq = np.zeros((grid.side, grid.side))
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        z = rng.standard_normal((m, theta.n_params))
        thetas = theta.values[None, :] + z @ L.T
        # bounds-free render: perturbed draws may leave the sampling box
        T = 0.5 * (1.0 + eval_raw_batch(theta.family, thetas, grid))
        total += T.sum(axis=0)
        total_sq += np.square(T).sum(axis=0)
        done += m
    mean = total / n_samples
    values = total_sq / n_samples - np.square(mean)
    np.maximum(values, 0.0, out=values)
    return VarianceMap(
        values=values,
        kind=MapKind.QCRB_MC,
        units="transmittance2",
        total=float(values.sum()),
        n_samples=n_samples,
        jitter=jitter,
    )


def _per_pixel_scale(lam: np.ndarray, power: int, kind: MapKind) -> VarianceMap:
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)) or (lam.size and lam.min() < 0):
        raise InvalidArgumentError("count map must be finite and non-negative")
    dark = lam < _EPS_COUNT
    with np.errstate(divide="ignore"):
        values = np.where(dark, np.inf, 1.0 / np.where(dark, 1.0, lam) ** power)
    finite = np.isfinite(values)
    return VarianceMap(
        values=values,
        kind=kind,
        units="counts",
        total=float(values[finite].sum()),
        excluded=int((~finite).sum()),
    )


def sql_map(lam: np.ndarray) -> VarianceMap:
    """Standard quantum limit scale per pixel: 1/lam, detected-count units.

    Dark pixels get +inf and are excluded from the total (their count is
    reported on the map) rather than silently dropped or floored.
    """
    return _per_pixel_scale(lam, 1, MapKind.SQL)


def hl_map(lam: np.ndarray) -> VarianceMap:
    """Heisenberg scale per pixel: 1/lam**2, detected-count units."""
    return _per_pixel_scale(lam, 2, MapKind.HL)


def rescale_to_transmittance(vmap: VarianceMap, T: np.ndarray, probe: ProbeConfig) -> VarianceMap:
    """Rescale a count-unit map into transmittance-variance units.

    Divides by the squared log-gain ((dlam/dT)/lam)**2. For the SQL map the
    result is the per-pixel one-parameter Cramer-Rao variance
    lam/(dlam/dT)**2; for the HL map it is 1/(dlam/dT)**2. Pixels whose gain
    vanishes become +inf and are excluded from the total.
    """
    if vmap.units != "counts":
        raise InvalidArgumentError(f"expected a counts-unit map, got units {vmap.units!r}")
    lam = expected_counts(T, probe)
    gain = count_gain(T, probe)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gain_sq = np.square(gain / np.where(lam < _EPS_COUNT, 1.0, lam))
        log_gain_sq = np.where(lam < _EPS_COUNT, 0.0, log_gain_sq)
        values = np.where(log_gain_sq > 0.0, vmap.values / np.where(log_gain_sq > 0, log_gain_sq, 1.0), np.inf)
    finite = np.isfinite(values)
    return VarianceMap(
        values=values,
        kind=vmap.kind,
        units="transmittance2",
        total=float(values[finite].sum()),
        excluded=int((~finite).sum()),
        n_samples=vmap.n_samples,
        jitter=vmap.jitter,
    )
