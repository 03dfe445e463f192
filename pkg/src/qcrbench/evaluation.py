"""Scoring reconstructions against truth and against the precision bounds.

All ensemble statistics use the population (1/n) convention, so the exact
decomposition mse = bias**2 + variance holds pixel-wise (to float roundoff;
the two sides are computed independently). Reductions go through numpy's
pairwise summation, so totals are deterministic for a given ensemble
regardless of how it was produced.

Image-quality metrics follow the definitions used for the composite training
loss: SSIM with a uniform window (default 11x11) and stabilizers
C1 = (0.01 * range)**2, C2 = (0.03 * range)**2, and a gradient-difference
loss (GDL) equal to the mean of squared differences of horizontal and
vertical forward gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .errors import DimensionMismatchError, InvalidArgumentError


# ---------------------------------------------------------------------------
# Ensemble statistics
# ---------------------------------------------------------------------------


def _stack(recons) -> np.ndarray:
    arr = recons.images if hasattr(recons, "images") else np.asarray(recons, dtype=np.float64)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected (F, H, W) reconstructions, got {arr.shape}")
    return arr


def mse_map(recons, truth: np.ndarray) -> np.ndarray:
    """Per-pixel mean squared error over the ensemble."""
    arr = _stack(recons)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != arr.shape[1:]:
        raise DimensionMismatchError(
            f"truth shape {truth.shape} does not match frames {arr.shape[1:]}"
        )
    return np.mean(np.square(arr - truth[None, :, :]), axis=0)


def bias_variance(recons, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (bias**2, variance) maps, population convention.

    mse_map == bias_sq + variance pixel-wise, exactly in real arithmetic.
    """
    arr = _stack(recons)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != arr.shape[1:]:
        raise DimensionMismatchError(
            f"truth shape {truth.shape} does not match frames {arr.shape[1:]}"
        )
    mean = arr.mean(axis=0)
    bias_sq = np.square(mean - truth)
    variance = np.mean(np.square(arr - mean[None, :, :]), axis=0)
    return bias_sq, variance


def compare_bounds(total_mse: float, bound_totals: dict[str, float]) -> dict[str, float]:
    """Ratio table total_mse / bound for every named bound total."""
    ratios = {}
    for name, total in bound_totals.items():
        if total <= 0 or not np.isfinite(total):
            raise InvalidArgumentError(f"bound total {name!r} must be positive and finite")
        ratios[f"mse_over_{name}"] = float(total_mse / total)
    return ratios


# ---------------------------------------------------------------------------
# Normality diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalityDiagnostic:
    """Histogram of one pixel across the ensemble plus a Gaussian LSQ fit.

    ``residual`` is the RMS misfit of the counts normalized by the fitted
    peak height; ``degenerate`` flags a constant ensemble (zero spread), in
    which case no fit is attempted.
    """

    counts: np.ndarray
    bin_edges: np.ndarray
    amplitude: float
    mean: float
    sigma: float
    residual: float
    degenerate: bool


def _gauss(x, amp, mu, sigma):
    return amp * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def pixel_histogram(recons, pixel: tuple[int, int], bins: int = 32) -> NormalityDiagnostic:
    """Histogram the values of one pixel over the ensemble and fit a Gaussian."""
    arr = _stack(recons)
    iy, ix = pixel
    if not (0 <= iy < arr.shape[1] and 0 <= ix < arr.shape[2]):
        raise InvalidArgumentError(f"pixel {pixel} outside {arr.shape[1]}x{arr.shape[2]}")
    values = arr[:, iy, ix]
    spread = values.std()
    if spread == 0.0:
        edges = np.linspace(values[0] - 0.5, values[0] + 0.5, bins + 1)
        counts, _ = np.histogram(values, bins=edges)
        return NormalityDiagnostic(counts, edges, float("nan"), float(values[0]),
                                   0.0, float("nan"), degenerate=True)

    counts, edges = np.histogram(values, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    p0 = (float(counts.max()), float(values.mean()), float(spread))
    try:
        popt, _ = optimize.curve_fit(_gauss, centers, counts.astype(np.float64), p0=p0, maxfev=5000)
        amp, mu, sigma = float(popt[0]), float(popt[1]), abs(float(popt[2]))
        resid = counts - _gauss(centers, *popt)
        residual = float(np.sqrt(np.mean(resid**2)) / max(amp, 1e-300))
    except RuntimeError:  # curve_fit exhausted without converging
        amp, mu, sigma, residual = float("nan"), float(values.mean()), float(spread), float("inf")
    return NormalityDiagnostic(counts, edges, amp, mu, sigma, residual, degenerate=False)


# ---------------------------------------------------------------------------
# Image-quality metrics
# ---------------------------------------------------------------------------


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, data_range: float = 1.0) -> float:
    """Mean structural similarity with a uniform window.

    Local means/variances/covariance come from a uniform window of odd size
    (reflect boundary handling); stabilizers are C1 = (0.01 * data_range)**2
    and C2 = (0.03 * data_range)**2. Symmetric in (a, b); ssim(x, x) == 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError("ssim expects single 2-D images")
    if window % 2 != 1 or window < 3:
        raise InvalidArgumentError(f"window must be odd and >= 3, got {window}")
    if window > min(a.shape):
        raise InvalidArgumentError(f"window {window} exceeds image extent {min(a.shape)}")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    uf = lambda img: ndimage.uniform_filter(img, size=window, mode="reflect")
    mu_a, mu_b = uf(a), uf(b)
    var_a = uf(a * a) - mu_a * mu_a
    var_b = uf(b * b) - mu_b * mu_b
    cov = uf(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def gdl(a: np.ndarray, b: np.ndarray) -> float:
    """Gradient-difference loss: mean squared difference of forward gradients.

    Horizontal and vertical forward differences are pooled into one mean, so
    the result is 0 iff the two images differ by at most a constant offset.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError("gdl expects single 2-D images")
    dxa = a[:, 1:] - a[:, :-1]
    dxb = b[:, 1:] - b[:, :-1]
    dya = a[1:, :] - a[:-1, :]
    dyb = b[1:, :] - b[:-1, :]
    sq = np.concatenate([np.square(dxa - dxb).ravel(), np.square(dya - dyb).ravel()])
    return float(sq.mean())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_TOTAL_KEYS = ("mse", "qcrb_j", "qcrb_mc", "sql", "hl")
_UNIT_LABELS = {
    "mse": "transmittance2",
    "qcrb_j": "transmittance2",
    "qcrb_mc": "transmittance2",
    "sql": "counts",
    "hl": "counts",
}


def build_report(
    truth_family: str,
    theta: list[float],
    n_bar: float,
    convention: str,
    estimator: str,
    frames: int,
    totals: dict[str, float],
    maps: dict[str, str] | None = None,
) -> dict:
    """Assemble the evaluation report object.

    ``totals`` must provide mse, qcrb_j, qcrb_mc, sql and hl; ratios are
    derived, and each total is labeled with its units (the SQL/HL totals are
    detected-count scales, the others transmittance variance).
    """
    missing = set(_TOTAL_KEYS) - set(totals)
    if missing:
        raise InvalidArgumentError(f"totals missing keys: {sorted(missing)}")
    ratios = compare_bounds(
        totals["mse"], {k: totals[k] for k in ("qcrb_j", "qcrb_mc", "sql", "hl")}
    )
    report = {
        "truth_family": truth_family,
        "theta": [float(v) for v in theta],
        "n_bar": float(n_bar),
        "convention": convention,
        "estimator": estimator,
        "frames": int(frames),
        "totals": {k: float(totals[k]) for k in _TOTAL_KEYS},
        "units": dict(_UNIT_LABELS),
        "ratios": ratios,
    }
    if maps:
        report["maps"] = dict(maps)
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_map_csv(path, array: np.ndarray) -> None:
    """Row-major CSV with 17 significant digits (lossless for float64)."""
    arr = np.atleast_2d(np.asarray(array, dtype=np.float64))
    np.savetxt(path, arr, fmt="%.17g", delimiter=",")
