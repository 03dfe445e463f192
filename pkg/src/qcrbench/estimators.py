"""Estimators: plug-in inversion, spectral initialization, Poisson MLE.

The maximum-likelihood path minimizes the Poisson negative log-likelihood

    L(theta) = sum_p [lam_p(theta) - k_p * ln(max(lam_p(theta), 1e-12))]

with a damped Gauss-Newton (Levenberg-Marquardt) loop using the analytic
count Jacobian and the Fisher-scoring Hessian approximation
H = sum_p (dlam dlam^T)/lam. Steps are projected onto a generous feasibility
box (amplitudes in [0, 1], frequencies positive) so the rendered model stays
physical; convergence is declared on the projected-gradient max-norm.

Multistart: the first start is the data-driven spectral initializer, the
rest alternate between jittered copies of it and uniform draws from the
sampling box; the best NLL wins. Every frame also yields the certified
lower bound L_floor = sum_p (k_p - k_p ln k_p) (the NLL of a model that
reproduces the counts exactly), so a start whose NLL reaches the floor is
provably global and the remaining starts are skipped. Fitting directly on a
real-valued expected-count map (no noise) is supported for oracle checks;
there the floor is attained at the true parameters.

``ml_fit`` is deterministic given (frame, config, seed): all randomness runs
through a Philox stream keyed by the seed, and ensembles key each frame as
derived_seed(config seed, frame index).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DimensionMismatchError,
    FormatError,
    InitFailedError,
    InvalidArgumentError,
    NonConvergenceError,
)
from .families import (
    Family,
    N_PARAMS,
    PARAM_NAMES,
    ParamVector,
    analytic_jacobian,
    canonical_form,
    default_bounds,
    eval_raw,
    transmittance,
)
from .grid import GridSpec
from . import imgx
from .probe import Convention, ProbeConfig, derived_seed, philox_generator

_LOG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Plug-in estimator
# ---------------------------------------------------------------------------


def plugin_estimate(counts: np.ndarray, probe: ProbeConfig) -> np.ndarray:
    """Per-pixel inversion of the detection law, clipped to [0, 1].

    Intensity-linear: T_hat = k * side**2 / (N_bar * illum); amplitude-squared
    takes the square root of the same ratio. Pixels with zero illumination
    carry no information and are set to 0.
    """
    k = np.asarray(counts, dtype=np.float64)
    side = probe.grid.side
    if k.shape != (side, side):
        raise DimensionMismatchError(f"frame shape {k.shape} does not match side {side}")
    illum = probe.illumination_map()
    lit = illum > 0
    ratio = np.zeros_like(k)
    scale = probe.n_bar * probe.grid.pixel_weight
    ratio[lit] = k[lit] / (scale * illum[lit])
    if probe.convention is Convention.AMPLITUDE_SQUARED:
        ratio = np.sqrt(ratio)
    return np.clip(ratio, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Spectral initialization
# ---------------------------------------------------------------------------


def _dominant_peaks(power: np.ndarray, n_peaks: int) -> list[tuple[int, int]]:
    """Greedy off-DC peak picking; each hit suppresses its 3x3 neighborhood
    and the conjugate bin so one sinusoid is not counted twice."""
    side = power.shape[0]
    p = power.copy()
    p[0, 0] = 0.0
    peaks: list[tuple[int, int]] = []
    for _ in range(n_peaks):
        iy, ix = np.unravel_index(int(np.argmax(p)), p.shape)
        if p[iy, ix] <= 0:
            break
        peaks.append((iy, ix))
        for cy, cx in ((iy, ix), ((-iy) % side, (-ix) % side)):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    p[(cy + dy) % side, (cx + dx) % side] = 0.0
    return peaks


def _parabolic_shift(lm: float, l0: float, lp: float) -> float:
    """Sub-bin vertex of a log-power parabola through three samples."""
    denom = lm - 2.0 * l0 + lp
    if denom >= -1e-300:
        return 0.0
    return float(np.clip(0.5 * (lm - lp) / denom, -0.5, 0.5))


def _refined_freq(spectrum: np.ndarray, iy: int, ix: int) -> tuple[float, float]:
    """Peak bin -> (fy, fx) in cycles/pixel with parabolic sub-bin refinement."""
    side = spectrum.shape[0]
    power = np.abs(spectrum) ** 2
    logp = np.log(power + 1e-300)
    dy = _parabolic_shift(logp[(iy - 1) % side, ix], logp[iy, ix], logp[(iy + 1) % side, ix])
    dx = _parabolic_shift(logp[iy, (ix - 1) % side], logp[iy, ix], logp[iy, (ix + 1) % side])
    freqs = np.fft.fftfreq(side)
    fy = freqs[iy] + dy / side
    fx = freqs[ix] + dx / side
    return fy, fx


def _wrap(x: float) -> float:
    return float(np.mod(x + np.pi, 2.0 * np.pi) - np.pi)


def _linear_component_from_peak(spectrum: np.ndarray, iy: int, ix: int, side: int):
    """(omega, beta, phi, magnitude) of the plane wave behind one DFT peak."""
    fy, fx = _refined_freq(spectrum, iy, ix)
    if fy < 0 or (fy == 0 and fx < 0):  # fold onto one half-plane
        fy, fx = -fy, -fx
        coeff = np.conj(spectrum[iy, ix])
    else:
        coeff = spectrum[iy, ix]
    omega = 2.0 * np.pi * float(np.hypot(fx, fy))
    beta = float(np.arctan2(fy, fx))
    # image coordinates are centered: array index (i, j) sits at (j - c, i - c)
    c = side // 2
    psi = _wrap(float(np.angle(coeff * 1j)) + 2.0 * np.pi * (fx + fy) * c)
    omega = max(omega, 1e-4)
    phi = float(np.clip(psi / omega, -np.pi, np.pi))
    return omega, beta, phi, float(np.abs(coeff))


def _radial_profile(data: np.ndarray, grid: GridSpec, center: tuple[float, float]):
    """Mean of ``data`` in unit-width annuli around ``center``."""
    X, Y = grid.coords()
    r = np.hypot(X - center[0], Y - center[1])
    idx = np.rint(r).astype(int)
    n_bins = idx.max() + 1
    sums = np.bincount(idx.ravel(), weights=data.ravel(), minlength=n_bins)
    counts = np.bincount(idx.ravel(), minlength=n_bins)
    with np.errstate(invalid="ignore"):
        prof = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return prof


def _radial_component(data: np.ndarray, grid: GridSpec, center: tuple[float, float], omega_box):
    """(omega, phi) of a radial sinusoid via a dense periodogram of the
    annular-mean profile."""
    prof = _radial_profile(data, grid, center)
    prof = prof - prof.mean()
    r = np.arange(prof.shape[0], dtype=np.float64)
    omegas = np.linspace(0.25 * omega_box[0], 1.5 * omega_box[1], 512)
    basis = np.exp(-1j * np.outer(omegas, r))
    response = basis @ prof
    best = int(np.argmax(np.abs(response)))
    omega = float(omegas[best])
    phi = _wrap(float(np.angle(response[best] * 1j)))
    return max(omega, 1e-4), phi


def spectral_init(counts: np.ndarray, family: Family, grid: GridSpec) -> ParamVector:
    """Data-driven starting point for ml_fit.

    Linear families read frequency, orientation and phase off the dominant
    off-DC DFT peaks (with parabolic sub-bin refinement) and amplitudes off
    the peak-magnitude ratios. Radial families fit annular-mean periodograms
    about the grid origin and, for the offset ring, about the count centroid.

    Raises InitFailedError when no off-DC bin rises above 3x the median
    off-DC power (a structureless frame); callers fall back to uniform
    multistart draws.
    """
    k = np.asarray(counts, dtype=np.float64)
    side = grid.side
    if k.shape != (side, side):
        raise DimensionMismatchError(f"frame shape {k.shape} does not match side {side}")

    data = k - k.mean()
    spectrum = np.fft.fft2(data)
    power = np.abs(spectrum) ** 2
    off_dc = power.copy()
    off_dc[0, 0] = 0.0
    mask = np.ones_like(power, dtype=bool)
    mask[0, 0] = False  # the DC bin is excluded from the median, not zeroed into it
    med = float(np.median(power[mask]))
    if not off_dc.max() > 3.0 * med:
        raise InitFailedError(
            f"no dominant off-DC peak (max {off_dc.max():.3e} vs 3x median {3 * med:.3e})"
        )

    box = default_bounds(family, grid)
    omega_box = (box.lower[PARAM_NAMES[family].index(_first_omega(family))],
                 box.upper[PARAM_NAMES[family].index(_first_omega(family))])

    if family in (Family.SINGLE_LINEAR, Family.DOUBLE_LINEAR, Family.TRIPLE_LINEAR):
        n_comp = {Family.SINGLE_LINEAR: 1, Family.DOUBLE_LINEAR: 2, Family.TRIPLE_LINEAR: 3}[family]
        peaks = _dominant_peaks(power, n_comp)
        comps = [_linear_component_from_peak(spectrum, iy, ix, side) for iy, ix in peaks]
        while len(comps) < n_comp:  # overlapping peaks: reuse the strongest, detuned
            w, b, p, m = comps[0]
            comps.append((min(w * (1.5 + 0.5 * len(comps)), np.pi), _wrap(b + 0.7), p, 0.5 * m))
        mags = np.array([c[3] for c in comps])
        amps = mags / mags.sum() if mags.sum() > 0 else np.full(n_comp, 1.0 / n_comp)
        if family is Family.SINGLE_LINEAR:
            w, b, p, _ = comps[0]
            return ParamVector(family, [w, b, p])
        if family is Family.DOUBLE_LINEAR:
            (w1, b1, p1, _), (w2, b2, p2, _) = comps
            return ParamVector(family, [amps[0], w1, b1, p1, w2, b2, p2])
        (w1, b1, p1, _), (w2, b2, p2, _), (w3, b3, p3, _) = comps
        return ParamVector(family, [amps[0], amps[1], w1, b1, p1, w2, b2, p2, w3, b3, p3])

    if family is Family.RADIAL_LINEAR:
        wr, pr = _radial_component(data, grid, (0.0, 0.0), omega_box)
        peaks = _dominant_peaks(power, 1)
        wl, bl, pl, _ = _linear_component_from_peak(spectrum, *peaks[0], side)
        return ParamVector(family, [0.5, wr, pr, wl, bl, pl])

    # double-radial: first ring about the origin, second about the centroid
    total = k.sum()
    if total <= 0:
        raise InitFailedError("empty frame: no counts to locate a ring center")
    X, Y = grid.coords()
    cx = float(np.clip((k * X).sum() / total, -side / 2.0, side / 2.0))
    cy = float(np.clip((k * Y).sum() / total, -side / 2.0, side / 2.0))
    w1, p1 = _radial_component(data, grid, (0.0, 0.0), omega_box)
    w2, p2 = _radial_component(data, grid, (cx, cy), omega_box)
    return ParamVector(family, [0.5, w1, p1, w2, p2, cx, cy])


def _first_omega(family: Family) -> str:
    for name in PARAM_NAMES[family]:
        if name.startswith("omega"):
            return name
    raise InvalidArgumentError(f"family {family} has no frequency parameter")


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlConfig:
    """Knobs for the LM loop; defaults follow the estimator contract."""

    multistart: int = 8
    max_iter: int = 500
    grad_tol: float = 1e-9
    decrement_tol: float = 5e-9
    seed: int = 0
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e14
    floor_rel_tol: float = 1e-9


@dataclass(frozen=True)
class FitResult:
    """Outcome of one ML fit. ``theta`` is in canonical form (components
    sorted by frequency, every angle wrapped by its image period)."""

    theta: ParamVector
    converged: bool
    iterations: int
    nll: float
    grad_max: float
    start_index: int


def _fit_box(family: Family, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Feasibility box for the optimizer: looser than the sampling box so the
    fit can land slightly outside it, but tight enough to keep the model
    physical (amplitudes in [0,1], frequencies positive and below pi)."""
    lo, hi = [], []
    for name in PARAM_NAMES[family]:
        if name.startswith("a"):
            lo.append(0.0); hi.append(1.0)
        elif name.startswith("omega"):
            lo.append(1e-4); hi.append(np.pi)
        elif name[0] in ("x", "y"):
            lo.append(-float(grid.side)); hi.append(float(grid.side))
        else:  # angles and phases iterate unconstrained; wrapped at report
            lo.append(-np.inf); hi.append(np.inf)
    return np.array(lo), np.array(hi)


def _project(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, family: Family) -> np.ndarray:
    x = np.clip(x, lo, hi)
    if family is Family.TRIPLE_LINEAR and x[0] + x[1] > 1.0:
        x = x.copy()
        x[:2] *= (1.0 - 1e-12) / (x[0] + x[1])
    return x


def _render_lambda(family: Family, values: np.ndarray, grid: GridSpec, probe: ProbeConfig):
    f = eval_raw(ParamVector(family, values), grid)
    T = 0.5 * (1.0 + f)
    g = T if probe.convention is Convention.INTENSITY_LINEAR else T * T
    return probe.n_bar * probe.grid.pixel_weight * probe.illumination_map() * g, T


def _render_jacobian(family: Family, values: np.ndarray, T: np.ndarray, grid: GridSpec, probe: ProbeConfig):
    jac_T = analytic_jacobian(ParamVector(family, values), grid)
    gprime = 1.0 if probe.convention is Convention.INTENSITY_LINEAR else 2.0 * T
    gain = probe.n_bar * probe.grid.pixel_weight * probe.illumination_map() * gprime
    return gain[None, :, :] * jac_T


def _nll(lam: np.ndarray, k: np.ndarray, pos: np.ndarray) -> float:
    lam_pos = np.maximum(lam[pos], _LOG_FLOOR)
    return float(lam.sum() - np.dot(k[pos], np.log(lam_pos)))


def _projected_grad(g: np.ndarray, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gp = g.copy()
    gp[(x <= lo) & (g > 0)] = 0.0
    gp[(x >= hi) & (g < 0)] = 0.0
    return gp


def _lm_minimize(values0, family, grid, probe, k, pos, cfg: MlConfig):
    """Projected Levenberg-Marquardt descent on the Poisson NLL.

    Steps are accepted on a strict NLL decrease, with one escape hatch: once
    the quadratic model predicts a decrease below float resolution of the
    NLL, a step that leaves the NLL unchanged to within that resolution is
    still taken so the Newton contraction can keep shrinking the gradient
    past what the (already converged) NLL value can resolve.
    """
    lo, hi = _fit_box(family, grid)
    x = _project(np.asarray(values0, dtype=np.float64).copy(), lo, hi, family)
    lam, T = _render_lambda(family, x, grid, probe)
    nll = _nll(lam, k, pos)
    mu = cfg.damping_init
    grad_max = np.inf
    converged = False
    it = 0
    floor_streak = 0
    floor_ref = np.inf

    for it in range(1, cfg.max_iter + 1):
        J = _render_jacobian(family, x, T, grid, probe).reshape(len(x), -1)
        lam_flat = np.maximum(lam.ravel(), _LOG_FLOOR)
        resid = 1.0 - k.ravel() / lam_flat
        g = J @ resid
        grad_max = float(np.abs(_projected_grad(g, x, lo, hi)).max())
        H = (J / lam_flat) @ J.T
        if grad_max <= cfg.grad_tol:
            converged = True
            break
        if floor_streak:
            # NLL progress is below float resolution; the Newton decrement
            # g.H^-1.g/2 bounds each parameter's remaining distance to the
            # stationary point at sqrt(2 dec) standard deviations, so a tiny
            # decrement is convergence even when the raw gradient norm is not.
            try:
                dec = 0.5 * float(g @ np.linalg.solve(H, g))
            except np.linalg.LinAlgError:
                dec = np.inf
            if dec <= cfg.decrement_tol and grad_max <= 1.0:
                converged = True
                break
        if floor_streak == 1:
            floor_ref = grad_max
        elif floor_streak and floor_streak % 5 == 0:
            # Ill-conditioned fits contract slowly (factor ~0.9 per step), so
            # only give up when five flat steps bought almost nothing.
            if grad_max > 0.9 * floor_ref:
                break
            floor_ref = grad_max

        d = np.diag(H).copy()
        d[d <= 0] = max(d.max(), 1.0) * 1e-12
        noise = 4e-12 * (1.0 + abs(nll))
        stepped = False
        while mu <= cfg.damping_max:
            try:
                delta = np.linalg.solve(H + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= cfg.damping_up
                continue
            x_new = _project(x + delta, lo, hi, family)
            step = x_new - x
            predicted = -(g @ step + 0.5 * step @ H @ step)
            lam_new, T_new = _render_lambda(family, x_new, grid, probe)
            nll_new = _nll(lam_new, k, pos)
            if nll_new < nll - noise:
                floor_streak = 0
            elif nll_new <= nll + noise and abs(predicted) <= 100.0 * noise:
                floor_streak += 1
            else:
                mu *= cfg.damping_up
                continue
            x, lam, T = x_new, lam_new, T_new
            nll = min(nll, nll_new)
            mu = max(mu / cfg.damping_down, 1e-14)
            stepped = True
            break
        if not stepped:
            break  # damping exhausted: stationary under projection

    return x, nll, grad_max, it, converged


def _build_starts(counts, family, grid, n_starts, rng) -> list[np.ndarray]:
    box = default_bounds(family, grid)
    lo_s, hi_s = box.lower, box.upper
    widths = hi_s - lo_s
    try:
        base = spectral_init(counts, family, grid).values
    except InitFailedError:
        base = None
    starts: list[np.ndarray] = []
    if base is not None:
        starts.append(np.asarray(base, dtype=np.float64))
    while len(starts) < n_starts:
        if base is not None and len(starts) % 2 == 1:
            cand = base + rng.standard_normal(len(base)) * 0.1 * widths
            cand = np.clip(cand, lo_s, hi_s)
        else:
            cand = rng.uniform(lo_s, hi_s)
        if family is Family.TRIPLE_LINEAR and cand[0] + cand[1] > 1.0:
            cand = cand.copy()
            cand[0], cand[1] = 1.0 - cand[0], 1.0 - cand[1]  # uniform triangle fold
        starts.append(cand)
    return starts


def ml_fit(
    counts: np.ndarray,
    family: Family,
    probe: ProbeConfig,
    config: MlConfig | None = None,
    seed: int | None = None,
) -> FitResult:
    """Maximum-likelihood fit of one frame (or of a noise-free expected-count
    map, for oracle checks; any non-negative real-valued frame is accepted).

    Returns the best start by NLL. Raises NonConvergenceError carrying the
    best partial FitResult when no start meets the gradient tolerance.
    """
    cfg = config or MlConfig()
    if cfg.multistart < 1:
        raise InvalidArgumentError(f"multistart must be >= 1, got {cfg.multistart}")
    k = np.asarray(counts, dtype=np.float64)
    side = probe.grid.side
    if k.shape != (side, side):
        raise DimensionMismatchError(f"frame shape {k.shape} does not match side {side}")
    if not np.all(np.isfinite(k)) or (k.size and k.min() < 0):
        raise InvalidArgumentError("counts must be finite and non-negative")

    grid = probe.grid
    pos = k > 0
    kp = k[pos]
    floor = float(k.sum() - np.dot(kp, np.log(kp)) if kp.size else 0.0)
    floor_tol = cfg.floor_rel_tol * (1.0 + abs(floor))

    rng = philox_generator(cfg.seed if seed is None else seed)
    starts = _build_starts(k, family, grid, cfg.multistart, rng)

    best: FitResult | None = None
    for s_idx, x0 in enumerate(starts):
        x, nll, grad_max, iters, converged = _lm_minimize(x0, family, grid, probe, k, pos, cfg)
        result = FitResult(
            theta=canonical_form(ParamVector(family, x)),
            converged=converged,
            iterations=iters,
            nll=nll,
            grad_max=grad_max,
            start_index=s_idx,
        )
        if best is None or result.nll < best.nll:
            best = result
        if best.converged and best.nll <= floor + floor_tol:
            break  # certified global optimum: NLL cannot go below the floor

    assert best is not None
    if not best.converged:
        # The deepest start stalled; continue it with a fresh iteration
        # budget rather than discarding the basin.
        x, nll, grad_max, iters, converged = _lm_minimize(
            best.theta.values, family, grid, probe, k, pos, cfg
        )
        if converged or nll < best.nll:
            best = FitResult(
                theta=canonical_form(ParamVector(family, x)),
                converged=converged,
                iterations=best.iterations + iters,
                nll=nll,
                grad_max=grad_max,
                start_index=best.start_index,
            )
    if not best.converged:
        raise NonConvergenceError(
            f"no start converged within {cfg.max_iter} iterations "
            f"(best grad max-norm {best.grad_max:.3e} vs tol {cfg.grad_tol:g})",
            best=best,
        )
    return best


def reconstruct(theta: ParamVector, grid: GridSpec) -> np.ndarray:
    """Transmittance map of a fitted parameter vector."""
    return transmittance(theta, grid)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructionEnsemble:
    """Stack of per-frame reconstructions plus bookkeeping.

    ``failures`` lists (frame index, reason) for frames whose fit did not
    converge; their best-partial reconstructions stay in the stack so the
    record is complete and the caller decides how to score them.
    """

    images: np.ndarray
    estimator: str
    clip_fraction: float = 0.0
    fits: tuple | None = None
    failures: tuple = ()
    provenance: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.images.shape[0]


def _frames_array(frames) -> np.ndarray:
    arr = frames.counts if hasattr(frames, "counts") else np.asarray(frames)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected (F, side, side) frames, got shape {arr.shape}")
    return arr


def run_plugin_ensemble(frames, probe: ProbeConfig) -> ReconstructionEnsemble:
    """Plug-in inversion of every frame."""
    arr = _frames_array(frames)
    out = np.empty(arr.shape, dtype=np.float64)
    clipped = 0
    scale = probe.n_bar * probe.grid.pixel_weight
    illum = probe.illumination_map()
    lit = illum > 0
    for i in range(arr.shape[0]):
        ratio = np.zeros_like(out[i])
        ratio[lit] = arr[i][lit] / (scale * illum[lit])
        if probe.convention is Convention.AMPLITUDE_SQUARED:
            ratio = np.sqrt(ratio)
        clipped += int((ratio > 1.0).sum())
        out[i] = np.clip(ratio, 0.0, 1.0)
    return ReconstructionEnsemble(
        images=out,
        estimator="plugin",
        clip_fraction=clipped / out.size,
        provenance={"convention": probe.convention.value, "n_bar": probe.n_bar},
    )


def run_ml_ensemble(
    frames,
    family: Family,
    probe: ProbeConfig,
    config: MlConfig | None = None,
    processes: int = 1,
) -> ReconstructionEnsemble:
    """ML fit of every frame; frame i uses the stream derived_seed(cfg.seed, i).

    Non-converged frames are kept (best partial reconstruction) and recorded
    in ``failures``. ``processes`` > 1 fans frames out to worker processes;
    per-frame seeding makes the output identical to the sequential run.
    """
    cfg = config or MlConfig()
    arr = _frames_array(frames)
    n = arr.shape[0]
    jobs = [(arr[i], family, probe, cfg, derived_seed(cfg.seed, i)) for i in range(n)]

    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            outcomes = list(pool.map(_fit_worker, jobs, chunksize=max(1, n // (4 * processes))))
    else:
        outcomes = [_fit_worker(job) for job in jobs]

    images = np.empty(arr.shape, dtype=np.float64)
    fits: list[FitResult] = []
    failures: list[tuple[int, str]] = []
    for i, (fit, err) in enumerate(outcomes):
        fits.append(fit)
        images[i] = reconstruct(fit.theta, probe.grid)
        if err is not None:
            failures.append((i, err))
    return ReconstructionEnsemble(
        images=images,
        estimator="ml",
        fits=tuple(fits),
        failures=tuple(failures),
        provenance={
            "convention": probe.convention.value,
            "n_bar": probe.n_bar,
            "family": family.value,
            "multistart": cfg.multistart,
        },
    )


def _fit_worker(job):
    counts, family, probe, cfg, seed = job
    try:
        return ml_fit(counts, family, probe, cfg, seed=seed), None
    except NonConvergenceError as exc:
        return exc.best, str(exc)


def run_ensemble(
    estimator: str,
    frames,
    probe: ProbeConfig,
    family: Family | None = None,
    config: MlConfig | None = None,
    processes: int = 1,
) -> ReconstructionEnsemble:
    """Dispatch on estimator name: "plugin" or "ml"."""
    if estimator == "plugin":
        return run_plugin_ensemble(frames, probe)
    if estimator == "ml":
        if family is None:
            raise InvalidArgumentError("ml estimator needs the object family")
        return run_ml_ensemble(frames, family, probe, config, processes)
    raise InvalidArgumentError(f"unknown estimator {estimator!r}; expected 'plugin' or 'ml'")


# ---------------------------------------------------------------------------
# External reconstructions
# ---------------------------------------------------------------------------


def write_reconstructions(ens: ReconstructionEnsemble, path) -> None:
    """Serialize reconstructions as f32le IMGX."""
    imgx.write_imgx(path, ens.images, "f32le")


def load_external_reconstructions(path, grid: GridSpec | None = None) -> ReconstructionEnsemble:
    """Ingest reconstructions produced outside this package (IMGX f32le).

    Values outside [0, 1] are clipped and counted; a well-behaved producer
    (bounded output activation) yields clip_fraction == 0.
    """
    data, header = imgx.read_imgx(path)
    if header["dtype"] != "f32le":
        raise FormatError(f"reconstructions must be f32le, got {header['dtype']}")
    if grid is not None and (header["height"], header["width"]) != (grid.side, grid.side):
        raise DimensionMismatchError(
            f"reconstructions are {header['height']}x{header['width']}, "
            f"grid expects {grid.side}x{grid.side}"
        )
    images = np.asarray(data, dtype=np.float64)
    outside = int(((images < 0.0) | (images > 1.0)).sum())
    images = np.clip(images, 0.0, 1.0)
    return ReconstructionEnsemble(
        images=images,
        estimator="external",
        clip_fraction=outside / images.size,
        provenance={"path": str(path)},
    )
