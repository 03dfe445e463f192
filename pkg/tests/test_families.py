"""Object families: closed-form spot checks, an independent finite-difference
oracle for the analytic Jacobian, sampling contracts, and the canonical-form
image-invariance guarantee."""

import math

import numpy as np
import pytest

from conftest import REP_THETAS, rep_theta
from qcrbench import Family, ParamVector, make_grid
from qcrbench.errors import InvalidArgumentError
from qcrbench.families import (
    N_PARAMS,
    PARAM_NAMES,
    analytic_jacobian,
    canonical_form,
    default_bounds,
    eval_raw,
    eval_raw_batch,
    sample_params,
    theta_from_json,
    theta_to_json,
    to_transmittance,
    transmittance,
)

ALL_FAMILIES = list(Family)


# ---------------------------------------------------------------------------
# Closed-form evaluation
# ---------------------------------------------------------------------------


def test_single_linear_matches_scalar_formula(grid8):
    omega, phi = 0.3, 0.7
    theta = ParamVector(Family.SINGLE_LINEAR, [omega, 0.0, phi])
    f = eval_raw(theta, grid8)
    for i in range(8):
        for j in range(8):
            x = j - 4  # beta = 0: the field depends on x alone
            assert f[i, j] == pytest.approx(math.sin(omega * (x + phi)), abs=1e-15)


def test_single_linear_rotates_with_beta(grid8):
    theta = ParamVector(Family.SINGLE_LINEAR, [0.2, math.pi / 2, 0.4])
    f = eval_raw(theta, grid8)
    for i in range(8):
        for j in range(8):
            y = i - 4  # beta = pi/2 projects onto y
            assert f[i, j] == pytest.approx(math.sin(0.2 * (y + 0.4)), abs=1e-12)


def test_double_linear_amplitude_mix(grid8):
    comp1, comp2 = [0.04, 0.3, 0.5], [0.07, -1.1, 0.2]
    full = ParamVector(Family.DOUBLE_LINEAR, [1.0] + comp1 + comp2)
    only1 = ParamVector(Family.SINGLE_LINEAR, comp1)
    np.testing.assert_allclose(eval_raw(full, grid8), eval_raw(only1, grid8), atol=1e-15)
    empty = ParamVector(Family.DOUBLE_LINEAR, [0.0] + comp1 + comp2)
    only2 = ParamVector(Family.SINGLE_LINEAR, comp2)
    np.testing.assert_allclose(eval_raw(empty, grid8), eval_raw(only2, grid8), atol=1e-15)


def test_radial_phase_is_additive(grid8):
    omega, phi = 0.25, 0.9
    theta = ParamVector(Family.DOUBLE_RADIAL, [1.0, omega, phi, 0.1, 0.0, 2.0, 1.0])
    f = eval_raw(theta, grid8)
    for i in range(8):
        for j in range(8):
            r = math.hypot(j - 4, i - 4)
            assert f[i, j] == pytest.approx(math.sin(omega * r + phi), abs=1e-15)


def test_raw_field_and_transmittance_ranges():
    grid = make_grid(8)
    for family in ALL_FAMILIES:
        box = default_bounds(family, grid)
        for seed in range(30):
            theta = sample_params(family, box, seed)
            f = eval_raw(theta, grid)
            assert f.min() >= -1.0 - 1e-12 and f.max() <= 1.0 + 1e-12
            T = transmittance(theta, grid)
            assert T.min() >= 0.0 and T.max() <= 1.0


def test_to_transmittance_midpoint():
    np.testing.assert_array_equal(to_transmittance(np.zeros((4, 4))), np.full((4, 4), 0.5))
    assert to_transmittance(np.array([[1.0, -1.0]])).tolist() == [[1.0, 0.0]]


def test_to_transmittance_rejects_out_of_range():
    with pytest.raises(InvalidArgumentError):
        to_transmittance(np.array([[1.5]]))
    with pytest.raises(InvalidArgumentError):
        to_transmittance(np.array([[np.nan]]))


def test_eval_raw_batch_matches_single(grid8):
    family = Family.DOUBLE_LINEAR
    box = default_bounds(family, grid8)
    stack = np.stack([sample_params(family, box, s).values for s in range(4)])
    batch = eval_raw_batch(family, stack, grid8)
    for row, values in zip(batch, stack):
        np.testing.assert_array_equal(row, eval_raw(ParamVector(family, values), grid8))


# ---------------------------------------------------------------------------
# Analytic Jacobian against a finite-difference oracle
# ---------------------------------------------------------------------------


def fd_jacobian(theta: ParamVector, grid, h_scale: float = 1e-6) -> np.ndarray:
    """Central differences of T = (1 + f)/2 on the unclipped raw field."""
    base = theta.values
    rows = []
    for k in range(theta.n_params):
        h = h_scale * max(1.0, abs(base[k]))
        plus = base.copy(); plus[k] += h
        minus = base.copy(); minus[k] -= h
        df = eval_raw(ParamVector(theta.family, plus), grid) - eval_raw(
            ParamVector(theta.family, minus), grid
        )
        rows.append(0.5 * df / (2.0 * h))
    return np.stack(rows)


@pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f.value)
def test_analytic_jacobian_matches_finite_differences(family):
    grid = make_grid(16)
    box = default_bounds(family, grid)
    thetas = [rep_theta(family)] + [sample_params(family, box, s) for s in (11, 12)]
    for theta in thetas:
        J = analytic_jacobian(theta, grid)
        J_fd = fd_jacobian(theta, grid)
        scale = max(np.abs(J).max(), 1.0)
        assert np.abs(J - J_fd).max() / scale < 1e-6


def test_jacobian_shape_and_validation(grid8):
    theta = rep_theta(Family.TRIPLE_LINEAR)
    assert analytic_jacobian(theta, grid8).shape == (11, 8, 8)
    with pytest.raises(InvalidArgumentError):
        ParamVector(Family.TRIPLE_LINEAR, [0.1] * 10)


# ---------------------------------------------------------------------------
# Parameter vectors, bounds, sampling
# ---------------------------------------------------------------------------


def test_param_vector_validation():
    with pytest.raises(InvalidArgumentError):
        ParamVector(Family.SINGLE_LINEAR, [0.1, 0.2])
    with pytest.raises(InvalidArgumentError):
        ParamVector(Family.SINGLE_LINEAR, [0.1, 0.2, np.inf])


def test_param_vector_is_immutable():
    theta = rep_theta(Family.SINGLE_LINEAR)
    with pytest.raises(ValueError):
        theta.values[0] = 9.0


def test_param_vector_as_dict_preserves_order():
    theta = rep_theta(Family.RADIAL_LINEAR)
    assert list(theta.as_dict()) == list(PARAM_NAMES[Family.RADIAL_LINEAR])
    assert theta.as_dict()["omega_r"] == pytest.approx(0.04)


def test_default_bounds_values():
    grid = make_grid(64)
    box = default_bounds(Family.SINGLE_LINEAR, grid)
    np.testing.assert_allclose(box.lower, [0.5 / 64, -np.pi, -np.pi])
    np.testing.assert_allclose(box.upper, [4.0 / 64, np.pi, np.pi])
    ring = default_bounds(Family.DOUBLE_RADIAL, grid)
    assert ring.lower[5] == -32.0 and ring.upper[6] == 32.0
    assert ring.lower[0] == 0.0 and ring.upper[0] == 1.0


def test_sample_params_deterministic_and_in_box():
    grid = make_grid(64)
    for family in ALL_FAMILIES:
        box = default_bounds(family, grid)
        a = sample_params(family, box, 42)
        b = sample_params(family, box, 42)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, sample_params(family, box, 43).values)
        for seed in range(200):
            assert box.contains(sample_params(family, box, seed))


def test_triple_linear_amplitudes_stay_constrained():
    grid = make_grid(64)
    box = default_bounds(Family.TRIPLE_LINEAR, grid)
    for seed in range(300):
        v = sample_params(Family.TRIPLE_LINEAR, box, seed).values
        assert v[0] + v[1] <= 1.0


def test_sample_params_rejects_family_mismatch():
    grid = make_grid(8)
    box = default_bounds(Family.SINGLE_LINEAR, grid)
    with pytest.raises(InvalidArgumentError):
        sample_params(Family.DOUBLE_LINEAR, box, 0)


# ---------------------------------------------------------------------------
# Canonical form: must never change the rendered image
# ---------------------------------------------------------------------------


def test_canonical_form_preserves_image_from_far_representatives():
    # Regression: an optimizer once returned this exact point, an
    # image-equivalent of a near-origin vector reached by wandering many
    # phase periods out in the (beta, phi) covering space. Wrapping phi by
    # 2*pi here changes the image; the correct period is 2*pi/omega.
    grid = make_grid(64)
    raw = ParamVector(Family.SINGLE_LINEAR, [0.04704, 79.2215790, -1671.02237])
    can = canonical_form(raw)
    np.testing.assert_allclose(
        transmittance(can, grid), transmittance(raw, grid), atol=1e-12
    )
    assert -np.pi <= can.values[1] < np.pi


@pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f.value)
def test_canonical_form_preserves_image_everywhere(family):
    grid = make_grid(16)
    box = default_bounds(family, grid)
    rng = np.random.default_rng(5)
    for seed in range(40):
        v = sample_params(family, box, seed).values.copy()
        for j, name in enumerate(PARAM_NAMES[family]):
            if name.startswith(("beta", "phi")):
                v[j] += float(rng.normal(0.0, 60.0))
        theta = ParamVector(family, v)
        can = canonical_form(theta)
        np.testing.assert_allclose(
            transmittance(can, grid), transmittance(theta, grid), atol=1e-11
        )


def test_canonical_form_is_idempotent_and_fixes_in_box_vectors():
    for family in ALL_FAMILIES:
        theta = rep_theta(family)
        once = canonical_form(theta)
        np.testing.assert_array_equal(once.values, theta.values)
        np.testing.assert_array_equal(canonical_form(once).values, once.values)


def test_canonical_form_sorts_components_by_frequency():
    swapped = ParamVector(
        Family.DOUBLE_LINEAR, [0.4, 0.055, 2.1, 0.8, 0.03, 0.4, -0.5]
    )
    can = canonical_form(swapped)
    np.testing.assert_allclose(
        can.values, [0.6, 0.03, 0.4, -0.5, 0.055, 2.1, 0.8], atol=1e-15
    )
    np.testing.assert_allclose(
        transmittance(can, make_grid(16)),
        transmittance(swapped, make_grid(16)),
        atol=1e-13,
    )


def test_canonical_form_wraps_each_phase_by_its_own_period():
    # linear phase: period 2*pi/omega
    omega = 0.05
    base = ParamVector(Family.SINGLE_LINEAR, [omega, 0.7, 1.2])
    shifted = ParamVector(Family.SINGLE_LINEAR, [omega, 0.7, 1.2 + 2 * np.pi / omega])
    np.testing.assert_allclose(canonical_form(shifted).values, base.values, atol=1e-9)
    # radial phase: period 2*pi
    ring = ParamVector(Family.DOUBLE_RADIAL, [0.55, 0.04, 0.5 + 2 * np.pi, 0.05, -0.9, 5.0, -7.0])
    assert canonical_form(ring).values[2] == pytest.approx(0.5, abs=1e-12)


def test_linear_phase_periodicity_of_the_image():
    grid = make_grid(16)
    omega = 0.11
    a = ParamVector(Family.SINGLE_LINEAR, [omega, -0.4, 0.3])
    b = ParamVector(Family.SINGLE_LINEAR, [omega, -0.4, 0.3 + 2 * np.pi / omega])
    assert np.abs(eval_raw(a, grid) - eval_raw(b, grid)).max() < 1e-12


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def test_theta_json_roundtrip():
    for family in ALL_FAMILIES:
        theta = rep_theta(family)
        back = theta_from_json(theta_to_json(theta))
        assert back.family is family
        np.testing.assert_array_equal(back.values, theta.values)


def test_theta_from_json_rejects_unknown_family():
    with pytest.raises(InvalidArgumentError):
        theta_from_json('{"family": "septuple-helical", "values": [1, 2, 3]}')


def test_n_params_table_matches_names():
    for family in ALL_FAMILIES:
        assert N_PARAMS[family] == len(PARAM_NAMES[family])
        assert N_PARAMS[family] == len(REP_THETAS[family])
