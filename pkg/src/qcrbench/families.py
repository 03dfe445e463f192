"""Parameterized object families and their transmittance maps.

Objects are superpositions of sinusoids evaluated on the centered pixel
lattice. Each family produces a raw field f(x, y) in [-1, 1] whose component
amplitudes are constrained to sum to 1 (the last amplitude is never a free
parameter), and the physical object is the transmittance map
T = (1 + f) / 2 in [0, 1].

Two building blocks appear:

* linear sinusoid: a * sin(w * (x cos(b) + y sin(b) + p)) -- the phase p sits
  inside the frequency factor, so the image is invariant under p -> p + 2*pi/w
  (exactly in real arithmetic; to roundoff in float64).
* radial sinusoid: a * sin(w * r + p) with r the distance to the ring center
  (the grid origin, or a free center (x0, y0)) -- here the phase is additive.

Free parameter vectors, in order:

* single-linear  (3):  w1, b1, p1                      (a1 = 1 fixed)
* double-linear  (7):  a1, w1, b1, p1, w2, b2, p2      (a2 = 1 - a1)
* triple-linear  (11): a1, a2, w1, b1, p1, w2, b2, p2, w3, b3, p3
* radial-linear  (6):  a1, wr, pr, wl, bl, pl          (radial amp a1)
* double-radial  (7):  a1, w1, p1, w2, p2, x0, y0      (second ring offset)

``eval_raw`` and ``analytic_jacobian`` validate structure (family, length,
finiteness) but deliberately not box bounds: Monte-Carlo bound propagation
renders Normal-perturbed parameter vectors that may leave the sampling box.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    FormatError,
    InvalidArgumentError,
)
from .grid import GridSpec


class Family(enum.Enum):
    SINGLE_LINEAR = "single-linear"
    DOUBLE_LINEAR = "double-linear"
    TRIPLE_LINEAR = "triple-linear"
    RADIAL_LINEAR = "radial-linear"
    DOUBLE_RADIAL = "double-radial"

    @classmethod
    def from_name(cls, name: str) -> "Family":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise InvalidArgumentError(f"unknown family {name!r}; expected one of: {valid}")


PARAM_NAMES: dict[Family, tuple[str, ...]] = {
    Family.SINGLE_LINEAR: ("omega1", "beta1", "phi1"),
    Family.DOUBLE_LINEAR: ("a1", "omega1", "beta1", "phi1", "omega2", "beta2", "phi2"),
    Family.TRIPLE_LINEAR: (
        "a1", "a2",
        "omega1", "beta1", "phi1",
        "omega2", "beta2", "phi2",
        "omega3", "beta3", "phi3",
    ),
    Family.RADIAL_LINEAR: ("a1", "omega_r", "phi_r", "omega_l", "beta_l", "phi_l"),
    Family.DOUBLE_RADIAL: ("a1", "omega1", "phi1", "omega2", "phi2", "x0", "y0"),
}

N_PARAMS: dict[Family, int] = {fam: len(names) for fam, names in PARAM_NAMES.items()}


@dataclass(frozen=True)
class ParamVector:
    """A family tag plus its ordered free-parameter values."""

    family: Family
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.shape[0] != N_PARAMS[self.family]:
            raise InvalidArgumentError(
                f"{self.family.value} takes {N_PARAMS[self.family]} parameters, "
                f"got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError(f"non-finite parameter values: {vals}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_params(self) -> int:
        return self.values.shape[0]

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(PARAM_NAMES[self.family], self.values)}

    def replace_values(self, values) -> "ParamVector":
        return ParamVector(self.family, np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class ParamBounds:
    """Per-parameter closed box [lower, upper], aligned with PARAM_NAMES order."""

    family: Family
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        n = N_PARAMS[self.family]
        if lo.shape != (n,) or hi.shape != (n,):
            raise InvalidArgumentError(
                f"bounds for {self.family.value} must have shape ({n},)"
            )
        if not np.all(lo < hi):
            raise InvalidArgumentError("each lower bound must be below its upper bound")
        lo = lo.copy(); hi = hi.copy()
        lo.setflags(write=False); hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, theta: ParamVector) -> bool:
        v = theta.values
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))


def default_bounds(family: Family, grid: GridSpec) -> ParamBounds:
    """Sampling box for a family on a given grid.

    Amplitudes in [0, 1]; frequencies in [0.5/side, 4.0/side] radians/pixel;
    angles and phases in [-pi, pi]; ring-center offsets in [-side/2, side/2].
    """
    side = grid.side
    per_name = {
        "a": (0.0, 1.0),
        "omega": (0.5 / side, 4.0 / side),
        "beta": (-np.pi, np.pi),
        "phi": (-np.pi, np.pi),
        "center": (-side / 2.0, side / 2.0),
    }
    lo, hi = [], []
    for name in PARAM_NAMES[family]:
        if name.startswith("a"):
            key = "a"
        elif name.startswith("omega"):
            key = "omega"
        elif name.startswith("beta"):
            key = "beta"
        elif name.startswith("phi"):
            key = "phi"
        else:  # x0, y0
            key = "center"
        lo.append(per_name[key][0])
        hi.append(per_name[key][1])
    return ParamBounds(family, np.array(lo), np.array(hi))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _check_values(family: Family, values: np.ndarray) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape[-1] != N_PARAMS[family]:
        raise InvalidArgumentError(
            f"{family.value} takes {N_PARAMS[family]} parameters, got {vals.shape[-1]}"
        )
    if not np.all(np.isfinite(vals)):
        raise InvalidArgumentError("non-finite parameter values")
    return vals


def _eval_values(family: Family, vals: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Core field evaluation; vals is (..., n_params), broadcast over leading axes."""
    v = vals[..., None, None]  # broadcast each parameter against the grid

    if family is Family.SINGLE_LINEAR:
        w, b, p = v[..., 0, :, :], v[..., 1, :, :], v[..., 2, :, :]
        return np.sin(w * (X * np.cos(b) + Y * np.sin(b) + p))

    if family is Family.DOUBLE_LINEAR:
        a1 = v[..., 0, :, :]
        out = 0.0
        for amp, k in ((a1, 1), (1.0 - a1, 4)):
            w, b, p = v[..., k, :, :], v[..., k + 1, :, :], v[..., k + 2, :, :]
            out = out + amp * np.sin(w * (X * np.cos(b) + Y * np.sin(b) + p))
        return out

    if family is Family.TRIPLE_LINEAR:
        a1, a2 = v[..., 0, :, :], v[..., 1, :, :]
        a3 = 1.0 - a1 - a2
        out = 0.0
        for amp, k in ((a1, 2), (a2, 5), (a3, 8)):
            w, b, p = v[..., k, :, :], v[..., k + 1, :, :], v[..., k + 2, :, :]
            out = out + amp * np.sin(w * (X * np.cos(b) + Y * np.sin(b) + p))
        return out

    if family is Family.RADIAL_LINEAR:
        a1 = v[..., 0, :, :]
        r = np.hypot(X, Y)
        s_r = np.sin(v[..., 1, :, :] * r + v[..., 2, :, :])
        wl, bl, pl = v[..., 3, :, :], v[..., 4, :, :], v[..., 5, :, :]
        s_l = np.sin(wl * (X * np.cos(bl) + Y * np.sin(bl) + pl))
        return a1 * s_r + (1.0 - a1) * s_l

    if family is Family.DOUBLE_RADIAL:
        a1 = v[..., 0, :, :]
        r1 = np.hypot(X, Y)
        s1 = np.sin(v[..., 1, :, :] * r1 + v[..., 2, :, :])
        r2 = np.hypot(X - v[..., 5, :, :], Y - v[..., 6, :, :])
        s2 = np.sin(v[..., 3, :, :] * r2 + v[..., 4, :, :])
        return a1 * s1 + (1.0 - a1) * s2

    raise InvalidArgumentError(f"unhandled family {family}")


def eval_raw(theta: ParamVector, grid: GridSpec) -> np.ndarray:
    """Evaluate the raw field f(x, y) on the grid; shape (side, side).

    In-box amplitudes guarantee f in [-1, 1]; out-of-box values evaluate the
    same formula without a range promise.
    """
    X, Y = grid.coords()
    return _eval_values(theta.family, _check_values(theta.family, theta.values), X, Y)


def eval_raw_batch(family: Family, values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Evaluate a (batch, n_params) stack of parameter vectors; (batch, side, side)."""
    vals = _check_values(family, np.atleast_2d(values))
    X, Y = grid.coords()
    return _eval_values(family, vals, X, Y)


def to_transmittance(raw: np.ndarray) -> np.ndarray:
    """Map a raw field in [-1, 1] to transmittance (1 + f) / 2 in [0, 1].

    Inputs outside [-1, 1] by more than float roundoff are rejected; the
    roundoff margin (1e-12, from summing constrained amplitude products) is
    clipped away so the result is always inside [0, 1].
    """
    f = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise InvalidArgumentError("raw field contains non-finite values")
    if f.size and (f.min() < -1.0 - 1e-12 or f.max() > 1.0 + 1e-12):
        raise InvalidArgumentError(
            f"raw field outside [-1, 1]: min {f.min():.6g}, max {f.max():.6g}"
        )
    return (1.0 + np.clip(f, -1.0, 1.0)) / 2.0


def transmittance(theta: ParamVector, grid: GridSpec) -> np.ndarray:
    """Convenience: transmittance map of a parameter vector."""
    return to_transmittance(eval_raw(theta, grid))


# ---------------------------------------------------------------------------
# Analytic Jacobian
# ---------------------------------------------------------------------------


def _linear_parts(w, b, p, X, Y):
    u = X * np.cos(b) + Y * np.sin(b)
    arg = w * (u + p)
    return u, np.sin(arg), np.cos(arg)


def analytic_jacobian(theta: ParamVector, grid: GridSpec) -> np.ndarray:
    """Jacobian of the transmittance map, shape (n_params, side, side).

    Entry k is dT/dtheta_k = 0.5 * df/dtheta_k (the 0.5 from T = (1 + f)/2).
    Constrained amplitudes couple in: for triple-linear, df/da1 = s1 - s3 and
    df/da2 = s2 - s3 because a3 = 1 - a1 - a2 rides along.

    The offset-ring direction (x - x0)/r is taken as 0 at the (measure-zero)
    pixel where r = 0; everywhere else the expressions are exact.
    """
    fam = theta.family
    vals = _check_values(fam, theta.values)
    X, Y = grid.coords()
    rows: list[np.ndarray] = []

    if fam is Family.SINGLE_LINEAR:
        w, b, p = vals
        u, _, cos_arg = _linear_parts(w, b, p, X, Y)
        rows = [
            cos_arg * (u + p),                          # d/dw
            cos_arg * w * (-X * np.sin(b) + Y * np.cos(b)),  # d/db
            cos_arg * w,                                # d/dp
        ]

    elif fam is Family.DOUBLE_LINEAR:
        a1 = vals[0]
        comps = [vals[1:4], vals[4:7]]
        amps = [a1, 1.0 - a1]
        sins, comp_rows = [], []
        for (w, b, p), a in zip(comps, amps):
            u, sin_arg, cos_arg = _linear_parts(w, b, p, X, Y)
            sins.append(sin_arg)
            comp_rows.append([
                a * cos_arg * (u + p),
                a * cos_arg * w * (-X * np.sin(b) + Y * np.cos(b)),
                a * cos_arg * w,
            ])
        rows = [sins[0] - sins[1]] + comp_rows[0] + comp_rows[1]

    elif fam is Family.TRIPLE_LINEAR:
        a1, a2 = vals[0], vals[1]
        amps = [a1, a2, 1.0 - a1 - a2]
        sins, comp_rows = [], []
        for i, a in enumerate(amps):
            w, b, p = vals[2 + 3 * i: 5 + 3 * i]
            u, sin_arg, cos_arg = _linear_parts(w, b, p, X, Y)
            sins.append(sin_arg)
            comp_rows.append([
                a * cos_arg * (u + p),
                a * cos_arg * w * (-X * np.sin(b) + Y * np.cos(b)),
                a * cos_arg * w,
            ])
        rows = [sins[0] - sins[2], sins[1] - sins[2]]
        for comp in comp_rows:
            rows.extend(comp)

    elif fam is Family.RADIAL_LINEAR:
        a1, wr, pr, wl, bl, pl = vals
        r = np.hypot(X, Y)
        arg_r = wr * r + pr
        sin_r, cos_r = np.sin(arg_r), np.cos(arg_r)
        u, sin_l, cos_l = _linear_parts(wl, bl, pl, X, Y)
        al = 1.0 - a1
        rows = [
            sin_r - sin_l,
            a1 * cos_r * r,       # d/dwr
            a1 * cos_r,           # d/dpr
            al * cos_l * (u + pl),
            al * cos_l * wl * (-X * np.sin(bl) + Y * np.cos(bl)),
            al * cos_l * wl,
        ]

    elif fam is Family.DOUBLE_RADIAL:
        a1, w1, p1, w2, p2, x0, y0 = vals
        r1 = np.hypot(X, Y)
        s1, c1 = np.sin(w1 * r1 + p1), np.cos(w1 * r1 + p1)
        dx, dy = X - x0, Y - y0
        r2 = np.hypot(dx, dy)
        s2, c2 = np.sin(w2 * r2 + p2), np.cos(w2 * r2 + p2)
        a2 = 1.0 - a1
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(r2 > 0.0, dx / np.where(r2 > 0.0, r2, 1.0), 0.0)
            uy = np.where(r2 > 0.0, dy / np.where(r2 > 0.0, r2, 1.0), 0.0)
        rows = [
            s1 - s2,
            a1 * c1 * r1,         # d/dw1
            a1 * c1,              # d/dp1
            a2 * c2 * r2,         # d/dw2
            a2 * c2,              # d/dp2
            a2 * c2 * w2 * (-ux), # d/dx0
            a2 * c2 * w2 * (-uy), # d/dy0
        ]

    else:
        raise InvalidArgumentError(f"unhandled family {fam}")

    return 0.5 * np.stack(rows)


# ---------------------------------------------------------------------------
# Sampling and canonical form
# ---------------------------------------------------------------------------


def sample_params(family: Family, bounds: ParamBounds, seed: int) -> ParamVector:
    """Draw one parameter vector uniformly inside ``bounds``.

    Deterministic per seed (Philox counter stream). Parameters are drawn in
    declared order; triple-linear draws its (a1, a2) pair first and rejects
    until a1 + a2 <= 1 so all three amplitudes land in [0, 1].
    """
    if bounds.family is not family:
        raise InvalidArgumentError("bounds family does not match requested family")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    lo, hi = bounds.lower, bounds.upper

    if family is Family.TRIPLE_LINEAR:
        while True:
            a1, a2 = rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])
            if a1 + a2 <= 1.0:
                break
        rest = rng.uniform(lo[2:], hi[2:])
        return ParamVector(family, np.concatenate([[a1, a2], rest]))

    return ParamVector(family, rng.uniform(lo, hi))


def _wrap_angle(x) -> float:
    """Wrap to [-pi, pi); values already inside come back bit-identical."""
    x = float(x)
    if -np.pi <= x < np.pi:
        return x
    return float(np.mod(x + np.pi, 2.0 * np.pi) - np.pi)


def _wrap_linear_phase(p: float, w: float) -> float:
    """Wrap a linear component's phase to [-pi/w, pi/w).

    The phase rides inside the frequency factor, sin(w * (u + p)), so the
    image is periodic in p with period 2*pi/w, not 2*pi. Wrapping by any
    other period would change the rendered image. Values already inside the
    fundamental domain come back bit-identical. Non-positive frequencies
    make the phase unidentifiable; the value is returned unchanged then.
    """
    p = float(p)
    if w <= 0.0:
        return p
    half = np.pi / w
    if -half <= p < half:
        return p
    return float(np.mod(p + half, 2.0 * half) - half)


def canonical_form(theta: ParamVector) -> ParamVector:
    """Resolve reporting ambiguities without changing the image.

    Interchangeable sinusoid components (the linear multi-component families)
    are sorted by ascending frequency with their amplitudes carried along.
    Every angle is wrapped by its actual image period: orientation angles and
    radial phases by 2*pi, linear phases by 2*pi/w (see _wrap_linear_phase).
    The canonical vector therefore always renders the identical image.
    Radial-linear and double-radial components have distinct functional forms
    and are never swapped.

    One two-fold alias deliberately survives: flipping a linear component's
    orientation by pi while sending its phase p to (2n+1)*pi/w - p renders
    the same image, so a fit may report either representative. Collapsing it
    would require pi/w arithmetic that cannot be exactly image-preserving in
    floating point. Compare fits in image space, or modulo that flip.
    """
    fam = theta.family
    v = theta.values.copy()

    if fam is Family.SINGLE_LINEAR:
        v[1] = _wrap_angle(v[1]); v[2] = _wrap_linear_phase(v[2], v[0])
        return ParamVector(fam, v)

    if fam is Family.DOUBLE_LINEAR:
        comps = [(v[1], v[2], v[3], v[0]), (v[4], v[5], v[6], 1.0 - v[0])]
        comps.sort(key=lambda c: c[0])
        out = [comps[0][3]]
        for w, b, p, _ in comps:
            out.extend([w, _wrap_angle(b), _wrap_linear_phase(p, w)])
        return ParamVector(fam, np.array(out))

    if fam is Family.TRIPLE_LINEAR:
        amps = [v[0], v[1], 1.0 - v[0] - v[1]]
        comps = [(v[2 + 3 * i], v[3 + 3 * i], v[4 + 3 * i], amps[i]) for i in range(3)]
        comps.sort(key=lambda c: c[0])
        out = [comps[0][3], comps[1][3]]
        for w, b, p, _ in comps:
            out.extend([w, _wrap_angle(b), _wrap_linear_phase(p, w)])
        return ParamVector(fam, np.array(out))

    if fam is Family.RADIAL_LINEAR:
        v[2] = _wrap_angle(v[2]); v[4] = _wrap_angle(v[4])
        v[5] = _wrap_linear_phase(v[5], v[3])
        return ParamVector(fam, v)

    # double-radial: both phases are additive, so their period really is 2*pi
    v[2] = _wrap_angle(v[2]); v[4] = _wrap_angle(v[4])
    return ParamVector(fam, v)


# ---------------------------------------------------------------------------
# External rasters
# ---------------------------------------------------------------------------


def load_raster(path, grid: GridSpec) -> np.ndarray:
    """Load a transmittance map from an exchange file or an 8-bit P5 PGM.

    PGM samples are rescaled by 1/maxval so the result lies in [0, 1];
    exchange-format floats must already be in [0, 1] and are passed through
    unchanged (write-then-read roundtrips preserve 32-bit values). The image
    dimensions must equal the grid exactly; no resampling is performed.
    """
    from . import imgx  # local import: imgx has no reason to know about families

    with open(path, "rb") as fh:
        head = fh.read(2)

    if head == b"P5":
        img = _read_pgm(path)
    elif head[:1] == b"{":
        data, header = imgx.read_imgx(path)
        if header["frames"] != 1:
            raise InvalidArgumentError(
                f"expected a single-frame raster, file holds {header['frames']} frames"
            )
        if header["dtype"] != "f32le":
            raise FormatError(f"raster exchange files must be f32le, got {header['dtype']}")
        img = np.asarray(data[0], dtype=np.float64)
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise FormatError(
                f"raster values outside [0, 1]: min {img.min():.6g}, max {img.max():.6g}"
            )
    else:
        raise FormatError(f"unrecognized raster file (leading bytes {head!r})")

    if img.shape != (grid.side, grid.side):
        raise DimensionMismatchError(
            f"raster is {img.shape[0]}x{img.shape[1]}, grid expects {grid.side}x{grid.side}"
        )
    return img


def _read_pgm(path) -> np.ndarray:
    """Minimal binary (P5) PGM reader, 8-bit only."""
    with open(path, "rb") as fh:
        blob = fh.read()

    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line
    tokens, i = [], 0
    while len(tokens) < 4:
        if i >= len(blob):
            raise FormatError("truncated PGM header")
        c = blob[i:i + 1]
        if c == b"#":
            while i < len(blob) and blob[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
                j += 1
            tokens.append(blob[i:j])
            i = j
    i += 1  # single whitespace byte after maxval, then raster data

    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PGM header tokens {tokens[1:]!r}") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"non-positive PGM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit PGM supported, maxval {maxval}")

    data = blob[i:]
    if len(data) != width * height:
        raise FormatError(
            f"PGM payload holds {len(data)} bytes, header promises {width * height}"
        )
    img = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / float(maxval)


def theta_to_json(theta: ParamVector) -> str:
    """Serialize a parameter vector as a compact JSON object."""
    return json.dumps(
        {"family": theta.family.value, "values": [float(v) for v in theta.values]}
    )


def theta_from_json(text: str) -> ParamVector:
    obj = json.loads(text)
    return ParamVector(Family.from_name(obj["family"]), np.asarray(obj["values"]))
