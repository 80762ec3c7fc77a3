"""Exact geometry of the model space R x_A R^d with diagonal A.

Points carry coordinates (y, x) with y the height and x in R^d.  The
left-invariant metric is

    g = dy^2 + sum_i exp(-2*lam_i*y) dx_i^2,

so every metric quantity is an explicit function of the height alone.
Curves t -> (t, x) are unit-speed geodesics ("vertical geodesics").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePlaneError, IntegrationBlowupError

__all__ = [
    "HeintzeGroup",
    "Point",
    "TangentVector",
    "GeodesicState",
    "GeodesicPath",
    "metric_inner",
    "metric_norm",
    "covariant_derivative",
    "geodesic_rhs",
    "integrate_geodesic",
    "sectional_curvature_fd",
    "isometry_tau",
    "isometry_T",
]

# Index 0 is the height direction; indices 1..d are the abelian directions.
Y_INDEX = 0


@dataclass(frozen=True)
class HeintzeGroup:
    """Model parameters: dimension d and positive exponents lam_1 <= ... <= lam_d.

    The growth exponent of the non-flat horospheres is
    k = (lam_1 + ... + lam_d) / lam_1 >= d, with equality iff all
    exponents coincide.
    """

    lambdas: tuple

    def __init__(self, lambdas):
        lams = tuple(float(l) for l in lambdas)
        if len(lams) < 1:
            raise ValueError("need at least one exponent")
        if any(not np.isfinite(l) or l <= 0.0 for l in lams):
            raise ValueError(f"exponents must be finite and positive, got {lams}")
        object.__setattr__(self, "lambdas", tuple(sorted(lams)))

    @property
    def d(self) -> int:
        return len(self.lambdas)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.lambdas)

    @property
    def lambda_min(self) -> float:
        return self.lambdas[0]

    @property
    def lambda_max(self) -> float:
        return self.lambdas[-1]

    @property
    def trace(self) -> float:
        return float(sum(self.lambdas))

    @property
    def growth_exponent(self) -> float:
        """k = (lam_1 + ... + lam_d) / lam_1."""
        return self.trace / self.lambda_min

    def __repr__(self):
        return f"HeintzeGroup(lambdas={self.lambdas})"


@dataclass(frozen=True)
class Point:
    """Ambient point (y, x)."""

    y: float
    x: tuple

    def __init__(self, y, x):
        y = float(y)
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))
        if not np.isfinite(y) or not all(np.isfinite(v) for v in x):
            raise ValueError(f"non-finite point ({y}, {x})")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate(([self.y], self.x))

    def __repr__(self):
        xs = ", ".join(f"{v:.6g}" for v in self.x)
        return f"Point(y={self.y:.6g}, x=({xs}))"


ORIGIN_CACHE: dict = {}


def origin(d: int) -> Point:
    """Base point o = (0, 0)."""
    if d not in ORIGIN_CACHE:
        ORIGIN_CACHE[d] = Point(0.0, np.zeros(d))
    return ORIGIN_CACHE[d]


@dataclass(frozen=True)
class TangentVector:
    """Velocity (v, u) attached at a base point."""

    base: Point
    v: float
    u: tuple

    def __init__(self, base: Point, v, u):
        v = float(v)
        u = tuple(float(w) for w in np.atleast_1d(np.asarray(u, dtype=float)))
        if len(u) != len(base.x):
            raise ValueError("tangent dimension does not match base point")
        if not np.isfinite(v) or not all(np.isfinite(w) for w in u):
            raise ValueError("non-finite tangent components")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)

    @property
    def components(self) -> np.ndarray:
        return np.concatenate(([self.v], self.u))


@dataclass
class GeodesicState:
    """Position, velocity and the cached conserved horizontal momenta.

    Along an exact geodesic the quantities p_i = exp(-2*lam_i*y) * u_i
    and the speed are constant; the integrator reports their drift.
    """

    pos: Point
    v: float
    u: np.ndarray
    momenta: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.momenta is None:
            self.momenta = np.zeros_like(self.u)


@dataclass
class GeodesicPath:
    """RK4 trajectory with conservation diagnostics."""

    times: np.ndarray
    ys: np.ndarray
    xs: np.ndarray
    vs: np.ndarray
    us: np.ndarray
    speed_drift: float
    momentum_drift: float

    def state(self, k: int) -> GeodesicState:
        g = GeodesicState(Point(self.ys[k], self.xs[k]), self.vs[k], self.us[k])
        return g

    @property
    def endpoint(self) -> Point:
        return Point(self.ys[-1], self.xs[-1])


# ---------------------------------------------------------------------------
# metric


def metric_weights(group: HeintzeGroup, y):
    """Diagonal metric coefficients exp(-2*lam_i*y) at height(s) y.

    y may be scalar or any array; the exponent axis is appended last.
    """
    y = np.asarray(y, dtype=float)
    return np.exp(-2.0 * y[..., None] * group.lam)


def metric_inner(group: HeintzeGroup, p: Point, w1, w2) -> float:
    """g_p(w1, w2) = v1*v2 + sum_i exp(-2*lam_i*y) u1_i u2_i.

    ``w1`` and ``w2`` are (v, u)-component arrays of length d+1.
    """
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if w1.shape != (group.d + 1,) or w2.shape != (group.d + 1,):
        raise ValueError("tangent components must have length d+1")
    weights = np.exp(-2.0 * group.lam * p.y)
    return float(w1[0] * w2[0] + np.sum(weights * w1[1:] * w2[1:]))


def metric_norm(group: HeintzeGroup, p: Point, w) -> float:
    """||w||_p = sqrt(g_p(w, w))."""
    return float(np.sqrt(max(metric_inner(group, p, w, w), 0.0)))


def speed_squared(group: HeintzeGroup, y, v, u):
    """Batched ||(v,u)||^2 at heights y; shapes broadcast, u has a last axis d."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    return v**2 + np.sum(np.exp(-2.0 * y[..., None] * group.lam) * u**2, axis=-1)


# ---------------------------------------------------------------------------
# connection

def _field_index(group: HeintzeGroup, idx) -> int:
    """Normalize a coordinate-field label to 0 (height) or 1..d."""
    if isinstance(idx, str):
        s = idx.strip().lower()
        if s == "y":
            return 0
        if s.startswith("x"):
            idx = int(s[1:])
        else:
            raise ValueError(f"unknown coordinate field {idx!r}")
    idx = int(idx)
    if not 0 <= idx <= group.d:
        raise ValueError(f"field index {idx} outside 0..{group.d}")
    return idx


def covariant_derivative(group: HeintzeGroup, p: Point, field_a, field_b) -> np.ndarray:
    """Levi-Civita derivative of one coordinate field along another.

    With Y the height field and X_i the abelian fields, the four cases are:
      nabla_Y Y        = 0
      nabla_Y X_i      = nabla_{X_i} Y = -lam_i X_i
      nabla_{X_i} X_j  = 0                       (i != j)
      nabla_{X_i} X_i  = lam_i exp(-2*lam_i*y) Y

    Returns the (d+1)-component coefficient vector of the result.
    """
    a = _field_index(group, field_a)
    b = _field_index(group, field_b)
    out = np.zeros(group.d + 1)
    if a == 0 and b == 0:
        return out
    if a == 0 or b == 0:
        i = max(a, b)  # the non-height field
        out[i] = -group.lambdas[i - 1]
        return out
    if a != b:
        return out
    lam_i = group.lambdas[a - 1]
    out[0] = lam_i * np.exp(-2.0 * lam_i * p.y)
    return out


def christoffel_tensor(group: HeintzeGroup, y):
    """Gamma[a, b, c] with nabla_{e_a} e_b = sum_c Gamma[a,b,c] e_c, batched over y.

    Output has shape y.shape + (n, n, n) with n = d + 1.  Every
    coefficient is an explicit function of the height alone.
    """
    y = np.asarray(y, dtype=float)
    n = group.d + 1
    out = np.zeros(y.shape + (n, n, n))
    lam = group.lam
    for i in range(1, n):
        li = lam[i - 1]
        out[..., 0, i, i] = -li
        out[..., i, 0, i] = -li
        out[..., i, i, 0] = li * np.exp(-2.0 * li * y)
    return out


# ---------------------------------------------------------------------------
# geodesics

def geodesic_rhs(group: HeintzeGroup, state: GeodesicState):
    """Right-hand side of the geodesic equation.

    Setting the ambient acceleration to zero componentwise gives
        y'  = v
        x'  = u
        v'  = -sum_j lam_j u_j^2 exp(-2*lam_j*y)
        u_j' = 2*lam_j*u_j*v
    """
    lam = group.lam
    y = state.pos.y
    u = state.u
    w = np.exp(-2.0 * lam * y)
    dv = -float(np.sum(lam * u**2 * w))
    du = 2.0 * lam * u * state.v
    return state.v, np.array(state.pos.x), dv, du


def _rhs_arrays(lam, y, x, v, u):
    """Vectorized RHS on plain arrays (batch axes leading, u last axis d)."""
    w = np.exp(-2.0 * y[..., None] * lam)
    dv = -np.sum(lam * u**2 * w, axis=-1)
    du = 2.0 * lam * u * v[..., None]
    return v, u, dv, du


def integrate_geodesic(
    group: HeintzeGroup,
    state: GeodesicState,
    T: float,
    step: float = 1e-3,
) -> GeodesicPath:
    """Integrate the geodesic flow with fixed-step classical RK4.

    The conserved speed and momenta give a built-in error monitor; the
    returned path carries their maximal drift along the trajectory.
    Raises :class:`IntegrationBlowupError` if the state leaves the
    finite range.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if T < 0:
        raise ValueError("T must be nonnegative")
    lam = group.lam
    n_steps = int(np.ceil(T / step - 1e-12)) if T > 0 else 0
    y = np.array([state.pos.y])
    x = np.array([state.pos.x], dtype=float)
    v = np.array([state.v], dtype=float)
    u = np.array([state.u], dtype=float)

    times = np.empty(n_steps + 1)
    ys = np.empty(n_steps + 1)
    xs = np.empty((n_steps + 1, group.d))
    vs = np.empty(n_steps + 1)
    us = np.empty((n_steps + 1, group.d))
    times[0], ys[0], xs[0], vs[0], us[0] = 0.0, y[0], x[0], v[0], u[0]

    t = 0.0
    for k in range(n_steps):
        h = min(step, T - t)
        y, x, v, u = _rk4_step(lam, y, x, v, u, h)
        t += h
        if not (np.isfinite(y).all() and np.isfinite(x).all()
                and np.isfinite(v).all() and np.isfinite(u).all()):
            raise IntegrationBlowupError(times[k])
        times[k + 1], ys[k + 1], xs[k + 1], vs[k + 1], us[k + 1] = t, y[0], x[0], v[0], u[0]

    speeds = np.sqrt(speed_squared(group, ys, vs, us))
    momenta = np.exp(-2.0 * ys[:, None] * lam) * us
    speed_drift = float(np.max(np.abs(speeds - speeds[0])))
    momentum_drift = float(np.max(np.abs(momenta - momenta[0]), initial=0.0))
    return GeodesicPath(times, ys, xs, vs, us, speed_drift, momentum_drift)


def _rk4_step(lam, y, x, v, u, h):
    k1 = _rhs_arrays(lam, y, x, v, u)
    k2 = _rhs_arrays(lam, y + 0.5 * h * k1[0], x + 0.5 * h * k1[1],
                     v + 0.5 * h * k1[2], u + 0.5 * h * k1[3])
    k3 = _rhs_arrays(lam, y + 0.5 * h * k2[0], x + 0.5 * h * k2[1],
                     v + 0.5 * h * k2[2], u + 0.5 * h * k2[3])
    k4 = _rhs_arrays(lam, y + h * k3[0], x + h * k3[1],
                     v + h * k3[2], u + h * k3[3])
    y1 = y + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    x1 = x + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    v1 = v + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    u1 = u + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    return y1, x1, v1, u1


def integrate_geodesics_batch(group, y0, x0, v0, u0, T: float, step: float):
    """Batched RK4 over many initial states; returns final state and drifts.

    Inputs are arrays with a leading batch axis.  Used by the
    conservation audits; keeps no intermediate trajectory.
    """
    lam = group.lam
    y = np.asarray(y0, dtype=float).copy()
    x = np.asarray(x0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    u = np.asarray(u0, dtype=float).copy()
    speed0 = np.sqrt(speed_squared(group, y, v, u))
    mom0 = np.exp(-2.0 * y[..., None] * lam) * u
    speed_drift = np.zeros_like(speed0)
    mom_drift = np.zeros_like(speed0)
    n_steps = int(np.ceil(T / step - 1e-12))
    t = 0.0
    for _ in range(n_steps):
        h = min(step, T - t)
        y, x, v, u = _rk4_step(lam, y, x, v, u, h)
        t += h
        speed = np.sqrt(speed_squared(group, y, v, u))
        mom = np.exp(-2.0 * y[..., None] * lam) * u
        speed_drift = np.maximum(speed_drift, np.abs(speed - speed0))
        mom_drift = np.maximum(mom_drift, np.max(np.abs(mom - mom0), axis=-1))
    if not (np.isfinite(y).all() and np.isfinite(v).all() and np.isfinite(u).all()):
        raise IntegrationBlowupError(t)
    return (y, x, v, u), speed_drift, mom_drift


# ---------------------------------------------------------------------------
# curvature

def curvature_operator(group: HeintzeGroup, y, h: float):
    """R[a, b, c, e] with R(e_a, e_b) e_c = sum_e R[a,b,c,e] e_e, batched over y.

    Assembly for coordinate fields (whose brackets vanish):

        R(e_a, e_b) e_c = nabla_a (nabla_b e_c) - nabla_b (nabla_a e_c)
                        = (d_a Gamma[b,c,:]) - (d_b Gamma[a,c,:])
                          + Gamma[b,c,m] Gamma[a,m,:] - Gamma[a,c,m] Gamma[b,m,:]

    The coefficient functions depend on the height only, so the
    directional derivatives d_a reduce to a central difference quotient
    in y for a = height and vanish otherwise; the difference step h is
    the only discretization parameter (error O(h^2)).
    """
    y = np.asarray(y, dtype=float)
    n = group.d + 1
    gamma = christoffel_tensor(group, y)
    dgamma_dy = (christoffel_tensor(group, y + h) - christoffel_tensor(group, y - h)) / (2.0 * h)

    R = np.zeros(y.shape + (n, n, n, n))
    # derivative terms: the coefficients vary only in y, so d_a Gamma is the
    # y-difference quotient when a is the height index and zero otherwise
    R[..., 0, :, :, :] += dgamma_dy
    R[..., :, 0, :, :] -= dgamma_dy
    # quadratic terms
    R += np.einsum("...bcm,...ame->...abce", gamma, gamma)
    R -= np.einsum("...acm,...bme->...abce", gamma, gamma)
    return R


def sectional_curvature_fd(
    group: HeintzeGroup,
    p: Point,
    w1,
    w2,
    h: float = 1e-4,
) -> float:
    """Sectional curvature of span(w1, w2) at p via finite differences.

    K = g(R(w1, w2) w2, w1) / (|w1|^2 |w2|^2 - g(w1, w2)^2).
    Raises :class:`DegeneratePlaneError` when the Gram determinant of
    the plane falls below 1e-12.
    """
    return float(
        sectional_curvature_batch(
            group,
            np.asarray([p.y]),
            np.asarray([np.asarray(w1, dtype=float)]),
            np.asarray([np.asarray(w2, dtype=float)]),
            h,
        )[0]
    )


def sectional_curvature_batch(group: HeintzeGroup, ys, W1, W2, h: float = 1e-4):
    """Vectorized sectional curvature over a batch of (y, w1, w2) samples.

    Curvature here depends on the base point only through the height.
    """
    ys = np.asarray(ys, dtype=float)
    W1 = np.asarray(W1, dtype=float)
    W2 = np.asarray(W2, dtype=float)
    if h <= 0:
        raise ValueError("h must be positive")
    R = curvature_operator(group, ys, h)
    # R(w1, w2) w2
    Rw = np.einsum("...abce,...a,...b,...c->...e", R, W1, W2, W2)
    weights = np.concatenate(
        [np.ones(ys.shape + (1,)), np.exp(-2.0 * ys[..., None] * group.lam)], axis=-1
    )
    num = np.sum(weights * Rw * W1, axis=-1)
    g11 = np.sum(weights * W1 * W1, axis=-1)
    g22 = np.sum(weights * W2 * W2, axis=-1)
    g12 = np.sum(weights * W1 * W2, axis=-1)
    gram = g11 * g22 - g12**2
    if np.any(gram < 1e-12):
        raise DegeneratePlaneError(
            f"{int(np.sum(gram < 1e-12))} planes have Gram determinant < 1e-12"
        )
    return num / gram


# ---------------------------------------------------------------------------
# isometries

def isometry_tau(group: HeintzeGroup, lam_shift: float, p: Point) -> Point:
    """Height translation (y, x) -> (y + s, exp(s*lam_i) x_i).

    The horizontal scaling exp(s*lam_i) is the one that makes the map a
    metric isometry: exp(-2*lam_i*(y+s)) d(exp(s*lam_i) x_i)^2 =
    exp(-2*lam_i*y) dx_i^2.  Preservation is asserted numerically in the
    test suite rather than taken from any printed formula.
    """
    s = float(lam_shift)
    scale = np.exp(s * group.lam)
    return Point(p.y + s, scale * np.asarray(p.x))


def isometry_T(group: HeintzeGroup, z, p: Point) -> Point:
    """Horizontal translation (y, x) -> (y, x + z)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (group.d,):
        raise ValueError("translation vector must have length d")
    return Point(p.y, np.asarray(p.x) + z)


def tau_pushforward(group: HeintzeGroup, lam_shift: float, w) -> np.ndarray:
    """Differential of ``isometry_tau`` on (v, u) components."""
    w = np.asarray(w, dtype=float)
    out = w.copy()
    out[..., 1:] = w[..., 1:] * np.exp(float(lam_shift) * group.lam)
    return out
