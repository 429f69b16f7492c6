"""Nonlinear contact-chain model of a four-lens press-fit assembly.

Four clearances (μm) go in, 24 lens-surface deformations (μm) come out. Each
lens has a radial expansion ``w`` and an axial shift ``z``; lenses are pushed
into the barrel one at a time and each stage is solved with damped
Newton-Raphson, seeded by the previous stage's equilibrium.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array

N_LENSES = 4

INPUT_LABELS = ("barrel_lens1", "barrel_lens3", "barrel_lens4", "lens1_lens2")

_SURFACES = ("bottom", "top")
_QUANTITIES = ("dr_rmax", "dz_rmin", "dz_rmax")

OUTPUT_LABELS = tuple(
    f"lens{lens}_{surface}_{qty}"
    for lens in range(1, N_LENSES + 1)
    for surface in _SURFACES
    for qty in _QUANTITIES
)

_E_MINUS_1 = math.e - 1.0


class NonConvergence(RuntimeError):
    """Newton iterations exhausted before the residual dropped below tolerance."""

    def __init__(self, stage: int, iterations: int, residual_norm: float, row: int | None = None):
        self.stage = stage
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.row = row
        where = "" if row is None else f" (row {row})"
        super().__init__(
            f"Newton solve did not converge at stage {stage}{where}: "
            f"{iterations} iterations, residual {residual_norm:.3e}"
        )


class StateNotConverged(ValueError):
    pass


@dataclass(frozen=True)
class ContactLaw:
    """Softened exponential contact: zero pressure above ``c0``, ``p0`` at zero clearance."""

    p0: float = 5.0
    c0: float = 3.5

    def __post_init__(self):
        if not (self.p0 > 0 and self.c0 > 0):
            raise ValueError(f"contact law needs p0 > 0 and c0 > 0, got p0={self.p0}, c0={self.c0}")


@dataclass(frozen=True)
class NewtonOptions:
    max_iters: int = 50
    tol: float = 1e-10
    max_line_search_halvings: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("newton tol must be positive")
        if self.max_iters < 1:
            raise ValueError("newton max_iters must be >= 1")


@dataclass(frozen=True)
class AssemblyParams:
    contact: ContactLaw = field(default_factory=ContactLaw)
    k_r: float = 1.0
    q_r: float = 0.05
    k_z: float = 1.0
    q_z: float = 0.02
    gamma: float = 0.08
    kappa: float = 0.3
    nu: float = 0.8
    rho: float = 0.25
    a_obs: float = 0.15
    b_obs: float = 0.1
    newton: NewtonOptions = field(default_factory=NewtonOptions)

    def __post_init__(self):
        problems = []
        if not (self.k_r > 0 and self.k_z > 0):
            problems.append("k_r and k_z must be positive")
        if self.q_r < 0 or self.q_z < 0:
            problems.append("q_r and q_z must be non-negative")
        if not 0 <= self.gamma < 0.5:
            problems.append("gamma must lie in [0, 0.5)")
        if not 0 <= self.kappa < 1:
            problems.append("kappa must lie in [0, 1)")
        if min(self.nu, self.rho, self.a_obs, self.b_obs) < 0:
            problems.append("nu, rho, a_obs, b_obs must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "AssemblyParams":
        d = dict(d)
        contact = ContactLaw(**d.pop("contact", {}))
        newton = NewtonOptions(**d.pop("newton", {}))
        return cls(contact=contact, newton=newton, **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable SHA-256 of the parameter set, used to tag generated datasets."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class AssemblyState:
    w: np.ndarray
    z: np.ndarray
    n_active: int
    converged: bool = False
    residual_norm: float = math.inf
    iterations: tuple = ()

    @property
    def active(self) -> tuple:
        return tuple(range(1, self.n_active + 1))

    @classmethod
    def zeros(cls, n_active: int = N_LENSES) -> "AssemblyState":
        return cls(np.zeros(N_LENSES), np.zeros(N_LENSES), n_active)

    def unknowns(self) -> np.ndarray:
        k = self.n_active
        return np.column_stack((self.w[:k], self.z[:k])).ravel()

    def with_unknowns(self, u: np.ndarray) -> "AssemblyState":
        k = self.n_active
        w = np.zeros(N_LENSES)
        z = np.zeros(N_LENSES)
        w[:k] = u[0::2]
        z[:k] = u[1::2]
        return AssemblyState(w, z, k)


def contact_pressure(g, law: ContactLaw):
    """Pressure transmitted across a clearance ``g`` (scalar or array).

    Exactly zero for ``g >= c0`` and equal to ``p0`` at ``g = 0``; negative
    clearances (overclosure) keep growing exponentially.
    """
    g = np.asarray(g, dtype=float)
    engaged = g < law.c0
    t = np.where(engaged, (law.c0 - g) / law.c0, 0.0)
    p = np.where(engaged, law.p0 * np.expm1(t) / _E_MINUS_1, 0.0)
    return p if p.ndim else float(p)


def contact_slope(g, law: ContactLaw):
    """d(pressure)/d(clearance); the one-sided value 0 is used at ``g == c0``."""
    g = np.asarray(g, dtype=float)
    engaged = g < law.c0
    t = np.where(engaged, (law.c0 - g) / law.c0, 0.0)
    s = np.where(engaged, -law.p0 / (law.c0 * _E_MINUS_1) * np.exp(t), 0.0)
    return s if s.ndim else float(s)


def _gap_jacobian(p: AssemblyParams) -> np.ndarray:
    # d g_i / d w_j for the full four-lens chain; own deformation relieves the
    # interference, so the diagonal is +1 and the system stays diagonally
    # dominant for gamma < 0.5, kappa < 1
    gm, kp = p.gamma, p.kappa
    return np.array([
        [1.0, 0.0, gm, gm],
        [-kp, 1.0, 0.0, 0.0],
        [gm, 0.0, 1.0, gm],
        [gm, 0.0, gm, 1.0],
    ])


def gaps(w: np.ndarray, x: np.ndarray, p: AssemblyParams) -> np.ndarray:
    """Current clearance at each lens seat given radial deformations ``w``."""
    gm, kp = p.gamma, p.kappa
    return np.array([
        x[0] + w[0] + gm * (w[2] + w[3]),
        x[3] + w[1] - kp * w[0],
        x[1] + w[2] + gm * (w[0] + w[3]),
        x[2] + w[3] + gm * (w[0] + w[2]),
    ])


def residual(state: AssemblyState, x, p: AssemblyParams) -> np.ndarray:
    """Out-of-balance forces ``(R_r, R_z)`` for each active lens, interleaved."""
    k = state.n_active
    if k < 1:
        raise ValueError("residual needs at least one active lens")
    w = np.where(np.arange(N_LENSES) < k, state.w, 0.0)
    z = np.where(np.arange(N_LENSES) < k, state.z, 0.0)
    pressure = contact_pressure(gaps(w, np.asarray(x, dtype=float), p), p.contact)
    z_prev = np.concatenate(([0.0], z[:-1]))
    r_rad = p.k_r * w + p.q_r * w**3 - pressure
    r_ax = p.k_z * z + p.q_z * z**3 - p.nu * pressure - p.rho * z_prev * np.abs(z_prev)
    return np.column_stack((r_rad[:k], r_ax[:k])).ravel()


def tangent(state: AssemblyState, x, p: AssemblyParams) -> np.ndarray:
    """Analytic Jacobian of :func:`residual` w.r.t. the interleaved active unknowns."""
    k = state.n_active
    w = np.where(np.arange(N_LENSES) < k, state.w, 0.0)
    z = np.where(np.arange(N_LENSES) < k, state.z, 0.0)
    slope = contact_slope(gaps(w, np.asarray(x, dtype=float), p), p.contact)
    dg = _gap_jacobian(p)

    jac = np.zeros((2 * k, 2 * k))
    for i in range(k):
        ri, zi = 2 * i, 2 * i + 1
        for j in range(k):
            # -dP/dw_j = -slope_i * dg_i/dw_j
            jac[ri, 2 * j] = -slope[i] * dg[i, j]
            jac[zi, 2 * j] = -p.nu * slope[i] * dg[i, j]
        jac[ri, ri] += p.k_r + 3.0 * p.q_r * w[i] ** 2
        jac[zi, zi] = p.k_z + 3.0 * p.q_z * z[i] ** 2
        if i > 0:
            jac[zi, zi - 2] = -2.0 * p.rho * abs(z[i - 1])
    return jac


def _newton(state: AssemblyState, x: np.ndarray, p: AssemblyParams) -> AssemblyState:
    opts = p.newton
    u = state.unknowns()
    r = residual(state, x, p)
    norm = np.linalg.norm(r, np.inf)
    for it in range(opts.max_iters + 1):
        if norm <= opts.tol:
            out = state.with_unknowns(u)
            out.converged, out.residual_norm = True, float(norm)
            out.iterations = state.iterations + (it,)
            return out
        if it == opts.max_iters:
            break
        du = np.linalg.solve(tangent(state.with_unknowns(u), x, p), r)
        r_norm2 = np.linalg.norm(r)
        step = 1.0
        u_try = u - du
        r_try = residual(state.with_unknowns(u_try), x, p)
        halvings = 0
        while np.linalg.norm(r_try) >= r_norm2 and halvings < opts.max_line_search_halvings:
            step *= 0.5
            halvings += 1
            u_try = u - step * du
            r_try = residual(state.with_unknowns(u_try), x, p)
        u, r = u_try, r_try
        norm = np.linalg.norm(r, np.inf)
    raise NonConvergence(stage=state.n_active, iterations=opts.max_iters, residual_norm=float(norm))


def solve_stage(state: AssemblyState, x, p: AssemblyParams) -> AssemblyState:
    """Solve equilibrium for ``state.n_active`` lenses starting from ``state``."""
    return _newton(state, np.asarray(x, dtype=float), p)


def solve_assembly(x, p: AssemblyParams | None = None) -> AssemblyState:
    """Multistep assembly: lenses 1..4 are activated in order, each stage warm-started."""
    p = AssemblyParams() if p is None else p
    x = np.asarray(x, dtype=float)
    if x.shape != (N_LENSES,) or not np.all(np.isfinite(x)):
        raise ValueError(f"expected 4 finite clearances, got {x!r}")
    state = AssemblyState.zeros(1)
    for k in range(1, N_LENSES + 1):
        seed = AssemblyState(state.w.copy(), state.z.copy(), k, iterations=state.iterations)
        state = _newton(seed, x, p)
    return state


def observe(state: AssemblyState, p: AssemblyParams | None = None) -> np.ndarray:
    """Map a converged four-lens state to the 24 deformations in canonical order."""
    p = AssemblyParams() if p is None else p
    if not state.converged or state.n_active != N_LENSES:
        raise StateNotConverged("observe needs a converged state with all four lenses active")
    a, b = p.a_obs, p.b_obs
    out = np.empty((N_LENSES, 2, 3))
    for i in range(N_LENSES):
        w, z = state.w[i], state.z[i]
        bulge = b * w * w
        out[i, 0] = (w * (1.0 + a * z), z - bulge, z + bulge)
        out[i, 1] = (w * (1.0 - a * z), z - bulge, z + 2.0 * bulge)
    return out.ravel()


def deformations(x, p: AssemblyParams | None = None) -> np.ndarray:
    return observe(solve_assembly(x, p), p)


class AssemblyModel(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the forward model.

    Nothing is learned: ``fit`` only validates the parameters so the model can
    sit wherever a fitted regressor is expected (e.g. as a Sobol evaluator).
    """

    def __init__(self, params: AssemblyParams | None = None):
        self.params = params

    def fit(self, X=None, y=None):
        self.params_ = AssemblyParams() if self.params is None else self.params
        self.n_features_in_ = N_LENSES
        return self

    def predict(self, X):
        params = getattr(self, "params_", None) or self.params or AssemblyParams()
        X = check_array(X, dtype=float)
        if X.shape[1] != N_LENSES:
            raise ValueError(f"expected {N_LENSES} clearance columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], len(OUTPUT_LABELS)))
        for row, x in enumerate(X):
            try:
                out[row] = deformations(x, params)
            except NonConvergence as exc:
                exc.row = row
                raise
        return out
