"""Generalized Pastur equations for the reduced 4x4 Green function.

The self-consistency condition solved here is::

    G = alpha (u_gamma - S(G))^-1 + (1 - alpha) (u_0 - S(G))^-1

where ``S`` depends on the symmetry class (see :class:`PasturVariant`).
``z`` and ``z*`` are treated as independent complex variables; the mean
eigenvalue density follows from ``d(G11 + G22)/dz* / (2 pi)``.

Solutions are reached by continuation from the exactly solvable uncoupled
case (alpha = 0) at large regulator lambda, then in alpha, then in lambda,
and finally in z.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
LAMBDA_TARGET = 1e-3
EPS_CLIP = 1e-6

_I4 = np.eye(4, dtype=complex)
_I16 = np.eye(16, dtype=complex)
# d u / d z*: z* sits on the two lower diagonal entries
_DZSTAR = np.diag([0, 0, 1, 1]).astype(complex)
_COUPLING = np.zeros((4, 4), dtype=complex)
_COUPLING[0, 1] = _COUPLING[1, 0] = _COUPLING[2, 3] = _COUPLING[3, 2] = 1.0


class PasturVariant(enum.Enum):
    """Which self-energy functional S(G) enters the equation."""

    OO_UOPRIME = "OO_UO'"  # S(G) = G
    UO = "UO"  # S(G) = P1 G P1 + P2 G P2
    OA = "OA"  # S(G) = G - R G R, R = mu diag(1, 1, -1, -1)
    OA_PRIME = "OA'"  # S(G) = G - R' G R', R' = mu diag(1, -1, -1, 1)

    @property
    def antisymmetric(self) -> bool:
        return self in (PasturVariant.OA, PasturVariant.OA_PRIME)

    @classmethod
    def for_ensemble(cls, name: str) -> "PasturVariant":
        """Variant for an ensemble acronym (GOOE, GUOE, GUOE', GOAE, GOAE')."""
        key = name.strip().upper().replace("P", "'").lstrip("G").rstrip("E'")
        primed = name.strip().upper().endswith(("'", "P"))
        table = {
            ("OO", False): cls.OO_UOPRIME,
            ("UO", True): cls.OO_UOPRIME,
            ("UO", False): cls.UO,
            ("OA", False): cls.OA,
            ("OA", True): cls.OA_PRIME,
        }
        try:
            return table[(key[:2], primed)]
        except KeyError:
            raise ValueError(f"no Pastur equation for ensemble {name!r}") from None


P1 = np.diag([1.0, 0.0, 1.0, 0.0])
P2 = np.diag([0.0, 1.0, 0.0, 1.0])


def structure_matrix(variant: PasturVariant, mu: float) -> Optional[np.ndarray]:
    """R or R' for the antisymmetric variants, None otherwise."""
    if variant is PasturVariant.OA:
        return mu * np.diag([1.0, 1.0, -1.0, -1.0])
    if variant is PasturVariant.OA_PRIME:
        return mu * np.diag([1.0, -1.0, -1.0, 1.0])
    return None


def self_energy_weights(variant: PasturVariant, mu: float) -> np.ndarray:
    """Elementwise weights W with S(G) = W * G.

    Every S used here acts entrywise: projector sandwiches keep entries of
    equal index parity, and G - RGR scales G_ij by 1 - r_i r_j.
    """
    if variant is PasturVariant.OO_UOPRIME:
        return np.ones((4, 4))
    if variant is PasturVariant.UO:
        return P1 @ np.ones((4, 4)) @ P1 + P2 @ np.ones((4, 4)) @ P2
    r = np.diag(structure_matrix(variant, mu))
    return 1.0 - np.outer(r, r)


def apply_self_energy(g: np.ndarray, variant: PasturVariant, mu: float) -> np.ndarray:
    """S(G) written out with the structure matrices (reference form)."""
    if variant is PasturVariant.OO_UOPRIME:
        return g
    if variant is PasturVariant.UO:
        return P1 @ g @ P1 + P2 @ g @ P2
    r = structure_matrix(variant, mu)
    return g - r @ g @ r


@dataclass(frozen=True)
class PasturPoint:
    """Parameters of one solve; ``z_star`` is independent of ``z``."""

    z: complex
    z_star: complex
    alpha: float
    gamma: float
    mu: float
    lam: float = LAMBDA_TARGET

    @classmethod
    def at(cls, z, alpha, gamma, mu, lam=LAMBDA_TARGET) -> "PasturPoint":
        z = complex(z)
        return cls(z, z.conjugate(), float(alpha), float(gamma), float(mu), float(lam))

    @property
    def on_conjugate_slice(self) -> bool:
        return self.z_star == self.z.conjugate()


@dataclass
class GreenReduced:
    g: np.ndarray
    residual: float
    point: Optional[PasturPoint] = None
    iterations: int = 0

    @property
    def trace_11(self) -> complex:
        return self.g[0, 0] + self.g[1, 1]


class SolverError(RuntimeError):
    """Newton/fixed-point iteration did not converge."""


class ContinuationError(RuntimeError):
    """Continuation step size fell below its floor."""


class BranchError(RuntimeError):
    """The square-root branch of the uncoupled solution is ambiguous."""


def u_matrix(p: PasturPoint, gamma_value: float, variant: PasturVariant = PasturVariant.OO_UOPRIME):
    """The 4x4 block u_gamma (``u~_gamma`` = u at mu = 0 for OA/OA')."""
    mu = 0.0 if variant.antisymmetric else p.mu
    z, zs, lam = p.z, p.z_star, p.lam
    return np.array(
        [
            [z + 1j * mu, -gamma_value, 1j * lam, 0],
            [-gamma_value, z - 1j * mu, 0, 1j * lam],
            [1j * lam, 0, zs - 1j * mu, -gamma_value],
            [0, 1j * lam, -gamma_value, zs + 1j * mu],
        ],
        dtype=complex,
    )


def _semicircle_root(e: complex) -> complex:
    """Root of g^2 - e g + 1 = 0 with |g| < 1 (decaying resolvent branch)."""
    s = np.sqrt(e * e / 4 - 1)
    g1, g2 = e / 2 + s, e / 2 - s
    a1, a2 = abs(g1), abs(g2)
    if abs(a1 - a2) < 1e-14 * max(1.0, abs(e)):
        raise BranchError(f"block eigenvalue {e} lies on the branch cut")
    return g1 if a1 < a2 else g2


def _matrix_root(block: np.ndarray) -> np.ndarray:
    """Apply the decaying root to a 2x2 block through its eigenvectors."""
    e, v = np.linalg.eig(block)
    if np.linalg.cond(v) < 1e8:
        g = np.array([_semicircle_root(x) for x in e])
        return (v * g) @ np.linalg.inv(v)
    # (nearly) defective block: g(B) = g(e) + g'(e) (B - e)
    e1 = e.mean()
    g1 = _semicircle_root(e1)
    dg = g1 / (2 * g1 - e1)
    return g1 * np.eye(2) + dg * (block - e1 * np.eye(2))


def g0_uncoupled(p: PasturPoint, variant: PasturVariant = PasturVariant.OO_UOPRIME) -> GreenReduced:
    """Exact solution G0 = u0/2 + (u0^2/4 - 1)^(1/2) of the uncoupled problem.

    ``u0`` splits into the independent index blocks {1, 3} and {2, 4}; on
    each block the square root is evaluated eigenvalue by eigenvalue on the
    decaying branch |g| < 1.  For lambda > 0 the block eigenvalues stay off
    the cut [-2, 2], so this is the branch continuously connected to
    G0(z = z* = 0, lambda -> 0+) = -i sigma_x (x) 1_2.
    """
    u0 = u_matrix(p, 0.0, variant)
    g = np.zeros((4, 4), dtype=complex)
    for idx in ([0, 2], [1, 3]):
        sub = np.ix_(idx, idx)
        g[sub] = _matrix_root(u0[sub])
    res = float(np.linalg.norm(g @ (u0 - g) - _I4))
    return GreenReduced(g, res, p, 0)


def _inverses(g, p, variant):
    w = self_energy_weights(variant, p.mu)
    s = w * g
    x1 = u_matrix(p, p.gamma, variant) - s
    x0 = u_matrix(p, 0.0, variant) - s
    try:
        return w, np.linalg.inv(x1), np.linalg.inv(x0)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular inversion at {p}") from exc


def pastur_residual(g: np.ndarray, p: PasturPoint, variant: PasturVariant) -> np.ndarray:
    """F(G) = alpha (u_gamma - S(G))^-1 + (1 - alpha) (u_0 - S(G))^-1 - G."""
    _, x1i, x0i = _inverses(g, p, variant)
    return p.alpha * x1i + (1 - p.alpha) * x0i - g


def _jacobian(w, x1i, x0i, alpha):
    # d(X^-1) = X^-1 (W * dG) X^-1; row-major vec(A B C) = (A kron C^T) vec(B)
    k = alpha * np.kron(x1i, x1i.T) + (1 - alpha) * np.kron(x0i, x0i.T)
    return k * w.ravel()[None, :] - _I16


def solve_point(
    p: PasturPoint,
    variant: PasturVariant,
    start,
    tol: float = NEWTON_TOL,
    maxiter: int = 30,
) -> GreenReduced:
    """Damped Newton iteration on the 16 complex unknowns of G.

    F is holomorphic in the entries of G, so the complex Jacobian is exact.
    If Newton stalls, relaxed fixed-point steps G <- (G + RHS)/2 are tried
    before giving up.
    """
    g = np.array(start.g if isinstance(start, GreenReduced) else start, dtype=complex)
    alpha = p.alpha
    w, x1i, x0i = _inverses(g, p, variant)
    f = alpha * x1i + (1 - alpha) * x0i - g
    r = np.linalg.norm(f)
    stalls = 0
    for it in range(maxiter):
        if r < tol:
            return GreenReduced(g, float(r), p, it)
        jac = _jacobian(w, x1i, x0i, alpha)
        try:
            step = np.linalg.solve(jac, -f.ravel()).reshape(4, 4)
        except np.linalg.LinAlgError:
            step = f
        t = 1.0
        accepted = False
        while t >= 1 / 16:
            g_try = g + t * step
            try:
                w, x1i, x0i = _inverses(g_try, p, variant)
            except SolverError:
                t /= 2
                continue
            f_try = alpha * x1i + (1 - alpha) * x0i - g_try
            r_try = np.linalg.norm(f_try)
            if r_try < r or r_try < tol:
                accepted = True
                break
            t /= 2
        if not accepted:
            stalls += 1
            if stalls > 3:
                break
            # relaxed fixed point
            w, x1i, x0i = _inverses(g, p, variant)
            rhs = alpha * x1i + (1 - alpha) * x0i
            g_try = 0.5 * g + 0.5 * rhs
            w, x1i, x0i = _inverses(g_try, p, variant)
            f_try = alpha * x1i + (1 - alpha) * x0i - g_try
            r_try = np.linalg.norm(f_try)
        g, f, r = g_try, f_try, r_try
    if r < tol:
        return GreenReduced(g, float(r), p, maxiter)
    raise SolverError(f"no convergence at {p} (residual {r:.3g})")


def cubic_identity_defect(g: np.ndarray, p: PasturPoint) -> float:
    """|| (u_gamma - G) G (u_0 - G) - (u_{(1-alpha) gamma} - G) || for S(G) = G."""
    ug = u_matrix(p, p.gamma)
    u0 = u_matrix(p, 0.0)
    um = u_matrix(p, (1 - p.alpha) * p.gamma)
    return float(np.linalg.norm((ug - g) @ g @ (u0 - g) - (um - g)))


def branch_defect(g: np.ndarray) -> float:
    """Largest Im part among G13, G24, G31, G42 (must be <= 0 physically).

    These entries are traces over diagonal blocks of ``(K + i lambda)^-1``
    with K hermitian, whose imaginary parts are negative.
    """
    return float(max(g[0, 2].imag, g[1, 3].imag, g[2, 0].imag, g[3, 1].imag))


def _interp(p0: PasturPoint, p1: PasturPoint, s: float, geometric_lambda: bool) -> PasturPoint:
    lin = lambda a, b: a + (b - a) * s  # noqa: E731
    if geometric_lambda and p0.lam > 0 and p1.lam > 0:
        lam = p0.lam ** (1 - s) * p1.lam**s
    else:
        lam = lin(p0.lam, p1.lam)
    return PasturPoint(
        lin(p0.z, p1.z),
        lin(p0.z_star, p1.z_star),
        lin(p0.alpha, p1.alpha),
        lin(p0.gamma, p1.gamma),
        lin(p0.mu, p1.mu),
        lam,
    )


@dataclass
class ContinuationSettings:
    max_delta: float = 0.25
    min_fraction: float = 2.0**-14
    branch_tol: float = 1e-9
    maxiter: int = 12


def continue_solution(
    start: GreenReduced,
    target: PasturPoint,
    variant: PasturVariant,
    n_steps: int = 10,
    geometric_lambda: bool = False,
    settings: Optional[ContinuationSettings] = None,
) -> GreenReduced:
    """Carry a converged solution from ``start.point`` to ``target``.

    Steps are halved whenever Newton fails, the solution jumps by more than
    ``max_delta`` in any entry, or it leaves the physical branch; they grow
    back after successful steps.
    """
    cfg = settings or ContinuationSettings()
    p0 = start.point
    cur = start
    s = 0.0
    ds0 = 1.0 / max(1, n_steps)
    ds = ds0
    check_branch = target.on_conjugate_slice and p0.on_conjugate_slice
    while s < 1.0:
        ds = min(ds, 1.0 - s)
        p = target if s + ds >= 1.0 else _interp(p0, target, s + ds, geometric_lambda)
        try:
            nxt = solve_point(p, variant, cur, maxiter=cfg.maxiter)
            if np.abs(nxt.g - cur.g).max() > cfg.max_delta:
                raise SolverError("continuation step too large")
            if check_branch and branch_defect(nxt.g) > cfg.branch_tol:
                raise SolverError("left the physical branch")
        except SolverError:
            ds /= 2
            if ds < cfg.min_fraction * ds0:
                raise ContinuationError(
                    f"continuation from {p0} to {target} stalled at s={s:.6g}"
                ) from None
            continue
        cur = nxt
        s += ds
        ds = min(ds0, 2 * ds)
    return cur


def solve_homotopy(
    z: complex,
    variant: PasturVariant,
    alpha: float,
    gamma: float,
    mu: float,
    lambda_target: float = LAMBDA_TARGET,
    *,
    z0: complex = 0.0,
    n_alpha: int = 10,
    n_lambda: int = 10,
    dz: float = 0.05,
    settings: Optional[ContinuationSettings] = None,
) -> GreenReduced:
    """Solve at ``z`` by continuation from the uncoupled solution.

    1. anchor: G0 at z0 with lambda equal to the target alpha;
    2. (A variants only) raise mu from 0 at alpha = 0, where G0 is exact
       only without the antisymmetric self-energy;
    3. raise alpha from 0 to its target;
    4. lower lambda geometrically to ``lambda_target``;
    5. walk z from z0 to the requested point.
    """
    lam0 = max(alpha, lambda_target)
    mu_start = 0.0 if variant.antisymmetric else mu
    p = PasturPoint.at(z0, 0.0, gamma, mu_start, lam0)
    cur = g0_uncoupled(p, variant)
    if variant.antisymmetric and mu > 0:
        cur = continue_solution(cur, PasturPoint.at(z0, 0.0, gamma, mu, lam0), variant, n_alpha, settings=settings)
    if alpha > 0:
        cur = continue_solution(cur, PasturPoint.at(z0, alpha, gamma, mu, lam0), variant, n_alpha, settings=settings)
    if lam0 != lambda_target:
        cur = continue_solution(
            cur,
            PasturPoint.at(z0, alpha, gamma, mu, lambda_target),
            variant,
            n_lambda,
            geometric_lambda=True,
            settings=settings,
        )
    z = complex(z)
    if z != complex(z0):
        n = max(1, math.ceil(abs(z - z0) / dz))
        cur = continue_solution(cur, PasturPoint.at(z, alpha, gamma, mu, lambda_target), variant, n, settings=settings)
    return cur


def _trace11_derivative_fd(sol: GreenReduced, variant, h=None):
    p = sol.point
    if h is None:
        h = 1e-5 * max(1.0, abs(p.z))
    vals = []
    for sign in (1, -1):
        q = replace(p, z_star=p.z_star + sign * h)
        try:
            g = solve_point(q, variant, sol)
        except SolverError:
            g = continue_solution(sol, q, variant, 4)
        vals.append(g.trace_11)
    return (vals[0] - vals[1]) / (2 * h)


def _trace11_derivative_implicit(sol: GreenReduced, variant):
    p = sol.point
    w, x1i, x0i = _inverses(sol.g, p, variant)
    jac = _jacobian(w, x1i, x0i, p.alpha)
    dfdz = -(p.alpha * x1i @ _DZSTAR @ x1i + (1 - p.alpha) * x0i @ _DZSTAR @ x0i)
    dg = np.linalg.solve(jac, -dfdz.ravel()).reshape(4, 4)
    return dg[0, 0] + dg[1, 1]


def density_at(sol: GreenReduced, variant: PasturVariant, method: str = "fd", h=None):
    """Mean density rho = d(G11 + G22)/dz* / (2 pi) at a converged solution.

    Returns ``(rho, imaginary_residue)``.  ``method='fd'`` takes a central
    difference in z* with z fixed; ``method='implicit'`` differentiates the
    fixed-point condition instead.
    """
    if method == "fd":
        d = _trace11_derivative_fd(sol, variant, h)
    elif method == "implicit":
        d = _trace11_derivative_implicit(sol, variant)
    else:
        raise ValueError(f"unknown derivative method {method!r}")
    val = d / (2 * np.pi)
    return float(val.real), float(val.imag)


def density(
    z: complex,
    variant: PasturVariant,
    alpha: float,
    gamma: float,
    mu: float,
    lam: float = LAMBDA_TARGET,
    method: str = "fd",
) -> float:
    """Density at a single point, solved from scratch by continuation."""
    sol = solve_homotopy(z, variant, alpha, gamma, mu, lam)
    return density_at(sol, variant, method)[0]


@dataclass
class DensityGrid:
    re_axis: np.ndarray
    im_axis: np.ndarray
    rho: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    variant: PasturVariant
    params: dict
    imag_residue: np.ndarray = field(default=None, repr=False)
    n_clipped: int = 0

    def integral(self, mask: Optional[np.ndarray] = None) -> float:
        """Riemann sum of rho over the grid (cells centred on grid nodes)."""
        dx = _cell_widths(self.re_axis)
        dy = _cell_widths(self.im_axis)
        rho = np.where(self.converged, self.rho, 0.0)
        if mask is not None:
            rho = np.where(mask, rho, 0.0)
        return float(dy @ rho @ dx)

    def lookup(self, z: complex) -> float:
        """rho at the grid node nearest to ``z`` (nan outside the grid)."""
        i, j = self.node(z)
        if i is None:
            return float("nan")
        return float(self.rho[i, j]) if self.converged[i, j] else float("nan")

    def node(self, z: complex):
        x, y = z.real, z.imag
        re, im = self.re_axis, self.im_axis
        if not (re[0] <= x <= re[-1] and im[0] <= y <= im[-1]):
            return None, None
        j = int(np.abs(re - x).argmin())
        i = int(np.abs(im - y).argmin())
        return i, j


def _cell_widths(axis: np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    if len(axis) == 1:
        return np.ones(1)
    edges = np.r_[axis[0], 0.5 * (axis[1:] + axis[:-1]), axis[-1]]
    return np.diff(edges)


class DensityError(RuntimeError):
    pass


def density_grid(
    re_axis: Sequence[float],
    im_axis: Sequence[float],
    variant: PasturVariant,
    alpha: float,
    gamma: float,
    mu: float,
    lam: float = LAMBDA_TARGET,
    *,
    method: str = "fd",
    eps_clip: float = EPS_CLIP,
    dz: float = 0.05,
    settings: Optional[ContinuationSettings] = None,
) -> DensityGrid:
    """Density on the grid ``re_axis x im_axis`` with warm-started sweeps.

    The solution is first continued to z = 0, then up and down the imaginary
    axis (the spine), and each row is swept outward from its spine point in
    both directions.  Points where continuation breaks down are marked as not
    converged and skipped; values below ``-eps_clip`` raise
    :class:`DensityError`, smaller negative values are clipped to zero.
    """
    re_axis = np.asarray(re_axis, dtype=float)
    im_axis = np.asarray(im_axis, dtype=float)
    shape = (len(im_axis), len(re_axis))
    rho = np.full(shape, np.nan)
    imres = np.full(shape, np.nan)
    resid = np.full(shape, np.nan)
    conv = np.zeros(shape, dtype=bool)

    def at(z):
        return PasturPoint.at(z, alpha, gamma, mu, lam)

    origin = solve_homotopy(0.0, variant, alpha, gamma, mu, lam, settings=settings)

    def walk(sol, z):
        n = max(1, math.ceil(abs(complex(z) - sol.point.z) / dz))
        return continue_solution(sol, at(z), variant, n, settings=settings)

    spine = {}
    for ys in (im_axis[im_axis >= 0], im_axis[im_axis < 0][::-1]):
        cur = origin
        for y in ys:
            try:
                cur = walk(cur, 1j * y)
                spine[float(y)] = cur
            except ContinuationError:
                log.warning("spine point Im z = %g unresolved", y)

    n_clipped = 0
    for i, y in enumerate(im_axis):
        start = spine.get(float(y))
        if start is None:
            continue
        right = np.flatnonzero(re_axis >= 0)
        left = np.flatnonzero(re_axis < 0)[::-1]
        for cols in (right, left):
            cur = start
            for j in cols:
                z = complex(re_axis[j], y)
                try:
                    cur = walk(cur, z)
                    val, ires = density_at(cur, variant, method)
                except (ContinuationError, SolverError) as exc:
                    log.debug("grid point %s unresolved: %s", z, exc)
                    continue
                if val < -eps_clip:
                    raise DensityError(
                        f"negative density {val:.3g} at z={z} (residual {cur.residual:.2g}, "
                        f"G={cur.g!r})"
                    )
                if val < 0:
                    n_clipped += 1
                    val = 0.0
                rho[i, j] = val
                imres[i, j] = ires
                resid[i, j] = cur.residual
                conv[i, j] = True
    return DensityGrid(
        re_axis,
        im_axis,
        rho,
        resid,
        conv,
        variant,
        dict(alpha=alpha, gamma=gamma, mu=mu, lam=lam),
        imres,
        n_clipped,
    )
