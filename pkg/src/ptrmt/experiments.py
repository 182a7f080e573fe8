"""Monte Carlo studies: transition curves, spacing statistics, scaling fits."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import isotonic_regression

from . import ensembles as en
from . import pastur
from . import spectral as sp
from .ensembles import AntihermitianPart, EnsembleSpec, Family, SymmetryClass

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 200


def default_mu_grid(n: int = 25, lo: float = 0.05, hi: float = 5.0) -> np.ndarray:
    """mu = 0 followed by ``n`` geometric points from lo to hi (units of mu_0)."""
    return np.r_[0.0, np.geomspace(lo, hi, n)]


def mu_zero(spec: EnsembleSpec) -> float:
    """mu_O = sqrt(N) Delta / 2 pi for O-type X, mu_A = sqrt(M) Delta / 2 pi for A-type."""
    s = en.scales(spec)
    if spec.sym.antihermitian_part is AntihermitianPart.A_ANTISYM:
        return s.mu_A
    return s.mu_O


def predicted_scaling(sym: SymmetryClass, T: float, N: int) -> float:
    """Perturbative estimate of g(T) = mu_PT / mu_0.

    OO and UO': (1 + 1/NT)^(-1/2); UO: sqrt(T); OA and OA': 1.  For OA' with
    T below 1/N^2 the transition is anomalous and no closed form exists; a
    warning is issued and 1 is returned.
    """
    if sym == en.UO:
        return math.sqrt(T)
    if sym in (en.OO, en.UO_PRIME):
        if T * N == 0:
            return 0.0
        return (1.0 + 1.0 / (N * T)) ** -0.5
    if sym == en.OA_PRIME and N and T < 1.0 / N**2:
        warnings.warn("OA' weak-coupling regime T < 1/N^2 has anomalous g(T)", stacklevel=2)
    return 1.0


def _map(fn: Callable, items: Sequence, workers: int = 1) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- transition curves -------------------------------------------------------

@dataclass
class TransitionCurve:
    spec: EnsembleSpec
    T: float
    mu_grid: np.ndarray
    mu0: float
    fc_mean: np.ndarray
    fc_stderr: np.ndarray
    n_samples: int
    mu_pt: Optional[float] = None
    g_of_T: Optional[float] = None
    failures: Dict[int, str] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.mu_grid = np.asarray(self.mu_grid, dtype=float)
        if np.any(np.diff(self.mu_grid) <= 0):
            raise ValueError("mu grid must be strictly increasing")

    @property
    def mu_raw(self) -> np.ndarray:
        return self.mu_grid * self.mu0


@dataclass(frozen=True)
class _Cell:
    spec: EnsembleSpec
    n_samples: int
    master_seed: int
    window: object


def _fc_cell(cell: _Cell) -> Tuple[float, float]:
    spec = cell.spec
    vals = np.empty(cell.n_samples)
    for k in range(cell.n_samples):
        seed = en.sample_seed(cell.master_seed, k, spec.name)
        s = sp.spectrum(en.build(spec, seed))
        vals[k] = sp.complex_fraction(s, cell.window)
    err = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return float(vals.mean()), float(err)


def _fc_cell_safe(cell: _Cell):
    try:
        return _fc_cell(cell)
    except Exception as exc:  # a failed cell must not abort the sweep
        log.warning("cell %s mu=%g failed: %s", cell.spec.name, cell.spec.mu, exc)
        return exc


def run_transition(
    spec_template: EnsembleSpec,
    T_values: Iterable[float],
    mu_grid: Optional[Sequence[float]] = None,
    n_samples: int = DEFAULT_SAMPLES,
    master_seed: int = 0,
    *,
    workers: int = 1,
    window="default",
) -> List[TransitionCurve]:
    """Average complex fraction f_c(mu) for each transparency.

    ``mu_grid`` is in units of :func:`mu_zero` of the template.  Sample k of
    every cell uses seed ``sample_seed(master_seed, k, name)``, so all cells
    share their underlying random matrices.
    """
    mu_grid = default_mu_grid() if mu_grid is None else np.asarray(mu_grid, dtype=float)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    T_values = [float(t) for t in T_values]
    mu0 = mu_zero(spec_template)
    cells = [
        _Cell(spec_template.replace(T=T, mu=float(m * mu0)), n_samples, master_seed, window)
        for T in T_values
        for m in mu_grid
    ]
    results = _map(_fc_cell_safe, cells, workers)
    seeds = [en.sample_seed(master_seed, k, spec_template.name) for k in range(n_samples)]
    curves = []
    n_mu = len(mu_grid)
    for i, T in enumerate(T_values):
        mean = np.full(n_mu, np.nan)
        err = np.full(n_mu, np.nan)
        failures = {}
        for j in range(n_mu):
            r = results[i * n_mu + j]
            if isinstance(r, Exception):
                failures[j] = repr(r)
            else:
                mean[j], err[j] = r
        curves.append(
            TransitionCurve(
                spec_template.replace(T=T, mu=0.0),
                T,
                mu_grid.copy(),
                mu0,
                mean,
                err,
                n_samples,
                failures=failures,
                seeds=seeds,
            )
        )
    return curves


def find_mu_pt(curve: TransitionCurve, level: float = 0.5) -> float:
    """mu at which the isotonic fit of f_c first reaches ``level`` (mu_0 units).

    The result is stored in ``curve.mu_pt`` and ``curve.g_of_T``.
    """
    ok = np.isfinite(curve.fc_mean)
    x = curve.mu_grid[ok]
    y = curve.fc_mean[ok]
    if len(x) < 2:
        raise ValueError("curve has fewer than two valid points")
    fit = isotonic_regression(y).x
    above = np.flatnonzero(fit >= level)
    if len(above) == 0 or fit[0] > level:
        raise ValueError(
            f"f_c curve does not cross {level} (range {fit[0]:.3g}..{fit[-1]:.3g})"
        )
    k = above[0]
    if k == 0:
        mu = float(x[0])
    else:
        x0, x1, y0, y1 = x[k - 1], x[k], fit[k - 1], fit[k]
        mu = float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))
    curve.mu_pt = mu
    curve.g_of_T = mu
    return mu


def max_curve_gap(curves: Sequence[TransitionCurve]) -> float:
    """Largest pointwise spread of f_c among curves sharing a mu grid."""
    stack = np.vstack([c.fc_mean for c in curves])
    return float(np.nanmax(stack.max(axis=0) - stack.min(axis=0)))


# -- level spacings -----------------------------------------------------------

def hermitian_levels(spec: EnsembleSpec, seed) -> Tuple[np.ndarray, ...]:
    """mu = 0 level sequences of one draw.

    GUOE mixes the two P-basis sequences, so its full spectrum is returned as
    one sequence; the other classes return ``(eig(H+Gamma), eig(H-Gamma))``.
    """
    spec = spec.replace(mu=0.0)
    ham = en.build_hamiltonian(spec, seed)
    (hp, off12), (off21, hm) = en.p_basis_blocks(ham)
    if spec.sym == en.UO:
        return (sp.eigenvalues(np.block([[hp, off12], [off21, hm]])).real,)
    return (sp.eigenvalues(hp).real, sp.eigenvalues(hm).real)


def run_spacing(
    sym: SymmetryClass,
    T_values: Iterable[float],
    M: int,
    N: int,
    n_samples: int,
    mode: str = "superposed",
    master_seed: int = 0,
    *,
    bin_width: float = 0.1,
    window=sp.CENTRAL_WINDOW,
    workers: int = 1,
    bins=None,
) -> List[sp.SpacingHistogram]:
    """Spacing histograms of the hermitian limit for each transparency.

    Pass explicit ``bins`` to compare histograms of different runs bin by bin.
    """
    out = []
    for T in T_values:
        spec = EnsembleSpec(sym, Family.GAUSSIAN, M, N, float(T), 0.0)
        seeds = [en.sample_seed(master_seed, k, spec.name) for k in range(n_samples)]
        draws = _map(_LevelJob(spec), seeds, workers)
        out.append(sp.spacing_histogram(draws, mode, bin_width=bin_width, window=window, bins=bins))
    return out


@dataclass(frozen=True)
class _LevelJob:
    spec: EnsembleSpec

    def __call__(self, seed):
        return hermitian_levels(self.spec, seed)


# -- density comparison --------------------------------------------------------

def sample_eigenvalues(spec: EnsembleSpec, n_samples: int, master_seed: int) -> np.ndarray:
    out = []
    for k in range(n_samples):
        s = sp.spectrum(en.build(spec, en.sample_seed(master_seed, k, spec.name)))
        out.append(s.eigenvalues)
    return np.concatenate(out)


def real_axis_branches(grid: pastur.DensityGrid, threshold: float = 1.0, contrast: float = 10.0):
    """Re E values of the Im = 0 row that carry a line-like density branch.

    A node qualifies when its density exceeds ``threshold`` and is
    ``contrast`` times larger than both neighbouring rows.
    """
    i0 = int(np.abs(grid.im_axis).argmin())
    if grid.im_axis[i0] != 0 or i0 == 0 or i0 == len(grid.im_axis) - 1:
        raise ValueError("grid needs an interior Im z = 0 row")
    row = grid.rho[i0]
    nb = np.fmax(grid.rho[i0 - 1], grid.rho[i0 + 1])
    ok = grid.converged[i0] & (row > threshold) & (row > contrast * np.nan_to_num(nb))
    return grid.re_axis[ok]


def support_miss_fraction(grid: pastur.DensityGrid, eigs: np.ndarray, eps: float = 1e-4, band: float = 0.01):
    """Fraction of complex eigenvalues (|Im| >= band) where the grid density <= eps.

    The density of the grid node nearest to each eigenvalue is used;
    eigenvalues outside the grid rectangle count as misses.
    """
    z = eigs[np.abs(eigs.imag) >= band]
    if len(z) == 0:
        return 0.0, 0
    vals = np.array([grid.lookup(e) for e in z])
    miss = ~(vals > eps)
    return float(miss.mean()), len(z)


def slice_l1_errors(grid: pastur.DensityGrid, eigs: np.ndarray, re_values, half_width=0.1, band=0.01):
    """Relative L1 error between binned Im E histograms and the Pastur profile.

    For each Re E slab ``|Re E - x| < half_width`` the Monte Carlo
    eigenvalues with ``|Im E| >= band`` are histogrammed on the grid's Im
    nodes and compared with the density integrated over the slab.
    """
    im = grid.im_axis
    edges = np.r_[im[0], 0.5 * (im[1:] + im[:-1]), im[-1]]
    off = np.abs(im) >= band
    out = {}
    for x in re_values:
        cols = np.abs(grid.re_axis - x) < half_width
        prof = np.nansum(grid.rho[:, cols], axis=1) * off
        sel = eigs[(np.abs(eigs.real - x) < half_width) & (np.abs(eigs.imag) >= band)]
        hist, _ = np.histogram(sel.imag, bins=edges)
        hist = hist * off
        if prof.sum() == 0 or hist.sum() == 0:
            out[float(x)] = float("nan")
            continue
        p = prof / prof.sum()
        h = hist / hist.sum()
        out[float(x)] = float(np.abs(p - h).sum())
    return out


def run_density_comparison(
    spec: EnsembleSpec,
    re_axis: Sequence[float],
    im_axis: Sequence[float],
    n_samples: int = 20,
    master_seed: int = 0,
    *,
    lam: float = pastur.LAMBDA_TARGET,
    eps: float = 1e-4,
    band: float = 0.01,
    slices: Sequence[float] = (-1.0, 0.0, 1.0),
) -> dict:
    """Overlay Monte Carlo eigenvalues on the Pastur density of the same ensemble."""
    if spec.family is not Family.GAUSSIAN:
        raise ValueError("density comparison needs a Gaussian ensemble")
    variant = pastur.PasturVariant.for_ensemble(spec.name)
    grid = pastur.density_grid(re_axis, im_axis, variant, spec.alpha, spec.gamma, spec.mu, lam)
    eigs = sample_eigenvalues(spec, n_samples, master_seed)
    miss, n_off = support_miss_fraction(grid, eigs, eps, band)
    off_mask = np.abs(grid.im_axis)[:, None] >= band
    return dict(
        spec=spec,
        grid=grid,
        eigenvalues=eigs,
        outside_fraction=miss,
        n_complex=n_off,
        mc_offaxis_fraction=n_off / len(eigs),
        grid_offaxis_mass=grid.integral(off_mask),
        branches=real_axis_branches(grid) if np.any(grid.im_axis == 0) else np.array([]),
        slice_l1=slice_l1_errors(grid, eigs, slices, band=band),
    )


# -- scaling with M -------------------------------------------------------------

@dataclass
class ScalingFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    slope_stderr: float
    means: np.ndarray = field(default=None, repr=False)
    stderrs: np.ndarray = field(default=None, repr=False)


def fit_loglog(sizes: Sequence[float], values: Sequence[float], stderrs=None) -> ScalingFit:
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(sizes) < 4:
        raise ValueError("a scaling fit needs at least 4 points")
    if np.any(values <= 0):
        raise ValueError("log-log fit needs positive values")
    x, y = np.log(sizes), np.log(values)
    if np.ptp(y) == 0:
        raise ValueError("degenerate scaling data (constant values)")
    coef, cov = np.polyfit(x, y, 1, cov=True)
    return ScalingFit(x, y, float(coef[0]), float(np.sqrt(cov[0, 0])), values,
                      None if stderrs is None else np.asarray(stderrs, dtype=float))


def run_m_scaling(
    sym: SymmetryClass,
    alpha: float,
    T: float,
    mu_over_ET: float,
    M_values: Sequence[int],
    n_samples: int,
    master_seed: int = 0,
    window=sp.CENTRAL_WINDOW,
) -> ScalingFit:
    """Log-log slope of the windowed real fraction against M at fixed alpha, T, mu/E_T."""
    means, errs = [], []
    for M in M_values:
        N = int(round(alpha * M))
        spec = EnsembleSpec(sym, Family.GAUSSIAN, int(M), N, T, 0.0)
        spec = spec.replace(mu=mu_over_ET * en.scales(spec).e_thouless)
        vals = []
        for k in range(n_samples):
            s = sp.spectrum(en.build_hamiltonian(spec, en.sample_seed(master_seed, k, spec.name)))
            vals.append(sp.real_fraction(s, window))
        vals = np.asarray(vals)
        means.append(vals.mean())
        errs.append(vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0)
    means = np.asarray(means)
    if np.all(means == 1.0):
        raise ValueError("degenerate scaling data: spectrum entirely real")
    if np.any(means == 0):
        raise ValueError("no real eigenvalues at some M; increase n_samples")
    return fit_loglog(M_values, means, errs)


def _central_binomial_ratio(n: int) -> float:
    """(2n - 1)!! / (2n)!! = C(2n, n) / 4^n."""
    return math.exp(math.lgamma(2 * n + 1) - 2 * math.lgamma(n + 1) - n * math.log(4.0))


def ginibre_expected_real(M: int) -> float:
    """Exact mean number of real eigenvalues of an M x M real Ginibre matrix.

    Even M: sqrt(2) sum_{k<M/2} (4k-1)!!/(4k)!!.  Odd M: 1 + sqrt(2)
    sum_{k=1}^{(M-1)/2} (4k-3)!!/(4k-2)!!.  Grows like sqrt(2M/pi).
    """
    if M < 1:
        raise ValueError("M must be positive")
    if M % 2 == 0:
        return math.sqrt(2) * sum(_central_binomial_ratio(2 * k) for k in range(M // 2))
    return 1.0 + math.sqrt(2) * sum(_central_binomial_ratio(2 * k - 1) for k in range(1, (M - 1) // 2 + 1))


def ginibre_real_count(M: int, n_samples: int, master_seed: int = 0) -> Tuple[float, float]:
    """Mean number of real eigenvalues of an M x M real Ginibre matrix."""
    if M < 2:
        raise ValueError("M must be >= 2")
    counts = np.empty(n_samples)
    for k in range(n_samples):
        rng = np.random.default_rng(en.sample_seed(master_seed, k, f"GINIBRE{M}"))
        e = sp.eigenvalues(rng.standard_normal((M, M)))
        counts[k] = np.count_nonzero(e.imag == 0)
    err = counts.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else 0.0
    return float(counts.mean()), float(err)


def run_ginibre_scaling(M_values: Sequence[int], n_samples: int, master_seed: int = 0) -> ScalingFit:
    """Log-log slope of the real-eigenvalue fraction of real Ginibre matrices."""
    stats = [ginibre_real_count(M, n_samples, master_seed) for M in M_values]
    frac = [m / M for (m, _), M in zip(stats, M_values)]
    errs = [e / M for (_, e), M in zip(stats, M_values)]
    return fit_loglog(M_values, frac, errs)
