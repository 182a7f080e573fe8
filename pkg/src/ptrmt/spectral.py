"""Spectra, real/complex classification and level statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .ensembles import EffectiveHamiltonian, EnsembleSpec, Family, QuantumMap

EPS_REAL = 1e-8
#: pairing residual allowed for the tolerance-based (complex-arithmetic) path
PAIR_TOL = 1e-8
CENTRAL_WINDOW = (-0.5, 0.5)


class SymmetryViolation(RuntimeError):
    """A non-real eigenvalue without a complex-conjugate partner."""


class EigenSolverError(RuntimeError):
    pass


class SingularMapError(ValueError):
    pass


@dataclass
class SpectrumSample:
    eigenvalues: np.ndarray
    n_real: int
    pairs: np.ndarray
    spec: Optional[EnsembleSpec] = None
    seed: Optional[int] = None
    real_mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        if self.real_mask is None:
            mask = np.ones(len(self.eigenvalues), dtype=bool)
            mask[self.pairs.ravel()] = False
            self.real_mask = mask


@dataclass
class SpacingHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_spacing: float
    mode: str
    spacings: np.ndarray = field(default=None, repr=False)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def _is_block_diagonal(a: np.ndarray) -> bool:
    n = a.shape[0]
    if n % 2:
        return False
    m = n // 2
    return not (np.any(a[:m, m:]) or np.any(a[m:, :m]))


def eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """All eigenvalues of a dense square matrix.

    Hermitian input goes to ``eigvalsh``; real input to the real
    Hessenberg/Schur driver, whose real eigenvalues come out with an exactly
    zero imaginary part and whose complex ones come out as exact conjugate
    pairs.  A matrix that is block diagonal in its two halves is split.
    """
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = a.real
    if a.shape[0] > 1 and _is_block_diagonal(a):
        m = a.shape[0] // 2
        return np.concatenate([eigenvalues(a[:m, :m]), eigenvalues(a[m:, m:])])
    try:
        if np.array_equal(a, a.conj().T):
            return sla.eigvalsh(a, check_finite=False).astype(complex)
        return sla.eigvals(a, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise EigenSolverError(
            f"eigensolver failed for {a.shape[0]}x{a.shape[0]} {a.dtype} matrix, "
            f"norm={np.linalg.norm(a):.3g}: {exc}"
        ) from exc


def _pairs_from_exact(eigs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Classification for spectra of real matrices (exact conjugate pairs)."""
    real_mask = eigs.imag == 0
    up = np.flatnonzero(eigs.imag > 0)
    lo = np.flatnonzero(eigs.imag < 0)
    if len(up) != len(lo):
        raise SymmetryViolation("unbalanced conjugate pairs in a real spectrum")
    up = up[np.lexsort((eigs[up].imag, eigs[up].real))]
    lo = lo[np.lexsort((-eigs[lo].imag, eigs[lo].real))]
    if not np.array_equal(eigs[up], eigs[lo].conj()):
        return real_mask, _assign(eigs, up, lo, None)
    return real_mask, np.column_stack([up, lo])


def _wrapped(d: np.ndarray, period: Optional[float]) -> np.ndarray:
    if period is None:
        return d
    return (d + period / 2) % period - period / 2


def _assign(eigs, up, lo, period):
    diff = eigs[up][:, None] - eigs[lo][None, :].conj()
    cost = np.abs(_wrapped(diff.real, period) + 1j * diff.imag)
    r, c = linear_sum_assignment(cost)
    return np.column_stack([up[r], lo[c]])


def classify(
    eigs: Sequence[complex],
    scale: float = 1.0,
    *,
    eps_real: float = EPS_REAL,
    pair_tol: float = PAIR_TOL,
    period: Optional[float] = None,
    exact: bool = False,
) -> Tuple[int, np.ndarray]:
    """Split a PT-symmetric spectrum into real levels and conjugate pairs.

    Parameters
    ----------
    eigs : array_like of complex
    scale : float
        Energy scale for the tolerances (normally ``max(1, spectral radius)``).
    eps_real : float
        An eigenvalue counts as real when ``|Im E| < eps_real * scale``.
    pair_tol : float
        Maximum ``|E_i - conj(E_j)|`` / scale for an accepted pair.
    period : float, optional
        Period of the real part (``2 pi`` for quasienergies).
    exact : bool
        The spectrum comes from a real matrix, so real eigenvalues have an
        exactly zero imaginary part and pairs are exact conjugates; no
        tolerance is used.

    Returns
    -------
    n_real : int
    pairs : ndarray of shape (k, 2)
        Index pairs ``(i, j)`` with ``Im E_i > 0`` and ``E_j ~ conj(E_i)``.

    Raises
    ------
    SymmetryViolation
        If a non-real eigenvalue has no partner within tolerance.
    """
    eigs = np.asarray(eigs, dtype=complex)
    if exact:
        real_mask, pairs = _pairs_from_exact(eigs)
        return int(real_mask.sum()), pairs

    tol = eps_real * scale
    real_mask = np.abs(eigs.imag) < tol
    up = np.flatnonzero(~real_mask & (eigs.imag > 0))
    lo = np.flatnonzero(~real_mask & (eigs.imag < 0))
    # a near-real pair straddling the threshold: demote the smaller member
    band = 100 * tol
    while len(up) != len(lo):
        longer = up if len(up) > len(lo) else lo
        k = longer[np.argmin(np.abs(eigs[longer].imag))]
        if abs(eigs[k].imag) >= band:
            raise SymmetryViolation(
                f"unmatched eigenvalue {eigs[k]!r} ({len(up)} upper vs {len(lo)} lower)"
            )
        real_mask[k] = True
        up = up[up != k]
        lo = lo[lo != k]

    if len(up) == 0:
        return int(real_mask.sum()), np.zeros((0, 2), dtype=int)

    def key(idx, sign):
        re = eigs[idx].real
        if period is not None:
            re = np.mod(re, period)
        return np.lexsort((sign * eigs[idx].imag, re))

    up_s = up[key(up, 1)]
    lo_s = lo[key(lo, -1)]
    pairs = np.column_stack([up_s, lo_s])
    limit = pair_tol * scale
    if _pair_residual(eigs, pairs, period).max() >= limit:
        pairs = _assign(eigs, up, lo, period)
        res = _pair_residual(eigs, pairs, period)
        if res.max() >= limit:
            bad = pairs[np.argmax(res)]
            raise SymmetryViolation(
                f"eigenvalue {eigs[bad[0]]!r} has no conjugate partner "
                f"(residual {res.max():.3g} > {limit:.3g})"
            )
    return int(real_mask.sum()), pairs


def _pair_residual(eigs, pairs, period=None) -> np.ndarray:
    d = eigs[pairs[:, 0]] - eigs[pairs[:, 1]].conj()
    return np.abs(_wrapped(d.real, period) + 1j * d.imag)


def quasienergies(map_eigs: Sequence[complex]) -> np.ndarray:
    """E = i ln(lambda) on the principal branch (tau = 1)."""
    lam = np.asarray(map_eigs, dtype=complex)
    if np.any(lam == 0):
        raise SingularMapError("quantum map has a zero eigenvalue")
    return 1j * np.log(lam)


def spectrum(obj: Union[EffectiveHamiltonian, QuantumMap], **kw) -> SpectrumSample:
    """Eigenvalues of a drawn Hamiltonian or map, classified.

    Hamiltonians with a real form are diagonalized in that form so the
    classification is tolerance-free.  Map eigenvalues are converted to
    quasienergies.
    """
    spec = obj.spec
    if isinstance(obj, QuantumMap):
        e = quasienergies(eigenvalues(obj.matrix))
        n_real, pairs = classify(e, 1.0, period=2 * np.pi, **kw)
    elif obj.real_form is not None:
        e = eigenvalues(obj.real_form)
        n_real, pairs = classify(e, exact=True)
    else:
        e = eigenvalues(obj.matrix)
        radius = np.abs(e).max() if len(e) else 1.0
        n_real, pairs = classify(e, max(1.0, radius), **kw)
    return SpectrumSample(e, n_real, pairs, spec=spec, seed=obj.seed)


def _window_mask(sample: SpectrumSample, window) -> np.ndarray:
    e = sample.eigenvalues
    if window is None:
        return np.ones(len(e), dtype=bool)
    lo, hi = window
    return (e.real >= lo) & (e.real <= hi)


def default_window(spec: Optional[EnsembleSpec]):
    """Central window for Gaussian ensembles, full spectrum for circular ones."""
    if spec is not None and spec.family is Family.CIRCULAR:
        return None
    return CENTRAL_WINDOW


def complex_fraction(sample: SpectrumSample, window="default") -> float:
    """Fraction of (windowed) eigenvalues that are not real."""
    if isinstance(window, str) and window == "default":
        window = default_window(sample.spec)
    mask = _window_mask(sample, window)
    n = int(mask.sum())
    if n == 0:
        raise ValueError(f"no eigenvalues with real part in window {window}")
    return float(np.count_nonzero(mask & ~sample.real_mask)) / n


def real_fraction(sample: SpectrumSample, window="default") -> float:
    return 1.0 - complex_fraction(sample, window)


def wigner_surmise(s):
    """GOE spacing surmise (pi/2) s exp(-pi s^2 / 4)."""
    s = np.asarray(s, dtype=float)
    return 0.5 * np.pi * s * np.exp(-0.25 * np.pi * s**2)


def wigner_surmise_cdf(s):
    s = np.asarray(s, dtype=float)
    return 1.0 - np.exp(-0.25 * np.pi * s**2)


def gue_surmise(s):
    s = np.asarray(s, dtype=float)
    return 32 / np.pi**2 * s**2 * np.exp(-4 * s**2 / np.pi)


def window_spacings(levels: np.ndarray, window=CENTRAL_WINDOW) -> np.ndarray:
    e = np.sort(np.asarray(levels, dtype=float))
    if window is not None:
        e = e[(e >= window[0]) & (e <= window[1])]
    return np.diff(e)


def spacing_histogram(
    draws: Iterable[Sequence[np.ndarray]],
    mode: str = "superposed",
    bin_width: float = 0.1,
    window=CENTRAL_WINDOW,
    bins: Optional[Sequence[float]] = None,
) -> SpacingHistogram:
    """Nearest-neighbour spacing distribution pooled over draws.

    Each draw is a sequence of level arrays, e.g. ``(eig(H+Gamma),
    eig(H-Gamma))``.  In ``superposed`` mode the arrays of a draw are merged;
    in ``single_sequence`` mode only the first array is used.  Spacings are
    taken inside ``window`` and rescaled by their pooled mean.  Unless
    explicit ``bins`` are given, the bins start at 0 and extend past the
    largest spacing, so the histogram integrates to one.
    """
    if mode not in ("superposed", "single_sequence"):
        raise ValueError(f"unknown spacing mode {mode!r}")
    spacings = []
    for draw in draws:
        if isinstance(draw, np.ndarray) and draw.ndim == 1:
            draw = (draw,)
        levels = np.concatenate(draw) if mode == "superposed" else np.asarray(draw[0])
        spacings.append(window_spacings(np.real(levels), window))
    s = np.concatenate(spacings) if spacings else np.zeros(0)
    if len(s) < 1:
        raise ValueError("fewer than 2 levels in the spacing window")
    mean = float(s.mean())
    if mean > 0:
        s = s / mean
    if bins is None:
        top = max(bin_width, float(s.max()))
        bins = bin_width * np.arange(int(np.floor(top / bin_width)) + 2)
    counts, edges = np.histogram(s, bins=bins)
    dens = counts / (len(s) * np.diff(edges))
    return SpacingHistogram(edges, dens, mean, mode, s)


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov sup distance between samples and a CDF."""
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).statistic)
