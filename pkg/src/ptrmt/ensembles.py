"""Random-matrix ensembles for coupled absorbing/amplifying resonators.

Each ensemble couples two M-mode resonators (L absorbing, R amplifying)
through an N-channel interface of transparency T.  Two routes are provided:

* Gaussian effective Hamiltonians (GOOE, GUOE, GUOE', GOAE, GOAE')::

      H_eff = [[H_L - i X_L, Gamma], [Gamma, H_R + i X_R]]

* circular quantum maps (COOE, CUOE, CUOE')::

      F = sqrt(C) diag(exp(-mu) F_L, exp(mu) F_R) sqrt(C)

All samplers are pure functions of their seed.
"""
from __future__ import annotations

import dataclasses
import enum
import zlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

SeedLike = Union[int, np.integer, np.random.Generator, None]


class HermitianPart(enum.Enum):
    O = "O"
    U = "U"


class AntihermitianPart(enum.Enum):
    O_UNIFORM = "O"
    A_ANTISYM = "A"


class TimeReversal(enum.Enum):
    PT = "PT"
    PTT_PRIME = "PTT'"


class Family(enum.Enum):
    GAUSSIAN = "G"
    CIRCULAR = "C"


class EnsembleError(ValueError):
    """Raised for parameter combinations that do not define an ensemble."""


@dataclass(frozen=True)
class SymmetryClass:
    """Symmetry label S_H S_X (primed for PTT' symmetry).

    Only OO, UO, UO', OA and OA' can be built.  OO and OO' coincide, so an OO
    class requested with PTT' is normalized to PT.
    """

    hermitian_part: HermitianPart
    antihermitian_part: AntihermitianPart
    time_reversal: TimeReversal = TimeReversal.PT

    def __post_init__(self):
        if (self.hermitian_part, self.antihermitian_part) == (
            HermitianPart.U,
            AntihermitianPart.A_ANTISYM,
        ):
            raise EnsembleError("class UA is not one of the five supported classes")
        if self.is_oo and self.time_reversal is TimeReversal.PTT_PRIME:
            object.__setattr__(self, "time_reversal", TimeReversal.PT)

    @property
    def is_oo(self) -> bool:
        return (
            self.hermitian_part is HermitianPart.O
            and self.antihermitian_part is AntihermitianPart.O_UNIFORM
        )

    @property
    def primed(self) -> bool:
        return self.time_reversal is TimeReversal.PTT_PRIME

    @property
    def label(self) -> str:
        s = self.hermitian_part.value + self.antihermitian_part.value
        return s + "'" if self.primed else s

    @classmethod
    def from_label(cls, label: str) -> "SymmetryClass":
        text = label.strip().upper().replace("P", "'").replace("’", "'")
        primed = text.endswith("'")
        core = text.rstrip("'")
        if len(core) != 2:
            raise EnsembleError(f"unknown symmetry class {label!r}")
        try:
            hp = HermitianPart(core[0])
            ap = AntihermitianPart(core[1])
        except ValueError as exc:
            raise EnsembleError(f"unknown symmetry class {label!r}") from exc
        tr = TimeReversal.PTT_PRIME if primed else TimeReversal.PT
        return cls(hp, ap, tr)

    def __str__(self):
        return self.label


OO = SymmetryClass(HermitianPart.O, AntihermitianPart.O_UNIFORM)
UO = SymmetryClass(HermitianPart.U, AntihermitianPart.O_UNIFORM)
UO_PRIME = SymmetryClass(HermitianPart.U, AntihermitianPart.O_UNIFORM, TimeReversal.PTT_PRIME)
OA = SymmetryClass(HermitianPart.O, AntihermitianPart.A_ANTISYM)
OA_PRIME = SymmetryClass(HermitianPart.O, AntihermitianPart.A_ANTISYM, TimeReversal.PTT_PRIME)

ALL_CLASSES = (OO, UO, UO_PRIME, OA, OA_PRIME)


@dataclass(frozen=True)
class EnsembleSpec:
    """One statistical ensemble: symmetry class, family and (M, N, T, mu)."""

    sym: SymmetryClass
    family: Family
    M: int
    N: int
    T: float
    mu: float = 0.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise EnsembleError(f"M must be a positive integer, got {self.M}")
        if int(self.N) != self.N or self.N < 0:
            raise EnsembleError(f"N must be a nonnegative integer, got {self.N}")
        if self.N > self.M:
            raise EnsembleError(f"N={self.N} exceeds M={self.M}")
        if not 0.0 <= self.T <= 1.0:
            raise EnsembleError(f"T out of [0,1]: {self.T}")
        if self.mu < 0 or not np.isfinite(self.mu):
            raise EnsembleError(f"mu must be a nonnegative real, got {self.mu}")
        if (
            self.family is Family.CIRCULAR
            and self.sym.antihermitian_part is AntihermitianPart.A_ANTISYM
        ):
            raise EnsembleError("circular family requires uniform absorption (S_X = O)")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def name(self) -> str:
        """Ensemble acronym such as ``GOOE`` or ``CUOE'``."""
        s = self.family.value + self.sym.label.rstrip("'") + "E"
        return s + "'" if self.sym.primed else s

    @property
    def alpha(self) -> float:
        return self.N / self.M

    @property
    def gamma(self) -> float:
        return coupling_gamma(self.T)

    @classmethod
    def from_name(cls, name: str, M: int, N: int, T: float, mu: float = 0.0) -> "EnsembleSpec":
        """Build a spec from an acronym like ``GOOE``, ``GUOE'`` or ``CUOEp``."""
        text = name.strip().upper().replace("’", "'")
        if text.endswith("P"):
            text = text[:-1] + "'"
        primed = text.endswith("'")
        core = text.rstrip("'")
        if len(core) != 4 or core[-1] != "E" or core[0] not in "GC":
            raise EnsembleError(f"unknown ensemble name {name!r}")
        family = Family(core[0])
        sym = SymmetryClass.from_label(core[1:3] + ("'" if primed else ""))
        return cls(sym, family, M, N, T, mu)

    def replace(self, **changes) -> "EnsembleSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ScalesReport:
    delta: float
    e_thouless: float
    mu_O: float
    mu_A: float
    t_O: float
    t_A: float
    alpha: float
    tau: float


def scales(spec: EnsembleSpec) -> ScalesReport:
    """Characteristic energy scales of an ensemble.

    Gaussian: Delta = pi/M and E_T = T alpha / 2.  Circular (tau = 1):
    Delta = 2 pi / M and E_T = T alpha.
    """
    M, N = spec.M, spec.N
    delta = np.pi / M if spec.family is Family.GAUSSIAN else 2 * np.pi / M
    n_inv = 1.0 / N if N else np.inf
    return ScalesReport(
        delta=delta,
        e_thouless=N * spec.T * delta / (2 * np.pi),
        mu_O=np.sqrt(N) * delta / (2 * np.pi),
        mu_A=np.sqrt(M) * delta / (2 * np.pi),
        t_O=n_inv,
        t_A=n_inv**2,
        alpha=N / M,
        tau=1.0,
    )


def coupling_gamma(T: float) -> float:
    """Interface coupling gamma = sqrt(T) / (1 + sqrt(1 - T))."""
    if not 0.0 <= T <= 1.0:
        raise EnsembleError(f"T out of [0,1]: {T}")
    return float(np.sqrt(T) / (1.0 + np.sqrt(1.0 - T)))


def gamma_matrix(M: int, N: int, T: float) -> np.ndarray:
    """Gamma = gamma * diag(1_N, 0_{M-N})."""
    return np.diag(np.r_[np.full(N, coupling_gamma(T)), np.zeros(M - N)])


def class_tag(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def sample_seed(master_seed: int, index: int, tag: Union[int, str]) -> int:
    """64-bit per-sample seed mixed from (master seed, sample index, class tag).

    The mixing goes through :class:`numpy.random.SeedSequence`, so seeds of
    different indices are statistically independent and any worker can
    recompute them.
    """
    if isinstance(tag, str):
        tag = class_tag(tag)
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index), int(tag)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_goe(M: int, seed: SeedLike = None) -> np.ndarray:
    """GOE matrix with off-diagonal variance 1/M and diagonal variance 2/M.

    With this normalization the eigenvalue density tends to the semicircle
    of radius 2.
    """
    if M < 1:
        raise EnsembleError(f"M must be positive, got {M}")
    a = _rng(seed).standard_normal((M, M))
    return (a + a.T) / np.sqrt(2 * M)


def sample_gue(M: int, seed: SeedLike = None) -> np.ndarray:
    """GUE matrix with E|H_lm|^2 = 1/M (diagonal real with variance 1/M)."""
    if M < 1:
        raise EnsembleError(f"M must be positive, got {M}")
    rng = _rng(seed)
    a = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return (a + a.conj().T) / (2 * np.sqrt(M))


def sample_antisym(M: int, mu: float, seed: SeedLike = None) -> np.ndarray:
    """Real antisymmetric matrix with M^-1 E[tr A A^T] = mu^2 exactly.

    The independent upper-triangle entries have variance mu^2 / (M - 1).
    """
    if mu < 0:
        raise EnsembleError(f"mu must be nonnegative, got {mu}")
    if M < 2:
        if mu > 0:
            raise EnsembleError("an antisymmetric matrix with nonzero norm needs M >= 2")
        return np.zeros((M, M))
    a = np.triu(_rng(seed).standard_normal((M, M)), 1)
    return (a - a.T) * (mu / np.sqrt(M - 1))


def _haar_unitary(M: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def sample_circular(M: int, symmetry: str = "CUE", seed: SeedLike = None) -> np.ndarray:
    """Haar unitary (CUE) or symmetric U^T U with U Haar (COE)."""
    if M < 1:
        raise EnsembleError(f"M must be positive, got {M}")
    u = _haar_unitary(M, _rng(seed))
    symmetry = symmetry.upper()
    if symmetry == "CUE":
        return u
    if symmetry == "COE":
        return u.T @ u
    raise EnsembleError(f"unknown circular ensemble {symmetry!r}")


@dataclass
class EffectiveHamiltonian:
    """A drawn 2M x 2M effective Hamiltonian.

    ``h`` and ``a`` keep the internal blocks (H = H_L and the antisymmetric
    matrix A, if any).  ``real_form`` is a real matrix similar to ``matrix``;
    it is absent only for GUOE', which has no explicit real representation.
    """

    matrix: np.ndarray
    spec: EnsembleSpec
    seed: Optional[int]
    real_form: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None

    @property
    def gamma_block(self) -> np.ndarray:
        return gamma_matrix(self.spec.M, self.spec.N, self.spec.T)


@dataclass
class QuantumMap:
    matrix: np.ndarray
    spec: EnsembleSpec
    seed: Optional[int]
    f: Optional[np.ndarray] = None


def _draw_blocks(spec: EnsembleSpec, seed: SeedLike):
    rng = _rng(seed)
    if spec.sym.hermitian_part is HermitianPart.O:
        h = sample_goe(spec.M, rng)
    else:
        h = sample_gue(spec.M, rng)
    a = None
    if spec.sym.antihermitian_part is AntihermitianPart.A_ANTISYM:
        if spec.M < 2 and spec.mu > 0:
            raise EnsembleError("an antisymmetric matrix with nonzero norm needs M >= 2")
        # unit draw rescaled, so mu sweeps reuse the same A
        a = sample_antisym(spec.M, 1.0, rng) * spec.mu if spec.M >= 2 else np.zeros((1, 1))
    return h, a


def build_hamiltonian(spec: EnsembleSpec, seed: SeedLike = None) -> EffectiveHamiltonian:
    """Draw one effective Hamiltonian of a Gaussian ensemble.

    The same seed gives the same internal matrices for every (T, mu), so
    sweeps over these parameters use common random numbers.  For the A
    classes the antisymmetric part is a unit-norm draw rescaled by mu.

    Parameters
    ----------
    spec : EnsembleSpec
        Gaussian-family ensemble.
    seed : int or numpy.random.Generator

    Returns
    -------
    EffectiveHamiltonian
    """
    if spec.family is not Family.GAUSSIAN:
        raise EnsembleError(f"{spec.name} is not a Gaussian ensemble")
    h, a = _draw_blocks(spec, seed)
    M, mu = spec.M, spec.mu
    g = gamma_matrix(M, spec.N, spec.T)
    eye = np.eye(M)
    sym = spec.sym

    if sym.antihermitian_part is AntihermitianPart.O_UNIFORM:
        top = h - 1j * mu * eye
        bottom = (h.conj() if not sym.primed else h) + 1j * mu * eye
    elif not sym.primed:
        # i X = -A on both sides under PT
        top = h + a
        bottom = h + a
    else:
        top = h + a
        bottom = h - a
    matrix = np.block([[top, g], [g, bottom]])

    real_form = None
    if sym == OO:
        real_form = np.block([[h + g, mu * eye], [-mu * eye, h - g]])
    elif sym == UO:
        hr, hi = h.real, h.imag
        real_form = np.block([[hr + g, mu * eye - hi], [hi - mu * eye, hr - g]])
    elif sym == OA:
        z = np.zeros((M, M))
        real_form = np.block([[h + a + g, z], [z, h + a - g]])
    elif sym == OA_PRIME:
        real_form = np.block([[h + g, a], [a, h - g]])

    return EffectiveHamiltonian(
        matrix=matrix,
        spec=spec,
        seed=None if isinstance(seed, np.random.Generator) else seed,
        real_form=real_form,
        h=h,
        a=a,
    )


def build_p_basis(ham: EffectiveHamiltonian) -> np.ndarray:
    """Return U H U with U = (sigma_x + sigma_z)/sqrt(2) (x) 1_M."""
    M = ham.spec.M
    u = np.kron(np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2), np.eye(M))
    return u @ ham.matrix @ u


def p_basis_blocks(ham: EffectiveHamiltonian):
    """Closed-form P-basis blocks ((11, 12), (21, 22)) for the drawn class."""
    h, a, g, mu = ham.h, ham.a, ham.gamma_block, ham.spec.mu
    eye = np.eye(ham.spec.M)
    sym = ham.spec.sym
    if sym == OO or sym == UO_PRIME:
        off = -1j * mu * eye
        return (h + g, off), (off, h - g)
    if sym == UO:
        off = 1j * h.imag - 1j * mu * eye
        return (h.real + g, off), (off, h.real - g)
    if sym == OA:
        z = np.zeros_like(h)
        return (h + a + g, z), (z, h + a - g)
    return (h + g, a), (a, h - g)


def sqrt_c(M: int, N: int, T: float) -> np.ndarray:
    """The symmetric interface factor sqrt(C) of the quantum map."""
    gt = np.sqrt(np.sqrt(1.0 - T) + 1j * np.sqrt(T))
    p = np.diag(np.r_[np.ones(N), np.zeros(M - N)])
    q = np.eye(M) - p
    diag = gt.real * p + q
    off = -1j * gt.imag * p
    return np.block([[diag, off], [off, diag]])


def build_quantum_map(spec: EnsembleSpec, seed: SeedLike = None) -> QuantumMap:
    """Draw one quantum map of a circular ensemble (tau = 1).

    F = F_L is drawn from the COE (OO) or CUE (UO, UO'); F_R = F^T for PT
    symmetry and F_R = F for PTT' symmetry.
    """
    if spec.family is not Family.CIRCULAR:
        raise EnsembleError(f"{spec.name} is not a circular ensemble")
    rng = _rng(seed)
    kind = "COE" if spec.sym.hermitian_part is HermitianPart.O else "CUE"
    f = sample_circular(spec.M, kind, rng)
    f_r = f if spec.sym.primed else f.T
    s = sqrt_c(spec.M, spec.N, spec.T)
    z = np.zeros_like(f)
    inner = np.block([[np.exp(-spec.mu) * f, z], [z, np.exp(spec.mu) * f_r]])
    return QuantumMap(
        matrix=s @ inner @ s,
        spec=spec,
        seed=None if isinstance(seed, np.random.Generator) else seed,
        f=f,
    )


def build(spec: EnsembleSpec, seed: SeedLike = None):
    """Draw a Hamiltonian or a quantum map, whichever the family calls for."""
    if spec.family is Family.GAUSSIAN:
        return build_hamiltonian(spec, seed)
    return build_quantum_map(spec, seed)
