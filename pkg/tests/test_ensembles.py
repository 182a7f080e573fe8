import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings, strategies as st

from ptrmt import ensembles as en
from ptrmt import spectral as sp
from ptrmt.ensembles import EnsembleSpec, Family

GAUSSIAN_NAMES = ["GOOE", "GUOE", "GUOE'", "GOAE", "GOAE'"]
CIRCULAR_NAMES = ["COOE", "CUOE", "CUOE'"]


# -- coupling and scales --------------------------------------------------------

@pytest.mark.parametrize("T, expected", [(1.0, 1.0), (0.0, 0.0), (0.96, 0.816496580927726)])
def test_coupling_gamma_values(T, expected):
    assert en.coupling_gamma(T) == pytest.approx(expected, abs=1e-12)


def test_coupling_gamma_independent_formula():
    # gamma solves T = 4 gamma^2 / (1 + gamma^2)^2
    for T in np.linspace(0, 1, 11):
        g = en.coupling_gamma(T)
        assert 4 * g**2 / (1 + g**2) ** 2 == pytest.approx(T, abs=1e-12)


@pytest.mark.parametrize("T", [-0.1, 1.5])
def test_coupling_gamma_rejects_out_of_range(T):
    with pytest.raises(en.EnsembleError, match=r"T out of \[0,1\]"):
        en.coupling_gamma(T)


def test_scales_gaussian():
    s = en.scales(EnsembleSpec.from_name("GOOE", 200, 40, 1.0))
    assert s.mu_O == pytest.approx(np.sqrt(40) / 400)
    assert s.mu_O == pytest.approx(0.015811, abs=1e-6)
    assert s.t_O == pytest.approx(0.025)
    assert s.t_A == pytest.approx(6.25e-4)
    assert s.alpha == pytest.approx(0.2)
    s = en.scales(EnsembleSpec.from_name("GOOE", 400, 80, 1.0))
    assert s.e_thouless == pytest.approx(0.1)


def test_scales_circular():
    s = en.scales(EnsembleSpec.from_name("COOE", 200, 40, 1.0))
    assert s.e_thouless == pytest.approx(0.2)
    assert s.tau == 1.0
    assert s.delta == pytest.approx(2 * np.pi / 200)


def test_gamma_matrix_structure():
    g = en.gamma_matrix(10, 3, 0.5)
    assert np.all(np.linalg.eigvalsh(g) >= 0)
    assert np.count_nonzero(np.diag(g)) == 3
    assert np.allclose(np.diag(g)[:3], en.coupling_gamma(0.5))
    assert np.count_nonzero(g - np.diag(np.diag(g))) == 0


# -- spec validation ------------------------------------------------------------

def test_spec_names_roundtrip():
    for name in GAUSSIAN_NAMES + CIRCULAR_NAMES:
        assert EnsembleSpec.from_name(name, 10, 2, 0.5).name == name
    assert EnsembleSpec.from_name("GUOEp", 10, 2, 0.5).name == "GUOE'"
    # OO' coincides with OO
    assert EnsembleSpec.from_name("GOOE'", 10, 2, 0.5).name == "GOOE"


@pytest.mark.parametrize(
    "args",
    [
        ("GOOE", 10, 11, 0.5),
        ("GOOE", 0, 0, 0.5),
        ("GOOE", 10, 2, 1.5),
        ("GUAE", 10, 2, 0.5),
        ("COAE", 10, 2, 0.5),
        ("XOOE", 10, 2, 0.5),
    ],
)
def test_spec_rejects_invalid(args):
    with pytest.raises(en.EnsembleError):
        EnsembleSpec.from_name(*args)


def test_spec_rejects_negative_mu():
    with pytest.raises(en.EnsembleError):
        EnsembleSpec.from_name("GOOE", 10, 2, 0.5, -0.1)


# -- samplers -------------------------------------------------------------------

def test_goe_one_by_one_is_gaussian_with_diagonal_variance():
    # the GOE diagonal variance is 2/M, which is 2 at M = 1
    vals = np.array([en.sample_goe(1, s)[0, 0] for s in range(4000)])
    assert vals.var() == pytest.approx(2.0, rel=0.1)
    assert sp.ks_distance(vals / np.sqrt(2), stats.norm.cdf) < 0.03


def test_goe_offdiagonal_variance():
    M = 200
    rng = np.random.default_rng(1)
    vals = np.array([en.sample_goe(M, rng)[0, 1] ** 2 for _ in range(10_000)])
    err = vals.std() / np.sqrt(len(vals))
    assert abs(vals.mean() - 1 / M) < 3 * err


def test_gue_offdiagonal_variance_and_hermiticity():
    M = 200
    rng = np.random.default_rng(2)
    h = en.sample_gue(M, rng)
    assert np.array_equal(h, h.conj().T)
    vals = np.array([abs(en.sample_gue(M, rng)[0, 1]) ** 2 for _ in range(3000)])
    err = vals.std() / np.sqrt(len(vals))
    assert abs(vals.mean() - 1 / M) < 3 * err


def test_goe_semicircle():
    M = 200
    e = np.concatenate([np.linalg.eigvalsh(en.sample_goe(M, s)) for s in range(100)])
    cdf = lambda x: 0.5 + (x * np.sqrt(4 - x**2) / 4 + np.arcsin(x / 2)) / np.pi  # noqa: E731
    assert sp.ks_distance(np.clip(e, -2, 2), cdf) < 0.02


def test_antisym_moments():
    assert not np.any(en.sample_antisym(5, 0.0, 1))
    M, mu = 200, 0.05
    rng = np.random.default_rng(3)
    vals = []
    for _ in range(1000):
        a = en.sample_antisym(M, mu, rng)
        vals.append(np.trace(a @ a.T) / M)
    vals = np.asarray(vals)
    assert np.array_equal(a, -a.T)
    assert abs(vals.mean() - mu**2) < 3 * vals.std() / np.sqrt(len(vals))


def test_antisym_needs_two_levels():
    with pytest.raises(en.EnsembleError):
        en.sample_antisym(1, 0.1, 0)


@pytest.mark.parametrize("kind", ["COE", "CUE"])
def test_circular_is_unitary(kind):
    u = en.sample_circular(30, kind, 4)
    assert np.allclose(u.conj().T @ u, np.eye(30), atol=1e-12)
    if kind == "COE":
        assert np.allclose(u, u.T, atol=1e-12)


def test_circular_one_by_one_is_a_phase():
    phases = np.array([np.angle(en.sample_circular(1, "CUE", s)[0, 0]) for s in range(2000)])
    assert np.allclose([abs(en.sample_circular(1, "CUE", 7)[0, 0])], 1.0)
    # uniform on (-pi, pi]: KS against the uniform CDF
    assert sp.ks_distance(phases, lambda x: (x + np.pi) / (2 * np.pi)) < 0.05


def test_haar_phase_fix_gives_uniform_eigenphases():
    # without the phase fix the eigenphase density is visibly non-uniform
    ph = np.concatenate([np.angle(np.linalg.eigvals(en.sample_circular(8, "CUE", s))) for s in range(500)])
    assert sp.ks_distance(ph, lambda x: (x + np.pi) / (2 * np.pi)) < 0.03


def test_unknown_circular_kind():
    with pytest.raises(en.EnsembleError):
        en.sample_circular(3, "CSE", 0)


# -- seeds ----------------------------------------------------------------------

def test_sample_seed_deterministic_and_distinct():
    a = en.sample_seed(7, 3, "GOOE")
    assert a == en.sample_seed(7, 3, "GOOE")
    assert 0 <= a < 2**64
    others = {en.sample_seed(7, 4, "GOOE"), en.sample_seed(8, 3, "GOOE"), en.sample_seed(7, 3, "GUOE")}
    assert a not in others and len(others) == 3


# -- effective Hamiltonians ------------------------------------------------------

@pytest.mark.parametrize("name", GAUSSIAN_NAMES)
def test_hamiltonian_deterministic(name):
    spec = EnsembleSpec.from_name(name, 12, 3, 0.5, 0.1)
    a = en.build(spec, 11)
    b = en.build(spec, 11)
    assert np.array_equal(a.matrix, b.matrix)


@pytest.mark.parametrize("name", ["GOOE", "GUOE", "GOAE", "GOAE'"])
def test_real_form_is_real_and_similar(name):
    spec = EnsembleSpec.from_name(name, 10, 3, 0.7, 0.3)
    ham = en.build(spec, 5)
    assert ham.real_form is not None and np.isrealobj(ham.real_form)
    e1 = np.linalg.eigvals(ham.real_form)
    e2 = np.linalg.eigvals(ham.matrix)
    assert np.abs(e1[:, None] - e2[None, :]).min(axis=1).max() < 1e-9
    assert np.abs(e1[:, None] - e2[None, :]).min(axis=0).max() < 1e-9


def test_guoe_prime_has_no_real_form():
    ham = en.build(EnsembleSpec.from_name("GUOE'", 10, 3, 0.7, 0.3), 5)
    assert ham.real_form is None


@pytest.mark.parametrize("name", GAUSSIAN_NAMES)
def test_decoupled_hermitian_limit_is_degenerate(name):
    ham = en.build(EnsembleSpec.from_name(name, 8, 2, 0.0, 0.0), 3)
    m = ham.matrix
    assert not np.any(m[:8, 8:]) and not np.any(m[8:, :8])
    e = np.sort(np.linalg.eigvals(m).real)
    assert np.allclose(np.linalg.eigvals(m).imag, 0, atol=1e-12)
    assert np.allclose(e[0::2], e[1::2], atol=1e-10)


@pytest.mark.parametrize("name", GAUSSIAN_NAMES)
def test_p_basis_blocks_match_transform(name):
    ham = en.build(EnsembleSpec.from_name(name, 9, 4, 0.6, 0.2), 8)
    full = en.build_p_basis(ham)
    (a, b), (c, d) = en.p_basis_blocks(ham)
    assert np.allclose(full, np.block([[a, b], [c, d]]), atol=1e-12)


def test_p_basis_offdiagonal_at_mu_zero():
    for name in GAUSSIAN_NAMES:
        ham = en.build(EnsembleSpec.from_name(name, 9, 4, 0.6, 0.0), 8)
        off = en.build_p_basis(ham)[:9, 9:]
        if name == "GUOE":
            assert np.allclose(off, 1j * ham.h.imag, atol=1e-12)
            assert np.linalg.norm(off) > 0
        else:
            assert np.linalg.norm(off) < 1e-12


def test_goee_p_basis_blocks():
    ham = en.build(EnsembleSpec.from_name("GOOE", 6, 2, 1.0, 0.3), 1)
    (a, b), (c, d) = en.p_basis_blocks(ham)
    g = ham.gamma_block
    assert np.allclose(a, ham.h + g) and np.allclose(d, ham.h - g)
    assert np.allclose(b, -0.3j * np.eye(6)) and np.allclose(c, b)


def test_goae_p_basis_is_block_diagonal():
    ham = en.build(EnsembleSpec.from_name("GOAE", 6, 2, 1.0, 0.3), 1)
    (a, b), (c, d) = en.p_basis_blocks(ham)
    assert not np.any(b) and not np.any(c)
    assert np.allclose(a, ham.h + ham.a + ham.gamma_block)


def test_common_random_numbers_across_mu_and_T():
    s = EnsembleSpec.from_name("GOAE", 10, 2, 0.5, 0.1)
    a = en.build(s, 4)
    b = en.build(s.replace(mu=0.3, T=0.9), 4)
    assert np.array_equal(a.h, b.h)
    assert np.allclose(a.a * 3, b.a)


def test_circular_build_rejects_gaussian_spec():
    with pytest.raises(en.EnsembleError):
        en.build_quantum_map(EnsembleSpec.from_name("GOOE", 4, 1, 0.5), 0)
    with pytest.raises(en.EnsembleError):
        en.build_hamiltonian(EnsembleSpec.from_name("COOE", 4, 1, 0.5), 0)


# -- quantum maps ----------------------------------------------------------------

def test_sqrt_c_at_full_transparency():
    s = en.sqrt_c(3, 1, 1.0)
    gt = np.sqrt(1j)
    assert gt.real == pytest.approx(2**-0.5) and gt.imag == pytest.approx(2**-0.5)
    assert s[0, 0] == pytest.approx(2**-0.5)
    assert s[0, 3] == pytest.approx(-1j * 2**-0.5)


def test_sqrt_c_decoupled_is_identity():
    assert np.array_equal(en.sqrt_c(4, 0, 0.7), np.eye(8))
    q = en.build(EnsembleSpec.from_name("CUOE", 4, 0, 0.7, 0.2), 3)
    assert not np.any(q.matrix[:4, 4:]) and not np.any(q.matrix[4:, :4])


@pytest.mark.parametrize("name", CIRCULAR_NAMES)
def test_map_unitary_at_mu_zero(name):
    q = en.build(EnsembleSpec.from_name(name, 20, 5, 0.6, 0.0), 2)
    assert np.linalg.norm(q.matrix.conj().T @ q.matrix - np.eye(40)) < 1e-12


@given(T=st.floats(0.0, 1.0), N=st.integers(0, 6))
@settings(max_examples=40, deadline=None)
def test_c_is_unitary(T, N):
    s = en.sqrt_c(6, N, T)
    c = s @ s
    assert np.allclose(c.conj().T @ c, np.eye(12), atol=1e-12)


# -- properties -------------------------------------------------------------------

@given(
    name=st.sampled_from(GAUSSIAN_NAMES + CIRCULAR_NAMES),
    M=st.integers(2, 12),
    frac=st.floats(0, 1),
    T=st.floats(0, 1),
    mu=st.floats(0, 2),
    seed=st.integers(0, 2**32),
)
@settings(max_examples=60, deadline=None)
def test_every_draw_is_real_or_paired(name, M, frac, T, mu, seed):
    spec = EnsembleSpec.from_name(name, M, int(frac * M), T, mu)
    s = sp.spectrum(en.build(spec, seed))
    assert s.n_real + 2 * len(s.pairs) == 2 * M


@given(M=st.integers(1, 30), N=st.integers(0, 30), T=st.floats(0, 1))
def test_gamma_matrix_psd_with_n_entries(M, N, T):
    N = min(N, M)
    g = en.gamma_matrix(M, N, T)
    d = np.diag(g)
    assert np.all(d >= 0)
    assert np.count_nonzero(d) == (N if T > 0 else 0)
