"""Command-line front end.

Each subcommand reads a JSON config and/or flags, runs one study and writes
CSV tables plus ``manifest.json`` into the output directory.

Exit codes: 0 success, 2 configuration error, 3 some cells failed,
4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from . import ensembles as en
from . import experiments as ex
from . import pastur
from . import runio
from . import spectral as sp
from .runio import ConfigError, RunConfig, ResultWriter

log = logging.getLogger(__name__)

_SOLVER_ERRORS = (
    pastur.SolverError,
    pastur.ContinuationError,
    pastur.BranchError,
    pastur.DensityError,
    sp.SymmetryViolation,
    sp.EigenSolverError,
    sp.SingularMapError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptrmt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ptrmt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=None, help="JSON config or run manifest")
        p.add_argument("--class", "--ensemble", dest="ensemble", default=S, help="e.g. GOOE, GUOE', COOE")
        p.add_argument("--M", type=int, default=S)
        p.add_argument("--N", type=int, default=S)
        p.add_argument("--T", type=float, default=S)
        p.add_argument("--seed", dest="master_seed", type=int, default=S)
        p.add_argument("--samples", type=int, default=S)
        p.add_argument("--workers", type=int, default=S)
        p.add_argument("-o", "--output-dir", dest="output_dir", default=S)
        p.add_argument("--mu-unit", dest="mu_unit", choices=runio.MU_UNITS, default=S)
        return p

    p = common(sub.add_parser("sample", help="eigenvalues of individual draws"))
    p.add_argument("--mu", default=S, help="e.g. 0.2, 0.2raw, 2ET, 5mu0")

    p = common(sub.add_parser("transition", help="complex fraction against mu"))
    p.add_argument("--T-values", dest="T_values", default=S, help="comma-separated")
    p.add_argument("--mu-max", dest="mu_max", default=S)
    p.add_argument("--mu-grid", dest="mu_grid", default=S, help="comma-separated")
    p.add_argument("--n-mu", dest="n_mu", type=int, default=S)
    p.add_argument("--window", default=S, help="lo,hi | default | none")

    p = common(sub.add_parser("spacing", help="level spacings of the hermitian limit"))
    p.add_argument("--T-values", dest="T_values", default=S)
    p.add_argument("--mode", choices=("superposed", "single_sequence"), default=S)
    p.add_argument("--bin-width", dest="bin_width", type=float, default=S)
    p.add_argument("--window", default=S)

    p = common(sub.add_parser("density", help="Pastur density on a grid"))
    p.add_argument("--mu", default=S)
    for name in ("re_min", "re_max", "im_min", "im_max", "lam", "dz"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=S)
    p.add_argument("--n-re", dest="n_re", type=int, default=S)
    p.add_argument("--n-im", dest="n_im", type=int, default=S)
    p.add_argument("--method", choices=("fd", "implicit"), default=S)

    p = common(sub.add_parser("mscaling", help="real fraction against M"))
    p.add_argument("--M-values", dest="M_values", default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--mu-over-ET", dest="mu_over_ET", type=float, default=S)
    p.add_argument("--window", default=S)

    p = common(sub.add_parser("ginibre", help="real eigenvalues of real Ginibre matrices"))
    p.add_argument("--M-values", dest="M_values", default=S)

    p = sub.add_parser("scales", help="print the energy scales of an ensemble")
    p.add_argument("--config", default=None)
    p.add_argument("--class", "--ensemble", dest="ensemble", default=S)
    p.add_argument("--M", type=int, default=S)
    p.add_argument("--N", type=int, default=S)
    p.add_argument("--T", type=float, default=S)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(ns).items() if k not in ("config", "verbose")}
    if ns.command == "scales":
        overrides["command"] = "sample"
    return runio.parse_config(ns.config, overrides)


def _window(value):
    return tuple(value) if isinstance(value, list) else value


# -- commands ---------------------------------------------------------------------

def run_sample(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    spec = cfg.spec(runio.mu_in_raw(cfg, p["mu"]))
    rows, seeds = [], []
    for k in range(p["samples"]):
        seed = en.sample_seed(p["master_seed"], k, spec.name)
        s = sp.spectrum(en.build(spec, seed))
        seeds.append(seed)
        order = np.lexsort((s.eigenvalues.imag, s.eigenvalues.real))
        rows += [(k, seed, e.real, e.imag, r) for e, r in zip(s.eigenvalues[order], s.real_mask[order])]
    out.seeds = {"samples": seeds}
    out.write_csv("eigenvalues.csv", ("sample", "seed", "re", "im", "real_flag"), rows)
    return runio.EXIT_OK


def run_transition(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    grid = runio.mu_grid_in_mu0(cfg)
    curves = ex.run_transition(
        cfg.spec(), p["T_values"], grid, p["samples"], p["master_seed"],
        workers=p["workers"], window=_window(p["window"]),
    )
    summary = []
    for c in curves:
        rows = [
            (c.T, m * c.mu0, m, f, e, c.n_samples)
            for j, (m, f, e) in enumerate(zip(c.mu_grid, c.fc_mean, c.fc_stderr))
            if j not in c.failures
        ]
        name = f"curve_T{c.T:g}.csv"
        out.write_csv(name, ("T", "mu", "mu_over_mu0", "fc_mean", "fc_stderr", "n_samples"), rows)
        try:
            mu_pt = ex.find_mu_pt(c)
        except ValueError as exc:
            log.warning("T=%g: %s", c.T, exc)
            mu_pt = None
        summary.append({"T": c.T, "file": name, "mu_pt_over_mu0": mu_pt})
        out.failures += [
            {"T": c.T, "mu_over_mu0": float(c.mu_grid[j]), "error": msg} for j, msg in sorted(c.failures.items())
        ]
    out.seeds = {"samples": curves[0].seeds if curves else []}
    out.extra["curves"] = summary
    return runio.EXIT_PARTIAL if out.failures else runio.EXIT_OK


def run_spacing(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    spec = cfg.spec()
    hists = ex.run_spacing(
        spec.sym, p["T_values"], p["M"], p["N"], p["samples"], p["mode"], p["master_seed"],
        bin_width=p["bin_width"], window=_window(p["window"]), workers=p["workers"],
    )
    summary = []
    for T, h in zip(p["T_values"], hists):
        name = f"spacing_T{T:g}.csv"
        rows = [(a, b, d) for a, b, d in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts)]
        out.write_csv(name, ("s_left", "s_right", "density"), rows)
        summary.append({"T": T, "file": name, "mean_spacing": h.mean_spacing, "n_spacings": len(h.spacings)})
    out.seeds = {"samples": [en.sample_seed(p["master_seed"], k, spec.name) for k in range(p["samples"])]}
    out.extra["histograms"] = summary
    return runio.EXIT_OK


def run_density(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    spec = cfg.spec(runio.mu_in_raw(cfg, p["mu"]))
    if spec.family is not en.Family.GAUSSIAN:
        raise ConfigError("ensemble", "density needs a Gaussian ensemble")
    variant = pastur.PasturVariant.for_ensemble(spec.name)
    re_axis = np.linspace(p["re_min"], p["re_max"], p["n_re"])
    im_axis = np.linspace(p["im_min"], p["im_max"], p["n_im"])
    grid = pastur.density_grid(
        re_axis, im_axis, variant, spec.alpha, spec.gamma, spec.mu, p["lam"], method=p["method"], dz=p["dz"]
    )
    rows = [
        (x, y, grid.rho[i, j], grid.residual[i, j], grid.converged[i, j])
        for i, y in enumerate(im_axis)
        for j, x in enumerate(re_axis)
    ]
    out.write_csv("density.csv", ("re", "im", "rho", "residual", "converged_flag"), rows)
    blocks = []
    for i, y in enumerate(im_axis):
        blocks.append("".join(f"{x!r} {y!r} {grid.rho[i, j]!r}\n" for j, x in enumerate(re_axis.tolist())))
    out.write("density.dat", "\n".join(blocks))
    header = {
        "variant": variant.name,
        "alpha": spec.alpha,
        "gamma": spec.gamma,
        "mu": spec.mu,
        "lam": p["lam"],
        "method": p["method"],
        "n_clipped": grid.n_clipped,
        "n_unconverged": int((~grid.converged).sum()),
        "columns": ["re", "im", "rho", "residual", "converged_flag"],
    }
    out.write("density_header.json", json.dumps(header, indent=2, sort_keys=True) + "\n")
    if p["samples"] > 0:
        eigs = ex.sample_eigenvalues(spec, p["samples"], p["master_seed"])
        order = np.lexsort((eigs.imag, eigs.real))
        out.write_csv("mc_eigenvalues.csv", ("re", "im"), [(e.real, e.imag) for e in eigs[order]])
        out.seeds = {"samples": [en.sample_seed(p["master_seed"], k, spec.name) for k in range(p["samples"])]}
    bad = ~grid.converged
    out.failures += [{"re": float(re_axis[j]), "im": float(im_axis[i])} for i, j in zip(*np.nonzero(bad))]
    return runio.EXIT_PARTIAL if out.failures else runio.EXIT_OK


def run_mscaling(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    fit = ex.run_m_scaling(
        cfg.spec().sym, p["alpha"], p["T"], p["mu_over_ET"], p["M_values"], p["samples"],
        p["master_seed"], window=_window(p["window"]),
    )
    rows = list(zip(p["M_values"], fit.means, fit.stderrs))
    out.write_csv("mscaling.csv", ("M", "real_fraction", "stderr"), rows)
    out.extra["fit"] = {"slope": fit.slope, "slope_stderr": fit.slope_stderr}
    return runio.EXIT_OK


def run_ginibre(cfg: RunConfig, out: ResultWriter) -> int:
    p = cfg.params
    rows = []
    for M in p["M_values"]:
        mean, err = ex.ginibre_real_count(M, p["samples"], p["master_seed"])
        rows.append((M, mean, err, mean / M))
    out.write_csv("ginibre.csv", ("M", "mean_real", "stderr", "real_fraction"), rows)
    fit = ex.fit_loglog([r[0] for r in rows], [r[3] for r in rows], [r[2] / r[0] for r in rows])
    out.extra["fit"] = {"slope": fit.slope, "slope_stderr": fit.slope_stderr}
    return runio.EXIT_OK


_RUNNERS = {
    "sample": run_sample,
    "transition": run_transition,
    "spacing": run_spacing,
    "density": run_density,
    "mscaling": run_mscaling,
    "ginibre": run_ginibre,
}


def format_scales(spec: en.EnsembleSpec) -> str:
    s = en.scales(spec)
    lines = [f"{spec.name}  M={spec.M} N={spec.N} T={spec.T:g}"]
    for label, value in (
        ("Delta", s.delta), ("E_T", s.e_thouless), ("mu_O", s.mu_O), ("mu_A", s.mu_A),
        ("T_O", s.t_O), ("T_A", s.t_A), ("alpha", s.alpha), ("tau", s.tau),
    ):
        lines.append(f"  {label:<6} {value:.6g}")
    return "\n".join(lines)


def execute(cfg: RunConfig) -> int:
    """Run a validated config and write its outputs; returns the exit code."""
    out = ResultWriter(cfg)
    code = _RUNNERS[cfg.command](cfg, out)
    scales = en.scales(cfg.spec()) if cfg.command != "ginibre" else None
    out.finish(scales)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(ns)
        if ns.command == "scales":
            print(format_scales(cfg.spec()))
            return runio.EXIT_OK
        return execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return runio.EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return runio.EXIT_CONFIG
    except (*_SOLVER_ERRORS, ValueError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return runio.EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
