"""Command-line front end.

Every estimator subcommand reads a sample, evaluates a density on a grid and
writes ``x,density`` CSV rows. ``simulate`` runs the Monte Carlo harness.
Errors go to stderr as ``ClassName: message`` with exit status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dirichlet, gendirichlet, hermite, local, loglinear, simulation
from .core import NormalDensity, Sample, concentrated_lattice, normal_family, parametric_posterior
from .errors import BayesDensError, DomainError, ParseError
from .kernels import KERNELS, get_kernel, kde, rule_of_thumb

SUBCOMMANDS = ("kde", "dp", "binned", "gendirichlet-mode", "pinned", "residual", "hermite",
               "loglinear", "sic", "local", "ebayes", "simulate")

# applied after the config file; None means "derive from the data"
DEFAULTS = {
    "kernel": "gaussian", "h": None, "a": 1.0, "c": 1.0, "lambda": 0.0, "delta": "d1",
    "m": 4, "seed": 0, "grid": None, "column": None, "bins": 20, "cuts": "", "z": "",
    "basis": "cosine", "tau": None, "m_max": 6, "variant": "const", "rule": None,
    "mu0": None, "sigma0": None, "draws": 100, "truth": "normal", "estimators": "kde,correction",
    "n": 100, "replications": 100, "workers": 1,
}
_FLOATS = {"h", "a", "c", "lambda", "tau", "mu0", "sigma0"}
_INTS = {"m", "seed", "bins", "m_max", "draws", "n", "replications", "workers"}
_MAX_SEED = 2 ** 64 - 1


def fmt(v: float) -> str:
    return f"{v:.9g}"


# ---------------------------------------------------------------------------
# Input
# ---------------------------------------------------------------------------


def _parse_float(text: str, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text.strip()!r} as a number", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text.strip()!r}", lineno)
    return v


def ingest(path, column: str | None = None) -> Sample:
    """Read newline-delimited numbers or a CSV with one header row.

    A first line that does not parse as numbers is taken as a header; a
    header is required to select ``column`` by name. Blank lines are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise DomainError(f"input file {str(path)!r} does not exist")
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and any(f.strip() for f in r)]
    if not rows:
        raise ParseError("input file is empty")
    first_line, first = rows[0]
    try:
        [float(f) for f in first]
        header = None
    except ValueError:
        header = [f.strip() for f in first]
        rows = rows[1:]
    if not rows:
        raise ParseError("input file has a header but no data")
    if column is None:
        if header is not None and len(header) > 1:
            raise DomainError(f"several columns {header}; choose one with --column")
        idx = 0
    elif header is not None:
        if column not in header:
            raise DomainError(f"column {column!r} not found in header {header}")
        idx = header.index(column)
    elif column.isdigit():
        idx = int(column)
    else:
        raise DomainError("--column by name needs a header row")
    values = []
    for lineno, r in rows:
        if idx >= len(r):
            raise ParseError(f"missing column {idx}", lineno)
        values.append(_parse_float(r[idx], lineno))
    return Sample(values)


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", lineno)
            key, val = (p.strip() for p in line.split("=", 1))
            key = key.replace("-", "_")
            if not key:
                raise ParseError("empty key", lineno)
            out[key] = val
    return out


def parse_grid(text: str) -> np.ndarray:
    """``MIN:MAX:COUNT`` (``COUNT >= 2``) or an explicit comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise DomainError("grid must be MIN:MAX:COUNT")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise DomainError(f"bad grid {text!r}") from None
        if count < 2 or not hi > lo:
            raise DomainError("grid needs COUNT >= 2 and MAX > MIN")
        return np.linspace(lo, hi, count)
    try:
        pts = np.array([float(p) for p in text.split(",")])
    except ValueError:
        raise DomainError(f"bad grid {text!r}") from None
    if pts.size > 1 and not np.all(np.diff(pts) > 0):
        raise DomainError("explicit grid points must be increasing")
    return pts


def _floats(text: str) -> np.ndarray:
    if not text:
        return np.empty(0)
    try:
        return np.array([float(p) for p in str(text).split(",")])
    except ValueError:
        raise DomainError(f"bad number list {text!r}") from None


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def _coerce(key, val):
    if val is None or not isinstance(val, str):
        return val
    if key in _FLOATS:
        try:
            return float(val)
        except ValueError:
            raise DomainError(f"{key} must be a number, got {val!r}") from None
    if key in _INTS:
        try:
            return int(val)
        except ValueError:
            raise DomainError(f"{key} must be an integer, got {val!r}") from None
    return val


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    cfg = dict(DEFAULTS)
    cfg.update({"input": None, "out": None, "meta": None, "report": None})
    if args.config:
        cfg.update(read_config(args.config))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            cfg[k] = v
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    cfg["command"] = args.command
    for k in ("h", "a", "c", "lambda", "tau"):
        v = cfg.get(k)
        if v is not None and not v >= 0:
            raise DomainError(f"{k} must be nonnegative")
    if not 0 <= cfg["seed"] <= _MAX_SEED:
        raise DomainError("seed must be a 64-bit unsigned integer")
    if cfg["kernel"] not in KERNELS:
        raise DomainError(f"unknown kernel {cfg['kernel']!r}")
    return cfg


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _bandwidth(cfg, s: Sample) -> float:
    if cfg["h"] is not None:
        return cfg["h"]
    if s.n < 2 or s.sd() == 0:
        raise DomainError("cannot derive a bandwidth from this sample; pass --h")
    return rule_of_thumb(s, get_kernel(cfg["kernel"]))


def _grid(cfg, s: Sample, h: float | None) -> np.ndarray:
    if cfg["grid"] is not None:
        return parse_grid(str(cfg["grid"]))
    pad = 4.0 * max(h or 0.0, s.sd(), 1e-3)
    return np.linspace(s.values[0] - pad, s.values[-1] + pad, 401)


def _start(cfg, s: Sample) -> NormalDensity:
    """Prior guess ``N(mu0, sigma0^2)``; unspecified parts fitted to the data."""
    mu = cfg["mu0"] if cfg["mu0"] is not None else s.mean()
    sd = cfg["sigma0"] if cfg["sigma0"] is not None else (s.sd() if s.sd() > 0 else 1.0)
    return NormalDensity(mu, sd)


def _background(s: Sample):
    fam = normal_family()
    return fam, parametric_posterior(fam, s, lattice=concentrated_lattice(s))


def _run_kde(cfg, s, x):
    h = _bandwidth(cfg, s)
    return kde(s, cfg["kernel"], h, x), {"h": h, "kernel": cfg["kernel"]}


def _run_dp(cfg, s, x):
    h = _bandwidth(cfg, s)
    f0 = _start(cfg, s)
    prior = dirichlet.DirichletPrior(cfg["a"], f0)
    est = dirichlet.dp_estimate(prior, s, cfg["kernel"], h, x)
    return est, {"h": h, "kernel": cfg["kernel"], "a": cfg["a"], "mu0": f0.mu, "sigma0": f0.sigma}


def _binned_data(cfg, s):
    lo, hi = s.values[0], s.values[-1]
    if not hi > lo:
        raise DomainError("binning needs at least two distinct values")
    if cfg["bins"] < 1:
        raise DomainError("bins must be positive")
    edges = np.linspace(lo, hi, cfg["bins"] + 1)
    f0 = _start(cfg, s)
    p0 = np.diff(f0.cdf(edges))
    p0 = np.maximum(p0, 1e-300)
    return dirichlet.BinnedData.from_sample(s, edges, p0 / p0.sum())


def _run_binned(cfg, s, x):
    data = _binned_data(cfg, s)
    inside = (x >= data.edges[0]) & (x <= data.edges[-1])
    out = np.zeros_like(x)
    if inside.any():
        out[inside] = dirichlet.binned_estimate(cfg["a"], data, x[inside])
    return out, {"a": cfg["a"], "bins": cfg["bins"], "edges": [data.edges[0], data.edges[-1]]}


def _run_gd_mode(cfg, s, x):
    data = _binned_data(cfg, s)
    spec = gendirichlet.GenDirichletSpec.from_prior(cfg["a"], data.prior_probs, cfg["delta"],
                                                    cfg["lambda"])
    res = gendirichlet.posterior_mode(spec, data.counts)
    inside = (x >= data.edges[0]) & (x <= data.edges[-1])
    out = np.zeros_like(x)
    if inside.any():
        j = data.cell_of(x[inside])
        out[inside] = res.p[j] / data.widths[j]
    return out, {"a": cfg["a"], "lambda": cfg["lambda"], "delta": spec.penalty,
                 "bins": cfg["bins"], "iterations": res.iterations, "kkt": res.kkt}


def _control(cfg):
    cuts, z = _floats(cfg["cuts"]), _floats(cfg["z"])
    if cuts.size == 0 and z.size == 0:
        return dirichlet.ControlSets.whole_line()
    return dirichlet.ControlSets(cuts, z)


def _run_pinned(cfg, s, x):
    h = _bandwidth(cfg, s)
    f0 = _start(cfg, s)
    control = _control(cfg)
    est = dirichlet.pinned_estimate(dirichlet.DirichletPrior(cfg["a"], f0), control, s,
                                    cfg["kernel"], h, x)
    return est, {"h": h, "kernel": cfg["kernel"], "a": cfg["a"], "cuts": control.cuts.tolist(),
                 "z": control.z.tolist(), "mu0": f0.mu, "sigma0": f0.sigma}


def _run_residual(cfg, s, x):
    fam = normal_family()
    control = _control(cfg)
    if control.m == 1:
        rule = cfg["rule"] or "standardized"
        post = dirichlet.semiparam_posterior(fam, s)
        est = dirichlet.residual_density(cfg["a"], fam, s, post, x, rule)
    else:
        rule = cfg["rule"] or "delta"
        post = dirichlet.pinned_posterior(cfg["a"], control, fam, s)
        est = dirichlet.pinned_residual_density(cfg["a"], control, fam, s, post, x, rule)
    mu, sigma = post.mean()
    return est, {"a": cfg["a"], "rule": rule, "cuts": control.cuts.tolist(),
                 "z": control.z.tolist(), "mu_mean": mu, "sigma_mean": sigma}


def _run_hermite(cfg, s, x):
    res = hermite.bayes_estimate(s, x, m=cfg["m"], param_draws=cfg["draws"], seed=cfg["seed"])
    raw = np.asarray(res.value, dtype=float)
    # a truncated expansion can dip below zero in the tails; output curves must not
    clipped = int(np.count_nonzero(raw < 0))
    return np.maximum(raw, 0.0), {"m": cfg["m"], "draws": cfg["draws"], "min_ess": res.min_ess,
                                  "max_mc_se": float(np.max(res.mc_se)),
                                  "clipped_points": clipped,
                                  "min_raw": float(raw.min())}


def _run_loglinear(cfg, s, x):
    support = loglinear.Support.from_data(s)
    if cfg["tau"] is None:
        fit = loglinear.mle(s, cfg["basis"], cfg["m"], support)
    else:
        prior = loglinear.CoefPriorNormal.shrinking(np.zeros(cfg["m"]), cfg["tau"])
        fit = loglinear.posterior_mode(s, cfg["basis"], prior, support)
    meta = {"basis": cfg["basis"], "m": cfg["m"], "tau": cfg["tau"],
            "support": [support.lo, support.hi], "coeffs": fit.model.coeffs.tolist()}
    return fit.model.pdf(x), meta


def _run_sic(cfg, s, x):
    support = loglinear.Support.from_data(s)
    sel = loglinear.sic_select(s, cfg["basis"], cfg["m_max"], support)
    fit = loglinear.mle(s, cfg["basis"], sel.order, support)
    meta = {"basis": cfg["basis"], "m_max": cfg["m_max"], "order": sel.order,
            "scores": {str(k): v for k, v in sel.scores.items()}, "skipped": list(sel.skipped),
            "support": [support.lo, support.hi], "coeffs": fit.model.coeffs.tolist()}
    return fit.model.pdf(x), meta


def _run_local(cfg, s, x):
    h = _bandwidth(cfg, s)
    k, c, variant = cfg["kernel"], cfg["c"], cfg["variant"]
    meta = {"h": h, "kernel": k, "c": c, "variant": variant}
    if variant == "const":
        f0 = _start(cfg, s)
        meta.update(mu0=f0.mu, sigma0=f0.sigma)
        return local.local_const_estimate(s, k, h, x, c, f0), meta
    if variant == "correction":
        f0 = _start(cfg, s)
        meta.update(mu0=f0.mu, sigma0=f0.sigma)
        return local.correction_estimate(s, k, h, x, c, f0), meta
    if variant == "predictive":
        fam, post = _background(s)
        return local.predictive_correction_estimate(s, k, h, x, fam, post, c=c), meta
    if variant == "two-stage":
        fam, post = _background(s)
        return local.local_two_stage_estimate(s, k, h, x, c, fam, post), meta
    if variant == "slope":
        if k != "gaussian":
            raise DomainError("the slope variant needs the gaussian kernel")
        return local.local_slope_estimate(s, h, x), meta
    raise DomainError(f"unknown local variant {variant!r}; choose const, correction, "
                      "predictive, two-stage or slope")


def _run_ebayes(cfg, s, x):
    h = _bandwidth(cfg, s)
    k = cfg["kernel"]
    if cfg["variant"] == "hierarchical":
        fam, post = _background(s)
        est = local.hierarchical_empirical_bayes(s, k, h, x, fam, post, draws=cfg["draws"],
                                                 seed=cfg["seed"])
        return est, {"h": h, "kernel": k, "variant": "hierarchical", "draws": cfg["draws"]}
    f0 = _start(cfg, s)
    q = local.q_statistic(s, k, h, f0)
    est = local.empirical_bayes_estimate(s, k, h, x, f0, q=q)
    return est, {"h": h, "kernel": k, "q": q, "mu0": f0.mu, "sigma0": f0.sigma}


RUNNERS = {
    "kde": _run_kde, "dp": _run_dp, "binned": _run_binned, "gendirichlet-mode": _run_gd_mode,
    "pinned": _run_pinned, "residual": _run_residual, "hermite": _run_hermite,
    "loglinear": _run_loglinear, "sic": _run_sic, "local": _run_local, "ebayes": _run_ebayes,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def curve_csv(x, y) -> str:
    return "".join(f"{fmt(a)},{fmt(b)}\n" for a, b in zip(x, y))


def read_curve(text: str):
    """Inverse of :func:`curve_csv`."""
    rows = [line.split(",") for line in text.splitlines() if line]
    arr = np.array([[float(a), float(b)] for a, b in rows])
    return arr[:, 0], arr[:, 1]


def _write(path, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def estimate_command(cfg: dict):
    """Run one estimator; returns ``(x, density, meta)`` and writes the outputs."""
    if cfg["input"] is None:
        raise DomainError("an input file is required")
    s = ingest(cfg["input"], cfg["column"])
    h = cfg["h"]
    x = _grid(cfg, s, h)
    y, params = RUNNERS[cfg["command"]](cfg, s, x)
    y = np.asarray(y, dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(y)):
        raise DomainError("estimate is not finite on the grid")
    integral = float(np.trapezoid(y, x)) if x.size > 1 else None
    meta = {"estimator": cfg["command"], "params": params, "seed": cfg["seed"], "n": s.n,
            "n_distinct": s.n_distinct, "grid": [float(x[0]), float(x[-1]), int(x.size)],
            "integral": integral}
    _write(cfg["out"], curve_csv(x, y))
    if cfg["meta"]:
        with open(cfg["meta"], "w", newline="\n") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return x, y, meta


def simulate_command(cfg: dict) -> simulation.SimReport:
    ests = tuple(e.strip() for e in str(cfg["estimators"]).split(",") if e.strip())
    grid = parse_grid(str(cfg["grid"])) if cfg["grid"] is not None else None
    params = {"a": cfg["a"], "c": cfg["c"]}
    rep = simulation.simulate(cfg["truth"], ests, cfg["n"], cfg["replications"], cfg["seed"],
                              grid=grid, h=cfg["h"], params=params, workers=cfg["workers"])
    if cfg["report"]:
        _write(cfg["report"], rep.to_csv())
    lines = ["estimator,mise,mise_se,failed\n"]
    for name, r in rep.results.items():
        lines.append(f"{name},{fmt(r.mise)},{fmt(r.mise_se)},{r.failed}\n")
    _write(cfg["out"], "".join(lines))
    return rep


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="key = value file; flags override it")
    g.add_argument("--kernel", choices=("uniform", "gaussian", "yepanechnikov"))
    g.add_argument("--h", type=float, help="bandwidth (default: normal rule of thumb)")
    g.add_argument("--a", type=float, help="Dirichlet prior strength")
    g.add_argument("--c", type=float, help="local prior strength")
    g.add_argument("--lambda", dest="lambda", type=float, help="penalty strength")
    g.add_argument("--delta", choices=gendirichlet.PENALTIES, help="penalty type")
    g.add_argument("--m", type=int, help="expansion order")
    g.add_argument("--seed", type=int)
    g.add_argument("--grid", help="MIN:MAX:COUNT or comma-separated points")
    g.add_argument("--column", help="CSV column name")
    g.add_argument("--out", help="CSV output path (default stdout)")
    g.add_argument("--meta", help="JSON metadata path")
    g.add_argument("--mu0", type=float, help="prior guess mean (default sample mean)")
    g.add_argument("--sigma0", type=float, help="prior guess sd (default sample sd)")

    g.add_argument("--bins", type=int, help="number of equal-width cells")
    g.add_argument("--cuts", help="control-set boundaries, comma separated")
    g.add_argument("--z", help="control-set masses, comma separated")
    g.add_argument("--rule", choices=dirichlet.BANDWIDTH_RULES, help="residual bandwidth rule")
    g.add_argument("--draws", type=int, help="posterior draws (hermite, hierarchical ebayes)")
    g.add_argument("--basis", choices=loglinear.BASES)
    g.add_argument("--tau", type=float, help="log-linear prior scale; omit for the MLE")
    g.add_argument("--m-max", dest="m_max", type=int, help="largest order tried by sic")
    g.add_argument("--variant", help="local: const, correction, predictive, two-stage, slope; "
                   "ebayes: plain, hierarchical")
    g.add_argument("--truth", choices=tuple(simulation.TRUTHS))
    g.add_argument("--estimators", help=f"comma list from {','.join(simulation.ESTIMATORS)}")
    g.add_argument("--n", type=int, help="simulated sample size")
    g.add_argument("--replications", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--report", help="simulate: long-format CSV report path")

    p = argparse.ArgumentParser(prog="bayesdens", description="Bayesian density estimation")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name != "simulate":
            sp.add_argument("input", nargs="?", help="data file")
    return p


def _glue_values(argv):
    """Join ``--grid -4:4:9`` into one token so a leading minus is not read as a flag."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--grid", "--cuts", "--mu0"):
            out.append(f"{tok}={next(it, '')}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_values(argv))
    try:
        cfg = resolve(args)
        if cfg["command"] == "simulate":
            simulate_command(cfg)
        else:
            estimate_command(cfg)
    except (BayesDensError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
