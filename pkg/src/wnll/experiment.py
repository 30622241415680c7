"""Experiment configuration, end-to-end runs and log-log fits."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import copy
import math
import os
import time

import numpy as np

from .discrepancy import (bound_shape, calibrate_constant, center_grid, empirical_discrepancy,
                          integral_consistency, theoretical_bound)
from .geometry import (GeometryError, LabeledSet, ManifoldSpec, OracleError, RegionSpec, label_function,
                       reference_harmonic_solution, sample_labeled, sample_manifold)
from .geometry.sampling import SAMPLING_MODES
from .graph import BACKENDS, assemble_affinity, check_s_connected
from .kernels import ProfileError, get_profile
from .solver import (MU_RULES, assemble_graph_laplacian, assemble_wnll, check_mu_condition, jump_metric,
                     select_mu, solve)

MODES = ("convergence", "mu_study", "label_rate", "discrepancy", "consistency")
DELTA_RULES = ("fixed_list", "power_of_n")
REFERENCE_POLICIES = ("required", "auto", "off")

ROW_COLUMNS = {
    "convergence": ["seed", "n", "m", "delta", "mu", "connected", "unreachable", "mu_margin", "mu_pass",
                    "err_max", "err_l2", "J_wnll", "J_gl", "err_max_gl", "iterations", "residual", "converged"],
    "discrepancy": ["seed", "n", "delta", "sup_gap", "bound", "ratio"],
    "consistency": ["n", "delta", "max_residual", "const_residual"],
}
ROW_COLUMNS["mu_study"] = ROW_COLUMNS["convergence"]
ROW_COLUMNS["label_rate"] = ["label_rate"] + ROW_COLUMNS["convergence"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    manifold: dict
    region: dict
    label_fn: dict | str = "constant"
    sampling: str = "uniform_random"
    n_ladder: list = field(default_factory=list)
    m: int | None = None
    label_rates: list | None = None
    delta_rule: dict = field(default_factory=lambda: {"rule": "fixed_list", "values": [0.2]})
    mu_rule: dict = field(default_factory=lambda: {"rule": "default_ratio"})
    profile: str | dict = "wendland_c2_default"
    seeds: list = field(default_factory=lambda: [0])
    solver: dict = field(default_factory=lambda: {"method": "cg", "tol": 1e-10, "max_iter": None})
    baseline: bool | None = None
    reference: str | None = None
    c_margin: float = 1.0
    backend: str = "auto"
    centers_per_dim: int = 512
    queries: int = 5
    output: str | None = None

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for key in ("mode", "manifold", "region"):
            if key not in d:
                raise ConfigError(f"config needs {key!r}")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived objects --------------------------------------------------------

    @property
    def manifold_spec(self) -> ManifoldSpec:
        return ManifoldSpec.from_dict(self.manifold)

    @property
    def region_spec(self) -> RegionSpec:
        r = dict(self.region)
        if "radius" in r and "geodesic_radius" not in r:
            r["geodesic_radius"] = r.pop("radius")
        return RegionSpec.from_dict(r, self.manifold_spec)

    @property
    def use_baseline(self) -> bool:
        return self.mode in ("label_rate", "mu_study") if self.baseline is None else bool(self.baseline)

    @property
    def reference_policy(self) -> str:
        if self.reference is not None:
            return self.reference
        return "required" if self.mode == "convergence" else "auto"

    def deltas_for(self, n: int) -> list[float]:
        rule = self.delta_rule.get("rule")
        if rule == "fixed_list":
            return [float(v) for v in self.delta_rule["values"]]
        return [power_of_n_delta(n, self.manifold_spec.intrinsic_dim, self.delta_rule)]

    def mus_for(self, cloud, labeled) -> list[float]:
        rule = self.mu_rule.get("rule", "default_ratio")
        if rule == "fixed":
            vals = self.mu_rule.get("values", [self.mu_rule.get("value")])
            return [float(v) for v in vals]
        return [select_mu(rule, cloud, labeled)]

    # -- validation --------------------------------------------------------------

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        try:
            spec = self.manifold_spec
            self.region_spec
            label_function(self.label_fn)
            get_profile(self.profile, 0.1, spec.intrinsic_dim)
        except (GeometryError, ProfileError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}")
        ladder = list(self.n_ladder)
        if not ladder or any(int(n) != n or n < 1 for n in ladder):
            raise ConfigError("n_ladder must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("n_ladder must be strictly increasing")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        rule = self.delta_rule.get("rule")
        if rule not in DELTA_RULES:
            raise ConfigError(f"delta_rule.rule must be one of {DELTA_RULES}")
        if rule == "fixed_list":
            vals = self.delta_rule.get("values") or []
            if not vals or any(not 0 < float(v) < spec.scale for v in vals):
                raise ConfigError("delta values must lie in (0, scale)")
        else:
            for n in ladder:
                d = power_of_n_delta(n, spec.intrinsic_dim, self.delta_rule)
                if not 0 < d < spec.scale:
                    raise ConfigError(f"power_of_n gives delta={d} outside (0, scale) at n={n}")
        mrule = self.mu_rule.get("rule", "default_ratio")
        if mrule not in MU_RULES:
            raise ConfigError(f"mu_rule.rule must be one of {MU_RULES}")
        if mrule == "fixed":
            vals = self.mu_rule.get("values", [self.mu_rule.get("value")])
            if not vals or any(v is None or float(v) < 0 for v in vals):
                raise ConfigError("fixed mu values must be >= 0")
        if self.mode in ("convergence", "mu_study"):
            if self.m is None or int(self.m) < 1:
                raise ConfigError("m (labeled count) must be >= 1")
        if self.mode == "label_rate":
            rates = self.label_rates or []
            if not rates or any(not 0 < float(r) <= 1 for r in rates):
                raise ConfigError("label_rates must be fractions in (0, 1]")
        if self.reference_policy not in REFERENCE_POLICIES:
            raise ConfigError(f"reference must be one of {REFERENCE_POLICIES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.solver.get("method", "cg") not in ("cg", "dense"):
            raise ConfigError("solver.method must be cg or dense")
        if self.mode == "consistency" and spec.kind == "sphere":
            raise ConfigError("consistency mode needs a circle or torus (first-angle label functions)")


def coupling_exponent(k: int) -> float:
    """Slowest power-law decay of delta in n that keeps the discrepancy bound below delta^3."""
    return 1.0 / (2 * k + 6)


def power_of_n_delta(n: int, k: int, rule: dict) -> float:
    a = float(rule.get("a", 1.0))
    enforce = bool(rule.get("enforce_coupling", True))
    e = rule.get("exponent")
    e_min = coupling_exponent(k)
    if e is None:
        e = e_min
    e = float(e)
    if enforce and e > e_min:
        raise ConfigError(f"exponent {e} decays faster than the coupling allows ({e_min:.6g})")
    return a * n ** (-e)


def coupling_ratio(n: int, delta: float, k: int) -> float:
    """``delta^-k n^-1/2 (ln n - 2 ln delta + 1)^1/2 / delta^3``.

    At the critical exponent the power of n cancels and only the log factor grows."""
    return bound_shape(n, delta, k) / delta ** 3 if n >= 2 and 0 < delta < 1 else math.nan


# -- fitting ----------------------------------------------------------------------

def fit_loglog(x, y) -> dict:
    """Least-squares line through (log x, log y) with the slope's standard error."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    npts = x.size
    if npts < 2:
        raise ValueError("need at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    if npts > 2:
        resid = y - (intercept + slope * x)
        stderr = math.sqrt(float(np.sum(resid ** 2)) / (npts - 2) / sxx)
    else:
        stderr = 0.0
    return {"slope": slope, "intercept": intercept, "stderr": stderr, "points": npts}


def _fits_for(rows, xkey, ykey, group_keys):
    groups = {}
    for r in rows:
        if r.get(ykey) is None or not r[ykey] > 0:
            continue
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for key, rs in groups.items():
        xs = sorted({r[xkey] for r in rs})
        if len(xs) < 2:
            continue
        fit = fit_loglog([r[xkey] for r in rs], [r[ykey] for r in rs])
        out.append({"x": xkey, "y": ykey, "group": dict(zip(group_keys, key)), **fit})
    return out


def compute_fits(mode: str, rows: list[dict]) -> dict:
    """Slopes recomputed from emitted rows only (so a reloaded report re-fits identically)."""
    fits = {}
    if mode in ("convergence", "mu_study", "label_rate"):
        keys_d = ["seed", "n"] + (["mu"] if mode == "mu_study" else []) + (["label_rate"] if mode == "label_rate" else [])
        keys_n = ["seed", "delta"] + (["mu"] if mode == "mu_study" else []) + (["label_rate"] if mode == "label_rate" else [])
        fits["err_max_vs_delta"] = _fits_for(rows, "delta", "err_max", keys_d)
        fits["err_max_vs_n"] = _fits_for(rows, "n", "err_max", keys_n)
    elif mode == "discrepancy":
        med = _median_rows(rows, "sup_gap", ["n", "delta"])
        fits["sup_gap_vs_n"] = _fits_for(med, "n", "sup_gap", ["delta"])
        fits["sup_gap_vs_n_per_seed"] = _fits_for(rows, "n", "sup_gap", ["seed", "delta"])
    elif mode == "consistency":
        fits["residual_vs_delta"] = _fits_for(rows, "delta", "max_residual", ["n"])
    for name, lst in list(fits.items()):
        slopes = [f["slope"] for f in lst]
        fits[name] = {"fits": lst, "median_slope": float(np.median(slopes)) if slopes else None}
    return fits


def _median_rows(rows, key, group_keys):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r[key])
    return [{**dict(zip(group_keys, k)), key: float(np.median(v))} for k, v in groups.items()]


# -- runs -----------------------------------------------------------------------------

@dataclass
class Report:
    config: dict
    rows: list
    fits: dict
    summary: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def columns(self) -> list[str]:
        return ROW_COLUMNS[self.config["mode"]]

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "fits": self.fits, "summary": self.summary}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WNLL_THREADS", "1")))
    except ValueError:
        return 1


def _nullable(x):
    return None if x is None else float(x)


def _solve_instance(cfg: ExperimentConfig, cloud, labeled: LabeledSet, delta: float, mus, extra=None):
    """Assemble once, then one row per mu value."""
    spec = cfg.manifold_spec
    region = cfg.region_spec
    profile = get_profile(cfg.profile, delta, spec.intrinsic_dim)
    base = {"seed": cloud.seed, "n": cloud.n, "m": labeled.m, "delta": delta, **(extra or {})}
    graph = assemble_affinity(cloud, labeled, profile, backend=cfg.backend)
    conn = check_s_connected(graph)
    policy = cfg.reference_policy
    ref = None
    if policy != "off":
        try:
            ref = reference_harmonic_solution(region, labeled.label_fn, cloud.points)
        except OracleError:
            if policy == "required":
                raise
    solver = {"method": "cg", "tol": 1e-10, "max_iter": None, **cfg.solver}
    gl_cache = {}
    rows = []
    for mu in mus:
        row = {**base, "mu": float(mu), "connected": conn.s_connected, "unreachable": int(conn.unreachable.size)}
        cond = check_mu_condition(graph, region, delta, mu, cfg.c_margin)
        row["mu_margin"] = cond.min_ratio
        row["mu_pass"] = cond.passed
        null = dict(err_max=None, err_l2=None, J_wnll=None, J_gl=None, err_max_gl=None,
                    iterations=None, residual=None, converged=None)
        if not conn.s_connected or mu <= 0:
            rows.append({**row, **null})
            continue
        sol, stats = solve(assemble_wnll(graph, labeled, mu), solver["method"], solver["tol"], solver["max_iter"])
        row.update(iterations=stats.iterations, residual=stats.final_residual, converged=stats.converged,
                   J_wnll=jump_metric(graph, sol.u, labeled).J)
        if ref is not None:
            err = np.abs(sol.u - ref)
            row.update(err_max=float(err.max()), err_l2=float(np.sqrt(np.mean(err ** 2))))
        else:
            row.update(err_max=None, err_l2=None)
        if cfg.use_baseline:
            if "gl" not in gl_cache:
                gl, _ = solve(assemble_graph_laplacian(graph, labeled), solver["method"], solver["tol"],
                              solver["max_iter"])
                gl_cache["gl"] = gl
            gl = gl_cache["gl"]
            row["J_gl"] = jump_metric(graph, gl.u, labeled).J
            row["err_max_gl"] = float(np.abs(gl.u - ref).max()) if ref is not None else None
        else:
            row.update(J_gl=None, err_max_gl=None)
        rows.append(row)
    return rows


def _all_labeled_row(cfg, seed, N, delta, rate):
    # every point labeled: nothing to solve, u = b on the whole set
    return {"label_rate": rate, "seed": seed, "n": 0, "m": N, "delta": delta, "mu": None, "connected": True,
            "unreachable": 0, "mu_margin": None, "mu_pass": True, "err_max": 0.0, "err_l2": 0.0,
            "J_wnll": 0.0, "J_gl": 0.0, "err_max_gl": 0.0, "iterations": 0, "residual": 0.0, "converged": True}


def _tasks(cfg: ExperimentConfig):
    spec = cfg.manifold_spec
    region = cfg.region_spec
    fn = label_function(cfg.label_fn)
    if cfg.mode in ("convergence", "mu_study"):
        for seed in cfg.seeds:
            for n in cfg.n_ladder:
                for delta in cfg.deltas_for(n):
                    def task(seed=seed, n=n, delta=delta):
                        cloud = sample_manifold(spec, n, seed, cfg.sampling)
                        labeled = sample_labeled(region, int(cfg.m), seed, fn)
                        return _solve_instance(cfg, cloud, labeled, delta, cfg.mus_for(cloud, labeled))
                    yield task
    elif cfg.mode == "label_rate":
        for seed in cfg.seeds:
            for N in cfg.n_ladder:
                for delta in cfg.deltas_for(N):
                    for rate in cfg.label_rates:
                        def task(seed=seed, N=N, delta=delta, rate=float(rate)):
                            m = max(1, int(round(rate * N)))
                            if m >= N:
                                return [_all_labeled_row(cfg, seed, N, delta, rate)]
                            cloud = sample_manifold(spec, N - m, seed, cfg.sampling)
                            labeled = sample_labeled(region, m, seed, fn)
                            return _solve_instance(cfg, cloud, labeled, delta, cfg.mus_for(cloud, labeled),
                                                   {"label_rate": rate})
                        yield task
    elif cfg.mode == "discrepancy":
        centers = center_grid(spec, cfg.centers_per_dim)
        for seed in cfg.seeds:
            for n in cfg.n_ladder:
                for delta in cfg.deltas_for(n):
                    def task(seed=seed, n=n, delta=delta):
                        cloud = sample_manifold(spec, n, seed, cfg.sampling)
                        prof = get_profile(cfg.profile, delta, spec.intrinsic_dim)
                        res = empirical_discrepancy(spec, cloud, prof, centers)
                        return [{"seed": seed, "n": n, "delta": delta, "sup_gap": res.sup_gap}]
                    yield task
    else:
        for n in cfg.n_ladder:
            for delta in cfg.deltas_for(n):
                def task(n=n, delta=delta):
                    cloud = sample_manifold(spec, n, cfg.seeds[0], cfg.sampling)
                    q = consistency_queries(cloud, region, 2 * max(cfg.deltas_for(n)), cfg.queries)
                    prof = get_profile(cfg.profile, delta, spec.intrinsic_dim)
                    r = integral_consistency(spec, cloud, prof, fn, q, region)
                    rc = integral_consistency(spec, cloud, prof, {"name": "constant", "c": 1.0}, q, region)
                    return [{"n": n, "delta": delta, "max_residual": r.max_residual,
                             "const_residual": rc.max_residual}]
                yield task


def consistency_queries(cloud, region: RegionSpec, margin: float, count: int) -> np.ndarray:
    """Cloud points farther than ``margin`` from D, evenly spread in index order."""
    far = np.flatnonzero(region.distance(cloud.points) > margin)
    if far.size == 0:
        raise ConfigError("no cloud points lie outside the 2 delta neighborhood of D")
    pick = far[np.linspace(0, far.size - 1, min(count, far.size)).round().astype(int)]
    return cloud.points[np.unique(pick)]


def _discrepancy_summary(rows, k):
    """c* per delta: the smallest constant covering every seed at the smallest n."""
    n0 = min(r["n"] for r in rows)
    summary = {"calibration_n": n0, "intrinsic_dim": k, "c_star": {}}
    for delta in sorted({r["delta"] for r in rows}):
        base = [r["sup_gap"] for r in rows if r["n"] == n0 and r["delta"] == delta]
        summary["c_star"][repr(delta)] = calibrate_constant(base, n0, delta, k)
    return summary


def run_experiment(config: ExperimentConfig | dict) -> Report:
    """Run every configured (seed, n, delta, ...) instance; rows keep config order."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    t0 = time.perf_counter()
    tasks = list(_tasks(cfg))
    workers = min(_threads(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda t: t(), tasks))
    else:
        results = [t() for t in tasks]
    rows = [r for rs in results for r in rs]
    summary = {}
    if cfg.mode == "discrepancy":
        k = cfg.manifold_spec.intrinsic_dim
        summary = _discrepancy_summary(rows, k)
        for r in rows:
            r["bound"] = theoretical_bound(r["n"], r["delta"], k, summary["c_star"][repr(r["delta"])])
            r["ratio"] = r["sup_gap"] / r["bound"] if r["bound"] > 0 else None
    if cfg.delta_rule.get("rule") == "power_of_n":
        k = cfg.manifold_spec.intrinsic_dim
        summary["coupling_ratio"] = {str(n): coupling_ratio(n, cfg.deltas_for(n)[0], k) for n in cfg.n_ladder}
    for r in rows:
        for key, v in r.items():
            if isinstance(v, np.floating):
                r[key] = float(v)
            elif isinstance(v, np.bool_):
                r[key] = bool(v)
    report = Report(cfg.to_dict(), rows, compute_fits(cfg.mode, rows), summary, time.perf_counter() - t0)
    return report
