"""Command-line experiment driver: ``sparsegibbs <group> <command> [flags]``.

Every run is described by an ``ExperimentConfig`` (command, parameters,
seed, output path, format). Outputs embed the config and the library
version; runs are deterministic given the seed. Exit code 2 marks
validation errors and 3 numerical failures, each with an error JSON on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import bp_engine as bp
from . import coloring as col
from . import curie_weiss as cw
from . import exact_oracles as ex
from . import graph_ensembles as ge
from . import mcmc
from . import tree_cavity as tc
from . import xorsat_core as xs
from ._common import NumericalError, ValidationError

SEED_ENV = "SPARSEGIBBS_SEED"


@dataclass
class ExperimentConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None
    format: str = "json"

    _KEYS = ("command", "params", "seed", "output", "format")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "command" not in d:
            raise ValidationError("config needs a 'command'")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.format not in ("json", "csv"):
            raise ValidationError("format is 'json' or 'csv'")
        if not isinstance(self.params, dict):
            raise ValidationError("params must be an object")
        known = {p.name for p in COMMANDS[self.command][1]}
        unknown = set(self.params) - known
        if unknown:
            raise ValidationError(f"unknown parameters for {self.command}: {sorted(unknown)}")


@dataclass
class P:
    name: str
    type: type
    default: object
    help: str = ""
    choices: tuple | None = None


# ------------------------------------------------------------ builders


def _graph(spec: str, seed: int) -> ge.MultiGraph:
    """grid:RxC | path:N | cycle:N | star:N | tree:K,DEPTH | er:N,ALPHA | file:PATH."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "grid":
            r, c = map(int, arg.lower().split("x"))
            return ge.grid_graph(r, c)
        if kind == "path":
            n = int(arg)
            return ge.MultiGraph(n, [(i, i + 1) for i in range(n - 1)])
        if kind == "cycle":
            n = int(arg)
            return ge.MultiGraph(n, [(i, (i + 1) % n) for i in range(n)])
        if kind == "star":
            n = int(arg)
            return ge.MultiGraph(n + 1, [(0, i) for i in range(1, n + 1)])
        if kind == "tree":
            k, d = map(int, arg.split(","))
            return ge.regular_tree(k, d).to_multigraph()
        if kind == "er":
            n, a = arg.split(",")
            return ge.sample_erdos_renyi(float(a), int(n), "binomial", seed)
        if kind == "file":
            with open(arg, encoding="utf-8") as fh:
                return ge.MultiGraph.from_text(fh.read())
    except (ValueError, OSError) as exc:
        raise ValidationError(f"bad graph spec {spec!r}: {exc}") from exc
    raise ValidationError(f"unknown graph kind {kind!r}")


def _spec(g, p: dict, seed: int):
    model = p["model"]
    if model == "ising":
        return ex.ising_spec(g, p["beta"], p["b"])
    if model == "coloring":
        return ex.coloring_spec(g, p["q"])
    if model == "independent-set":
        return ex.independent_set_spec(g, p["lam"])
    if model == "random":
        return ex.random_permissive_spec(g, p["q"], seed)
    raise ValidationError(f"unknown model {model!r}")


def _offspring(s: str):
    kind, _, arg = s.partition(":")
    try:
        v = float(arg)
    except ValueError as exc:
        raise ValidationError(f"bad offspring spec {s!r}") from exc
    if kind == "delta":
        return ge.DegreeDistribution.delta(int(v))
    if kind == "poisson":
        return ge.DegreeDistribution.poisson(v)
    raise ValidationError("offspring is 'delta:K' or 'poisson:MEAN'")


def _color_offspring(s: str):
    kind, _, arg = s.partition(":")
    if kind == "kary":
        return ("kary", int(arg))
    if kind == "poisson":
        return ("poisson", float(arg))
    raise ValidationError("offspring is 'kary:K' or 'poisson:GAMMA'")


def _ensemble(p: dict, seed: int) -> ge.MultiGraph:
    e = p["ensemble"]
    if e == "erdos-renyi":
        return ge.sample_erdos_renyi(p["alpha"], p["n"], "fixed-m", seed)
    if e == "erdos-renyi-binomial":
        return ge.sample_erdos_renyi(p["alpha"], p["n"], "binomial", seed)
    if e == "poisson":
        return ge.sample_configuration_model(ge.DegreeDistribution.poisson(p["mean"]), p["n"], seed)
    if e == "regular":
        return ge.sample_configuration_model(ge.DegreeDistribution.delta(p["k"]), p["n"], seed)
    raise ValidationError(f"unknown ensemble {e!r}")


def _linspace(lo, hi, pts):
    if pts < 1:
        raise ValidationError("points must be >= 1")
    return np.linspace(lo, hi, pts) if pts > 1 else np.array([lo])


# ------------------------------------------------------------ handlers
# each returns (payload, rows); rows is a list of dicts for CSV or None


ENSEMBLE = [P("ensemble", str, "erdos-renyi", "graph ensemble",
              ("erdos-renyi", "erdos-renyi-binomial", "poisson", "regular")),
            P("n", int, 100, "number of vertices"), P("alpha", float, 0.5, "edges per vertex (ER)"),
            P("mean", float, 2.0, "mean degree (poisson)"), P("k", int, 3, "degree (regular)")]
GRAPH = [P("graph", str, "grid:2x3", "grid:RxC, path:N, cycle:N, star:N, tree:K,DEPTH, er:N,ALPHA, file:PATH"),
         P("model", str, "ising", "pairwise model", ("ising", "coloring", "independent-set", "random")),
         P("beta", float, 0.5, "inverse temperature"), P("b", float, 0.0, "external field"),
         P("q", int, 3, "alphabet size"), P("lam", float, 1.0, "hard-core fugacity")]


def h_graph_sample(p, seed):
    g = _ensemble(p, seed)
    deg = np.bincount(g.degrees()) if g.n else np.zeros(1, int)
    rows = [{"u": int(u), "v": int(v)} for u, v in g.edges]
    return {"n": g.n, "n_edges": g.n_edges, "degree_histogram": deg.tolist(),
            "has_defects": g.has_defects(), "edges": g.edges.tolist()}, rows


def h_graph_profile(p, seed):
    q = dict(p)
    prof = ge.empirical_local_profile(lambda n, s: _ensemble({**q, "n": n}, s), p["t"], p["n"],
                                      p["samples"], seed, p["roots"] or None)
    rows = [{"code": c, "prob": v, "count": prof["counts"][c]} for c, v in prof["pmf"].items()]
    return prof, rows


def h_exact_logz(p, seed):
    g = _graph(p["graph"], seed)
    lz = ex.exact_log_z(g, _spec(g, p, seed))
    return {"log_z": lz, "n": g.n, "n_edges": g.n_edges}, None


def h_exact_marginal(p, seed):
    g = _graph(p["graph"], seed)
    if not 0 <= p["vertex"] < g.n:
        raise ValidationError("vertex out of range")
    mu = ex.exact_marginal(g, _spec(g, p, seed), [p["vertex"]])
    return {"vertex": p["vertex"], "marginal": np.asarray(mu).ravel().tolist()}, \
        [{"state": k, "prob": float(v)} for k, v in enumerate(np.asarray(mu).ravel())]


def h_exact_recon(p, seed):
    g = _graph(p["graph"], seed)
    tv = ex.exact_reconstruction_tv(g, ex.ising_spec(g, p["beta"], p["b"]), p["root"], p["t"])
    return {"tv": tv, "root": p["root"], "t": p["t"], "tanh_beta_half": math.tanh(p["beta"]) / 2}, None


def h_exact_hyperloops(p, seed):
    fg = ge.sample_factor_ensemble(p["kind"], p["n"], p["m"], p["l"], p["k"] or None, seed)
    res = ex.hyperloop_polynomial(fg, p["beta"])
    H = xs.Gf2System.from_factor_graph(fg)
    rank = xs.gf2_rank(H)
    return {"counts": res.counts.tolist(), "lhs": res.lhs, "rhs": res.rhs,
            "has_hyperloop": res.has_hyperloop, "rank": rank, "rows": H.m_rows,
            "z_HT_gt_1": rank < H.m_rows}, \
        [{"size": k, "count": int(c)} for k, c in enumerate(res.counts)]


def _bp(p, seed):
    g = _graph(p["graph"], seed)
    spec = _spec(g, p, seed)
    nu, rep = bp.bp_fixed_point(g, spec, damping=p["damping"], tol=p["tol"], max_iter=p["max_iter"],
                                schedule=p["schedule"], seed=seed)
    return g, spec, nu, rep


def h_bp_run(p, seed):
    g, spec, nu, rep = _bp(p, seed)
    phi = bp.bethe_free_entropy(nu, g, spec)
    marg = bp.bp_marginal(nu, g, spec)
    out = {"bethe_free_entropy": phi, "report": rep.as_dict(), "marginals": np.asarray(marg).tolist()}
    if g.n * math.log2(spec.q) <= 20:
        out["exact_log_z"] = ex.exact_log_z(g, spec)
    rows = [{"vertex": i, **{f"p{k}": float(v) for k, v in enumerate(m)}} for i, m in enumerate(marg)]
    return out, rows


def h_bp_stationarity(p, seed):
    g, spec, nu, rep = _bp(p, seed)
    return {"gradient": bp.bethe_stationarity_check(nu, g, spec), "report": rep.as_dict()}, None


def h_tree_de(p, seed):
    pop = tc.density_evolution_ising(_offspring(p["offspring"]), p["beta"], p["b"], p["population"],
                                     p["iters"], seed, p["init"])
    s = pop.summary()
    return s, [{"quantile": k, "tanh_h": v} for k, v in s["tanh_quantiles"].items()]


def h_tree_free_entropy(p, seed):
    k = p["k"]
    rows = []
    for beta in _linspace(p["beta"], p["beta_max"] if p["points"] > 1 else p["beta"], p["points"]):
        h = tc.kregular_fixed_point(k, beta, p["b"])
        rows.append({"beta": float(beta), "h": h, "phi": tc.kregular_free_entropy(k, beta, h, p["b"]),
                     "canopy": tc.canopy_free_entropy(k, beta, p["b"])})
    return {"k": k, "beta_c": tc.beta_c(k), "curve": rows}, rows


def h_tree_eta(p, seed):
    d, eta = tc.coexistence_eta(p["k"], p["beta"], p["u"])
    phi = tc.kregular_free_entropy(p["k"], p["beta"], tc.kregular_fixed_point(p["k"], p["beta"], 0.0))
    return {"delta": d, "eta": eta, "phi_k": phi}, None


def h_cw_pmf(p, seed):
    m, pmf, lz = cw.magnetization_pmf(p["n"], p["beta"], p["b"])
    return {"log_z": lz, "m": m.tolist(), "pmf": pmf.tolist()}, \
        [{"m": float(a), "pmf": float(b)} for a, b in zip(m, pmf)]


def h_cw_fixed(p, seed):
    fp = cw.cw_fixed_points(p["beta"], p["b"])
    phi, argmax = cw.cw_free_entropy(p["beta"], p["b"])
    return {**fp.as_dict(), "phi_star": phi, "maximizers": argmax}, \
        [{"label": lab, "m": r} for lab, r in zip(fp.labels, fp.roots)]


def h_color_thresholds(p, seed):
    a, b = col.threshold_formulas(p["q"])
    return {"q": p["q"], "thresholds": [a, b], "alpha_core": col.alpha_core(p["q"])}, None


def h_color_core(p, seed):
    g = _ensemble(p, seed)
    core = col.q_core(g, p["q"], seed)
    return {"n": g.n, "core_size": int(len(core.vertices)), "empty": core.empty}, None


def h_color_de(p, seed):
    rows = []
    for gam in _linspace(p["gamma"], p["gamma_max"] if p["points"] > 1 else p["gamma"], p["points"]):
        off = ("kary", p["k"]) if p["kary"] else ("poisson", float(gam))
        pop, ov = col.color_reconstruction_de(p["q"], off, p["population"], p["iters"], seed)
        m, se = pop.overlap()
        rows.append({"gamma": float(gam), "overlap": m, "error": se})
    return {"q": p["q"], "curve": rows}, rows


def h_color_sigma(p, seed):
    pop, _ = col.color_reconstruction_de(p["q"], ("kary", p["k"]), p["population"], p["iters"], seed)
    out = col.complexity_sigma(p["k"], p["q"], pop, p["samples"], seed)
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in out.items()}, None


def h_color_replica(p, seed):
    g = ge.sample_erdos_renyi(p["alpha"], p["n"], "binomial", seed)
    kw = dict(sweeps=p["burn_in"] + p["pairs"] * p["stride"], burn_in=p["burn_in"], stride=p["stride"])
    a = mcmc.coloring_glauber_run(g, p["q"], seed=2 * seed + 1, **kw).samples
    b = mcmc.coloring_glauber_run(g, p["q"], seed=2 * seed + 2, **kw).samples
    out = col.two_replica_type(list(zip(a, b)), p["q"])
    out["nu"] = out["nu"].tolist()
    return out, None


def _read_system(p, seed):
    if p["file"]:
        with open(p["file"], encoding="utf-8") as fh:
            return xs.Gf2System.from_text(fh.read())
    rng = np.random.default_rng(seed)
    H = np.zeros((p["m"], p["n"]), dtype=np.uint8)
    for i in range(p["m"]):
        H[i, rng.choice(p["n"], size=min(p["l"], p["n"]), replace=False)] = 1
    return xs.Gf2System.from_dense(H, rng.integers(0, 2, size=p["m"]))


def h_xorsat_solve(p, seed):
    sys_ = _read_system(p, seed)
    return xs.gf2_solve(sys_).as_dict(), None


def h_xorsat_peel(p, seed):
    tr = xs.peel_core(xs.sample_core_graph(p["l"], p["n"], p["rho"], seed), seed)
    st = max(1, p["stride"])
    rows = [{"tau": int(t), "z1": int(a), "z2": int(b)} for t, a, b in zip(tr.tau[::st], tr.z1[::st], tr.z2[::st])]
    return {"tau_hat": tr.tau_hat, "stop_reason": tr.stop_reason, "core_vnodes": int(len(tr.core_vnodes)),
            "core_cnodes": int(len(tr.core_cnodes)), "trajectory": rows}, rows


def h_xorsat_ode(p, seed):
    f = xs.covariance_ode_solve if p["covariance"] else xs.mean_ode_solve
    tr = f(p["l"], p["rho"], p["step"])
    st = max(1, p["stride"])
    d = tr.as_dict(st)
    keys = [k for k in ("theta", "y1", "y2", "Q11", "Q12", "Q22") if k in d]
    rows = [dict(zip(keys, vals)) for vals in zip(*(d[k] for k in keys))]
    return d, rows


def h_xorsat_rho_d(p, seed):
    a = xs.rho_d(p["l"], "tangency")
    b = xs.rho_d(p["l"], "ode")
    return {"l": p["l"], "rho_d": a, "rho_d_ode": b, "method_agreement": abs(a - b),
            "theta_d": xs.theta_d(p["l"])}, None


def h_xorsat_fss(p, seed):
    c = xs.fss_constants(p["l"], p["paths"], 0.02, seed)
    rows = [{"r": float(r), "prediction": xs.fss_prediction(p["l"], p["n"], r, c)}
            for r in _linspace(p["r_min"], p["r_max"], p["points"])]
    return {"constants": c.as_dict(), "n": p["n"], "curve": rows}, rows


def h_xorsat_mc(p, seed):
    rows = []
    rd = xs.rho_d(p["l"])
    for r in _linspace(p["r_min"], p["r_max"], p["points"]):
        rho = rd + r / math.sqrt(p["n"])
        res = xs.core_probability_mc(p["l"], p["n"], rho, p["trials"], seed)
        rows.append({"r": float(r), "rho": rho, "p_hat": res["p_hat"], "error": res["se"],
                     "ci_low": res["ci_low"], "ci_high": res["ci_high"]})
    return {"l": p["l"], "n": p["n"], "rho_d": rd, "curve": rows}, rows


def h_mcmc_run(p, seed):
    # sweeps are recorded after burn-in
    model = p["model"]
    total = p["sweeps"] + p["burn_in"]
    if model == "curie-weiss":
        r = mcmc.cw_glauber_run(p["n"], p["beta"], total * p["n"], seed, p["burn_in"] * p["n"])
        M = r["M"][:: p["n"]] / p["n"]
        return {"mean_spin": M.tolist(), "autocorrelation": mcmc._autocorr(M)}, \
            [{"sweep": k, "mean_spin": float(v)} for k, v in enumerate(M)]
    g = _graph(p["graph"], seed)
    if model == "ising":
        r = mcmc.ising_heatbath_run(g, p["beta"], p["b"], 1.0, total, p["burn_in"], seed)
        return r.as_dict(), [{"sweep": k, "mean_spin": float(v)} for k, v in enumerate(r.mean_spin)]
    if model == "coloring":
        r = mcmc.coloring_glauber_run(g, p["q"], total, p["burn_in"], seed)
        return r.as_dict(), None
    raise ValidationError(f"unknown mcmc model {model!r}")


COMMANDS = {
    "graph sample": (h_graph_sample, ENSEMBLE),
    "graph profile": (h_graph_profile, ENSEMBLE + [P("t", int, 1, "ball radius"),
                                                   P("samples", int, 5, "graphs"),
                                                   P("roots", int, 0, "roots per graph (0 = all)")]),
    "exact logz": (h_exact_logz, GRAPH),
    "exact marginal": (h_exact_marginal, GRAPH + [P("vertex", int, 0, "vertex")]),
    "exact recon-tv": (h_exact_recon, GRAPH + [P("root", int, 0, "root"), P("t", int, 1, "distance")]),
    "exact hyperloops": (h_exact_hyperloops, [P("kind", str, "poisson", "factor ensemble", ("poisson", "regular")),
                                              P("n", int, 8, "v-nodes"), P("m", int, 6, "c-nodes"),
                                              P("l", int, 3, "v-node degree"), P("k", int, 0, "c-node degree"),
                                              P("beta", float, 0.5, "inverse temperature")]),
    "bp run": (h_bp_run, GRAPH + [P("damping", float, 0.0), P("tol", float, 1e-12), P("max_iter", int, 1000),
                                  P("schedule", str, "parallel", choices=("parallel", "sequential"))]),
    "bp stationarity": (h_bp_stationarity, GRAPH + [P("damping", float, 0.0), P("tol", float, 1e-12),
                                                    P("max_iter", int, 1000),
                                                    P("schedule", str, "parallel", choices=("parallel", "sequential"))]),
    "tree de": (h_tree_de, [P("offspring", str, "delta:2", "delta:K or poisson:MEAN"),
                            P("beta", float, 0.8), P("b", float, 0.0), P("population", int, 10**5),
                            P("iters", int, 100), P("init", str, "plus", choices=("free", "plus"))]),
    "tree free-entropy": (h_tree_free_entropy, [P("k", int, 3), P("beta", float, 0.5), P("b", float, 0.0),
                                                P("beta_max", float, 1.5), P("points", int, 1)]),
    "tree eta": (h_tree_eta, [P("k", int, 3), P("beta", float, 0.5), P("u", float, 0.5)]),
    "cw pmf": (h_cw_pmf, [P("n", int, 100), P("beta", float, 1.0), P("b", float, 0.0)]),
    "cw fixed-points": (h_cw_fixed, [P("beta", float, 2.0), P("b", float, 0.0)]),
    "color thresholds": (h_color_thresholds, [P("q", int, 3)]),
    "color core": (h_color_core, ENSEMBLE + [P("q", int, 3)]),
    "color de": (h_color_de, [P("q", int, 3), P("gamma", float, 2.0), P("gamma_max", float, 4.0),
                              P("points", int, 1), P("kary", bool, False, "use the k-ary tree"),
                              P("k", int, 2), P("population", int, 10**4), P("iters", int, 100)]),
    "color sigma": (h_color_sigma, [P("k", int, 2), P("q", int, 3), P("population", int, 10**4),
                                    P("iters", int, 100), P("samples", int, 10**5)]),
    "color replica": (h_color_replica, [P("n", int, 1000), P("alpha", float, 0.5), P("q", int, 3),
                                        P("burn_in", int, 30), P("pairs", int, 25), P("stride", int, 10)]),
    "xorsat solve": (h_xorsat_solve, [P("file", str, "", "system in text format"), P("m", int, 8),
                                      P("n", int, 12), P("l", int, 3)]),
    "xorsat peel": (h_xorsat_peel, [P("l", int, 3), P("n", int, 1000), P("rho", float, 1.4),
                                    P("stride", int, 1)]),
    "xorsat ode": (h_xorsat_ode, [P("l", int, 3), P("rho", float, 1.4), P("step", float, 1e-4),
                                  P("covariance", bool, False), P("stride", int, 100)]),
    "xorsat rho-d": (h_xorsat_rho_d, [P("l", int, 3)]),
    "xorsat fss": (h_xorsat_fss, [P("l", int, 3), P("n", int, 1000), P("r_min", float, -2.0),
                                  P("r_max", float, 2.0), P("points", int, 9), P("paths", int, 10**5)]),
    "xorsat mc": (h_xorsat_mc, [P("l", int, 3), P("n", int, 1000), P("r_min", float, -2.0),
                                P("r_max", float, 2.0), P("points", int, 5), P("trials", int, 200)]),
    "mcmc run": (h_mcmc_run, GRAPH[:1] + [P("model", str, "ising", choices=("curie-weiss", "ising", "coloring")),
                                          P("n", int, 100), P("beta", float, 0.5), P("b", float, 0.0),
                                          P("q", int, 3), P("sweeps", int, 100), P("burn_in", int, 10)]),
}


# ------------------------------------------------------------ running


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _render(cfg: ExperimentConfig, payload: dict, rows) -> str:
    meta = {"config": json.loads(cfg.to_json()), "version": __version__}
    if cfg.format == "json":
        return json.dumps(_jsonable({**meta, "result": payload}), indent=2, sort_keys=True) + "\n"
    if rows is None:
        rows = [{"key": k, "value": json.dumps(_jsonable(v))} for k, v in payload.items()]
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(_jsonable(r))
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig) -> tuple[int, str]:
    """Run a validated config; returns (exit code, rendered output)."""
    cfg.validate()
    handler, params = COMMANDS[cfg.command]
    full = {p.name: p.default for p in params}
    full.update(cfg.params)
    for p in params:
        if p.choices and full[p.name] not in p.choices:
            raise ValidationError(f"{p.name} must be one of {p.choices}")
    payload, rows = handler(full, int(cfg.seed))
    resolved = ExperimentConfig(cfg.command, full, int(cfg.seed), cfg.output, cfg.format)
    text = _render(resolved, payload, rows)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0, text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(2, "usage", message)


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    raise SystemExit(code)


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sparsegibbs", description="Spin models, colorings and XORSAT on sparse graphs.")
    ap.add_argument("--version", action="version", version=__version__)
    groups = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)
    subs = {}
    for name, (_, params) in COMMANDS.items():
        grp, cmd = name.split()
        if grp not in subs:
            subs[grp] = groups.add_parser(grp).add_subparsers(dest="cmd", required=True, parser_class=_Parser)
        sp = subs[grp].add_parser(cmd)
        for p in params:
            sp.add_argument("--" + p.name.replace("_", "-"), dest=p.name, default=argparse.SUPPRESS,
                            type=_bool if p.type is bool else p.type, choices=p.choices,
                            help=f"{p.help} (default {p.default})".strip())
        sp.add_argument("--seed", type=int, default=None, help=f"default from ${SEED_ENV}, else 0")
        sp.add_argument("--format", choices=("json", "csv"), default=None)
        sp.add_argument("--out", default=None, help="output file (UTF-8); stdout when absent")
        sp.add_argument("--config", default=None, help="JSON ExperimentConfig; flags may not contradict it")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    return ap


def _config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    command = f"{ns.group} {ns.cmd}"
    flags = {p.name: getattr(ns, p.name) for p in COMMANDS[command][1] if hasattr(ns, p.name)}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = ExperimentConfig.from_json(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        if cfg.command != command:
            raise ValidationError(f"config is for {cfg.command!r}, not {command!r}")
        for k, v in flags.items():
            if k in cfg.params and cfg.params[k] != v:
                raise ValidationError(f"flag --{k} contradicts the config file")
        cfg.params.update(flags)
        for k, v in (("seed", ns.seed), ("format", ns.format), ("output", ns.out)):
            if v is not None and getattr(cfg, k) not in (None, v):
                raise ValidationError(f"--{k} contradicts the config file")
            if v is not None:
                setattr(cfg, k, v)
        return cfg
    seed = ns.seed
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise ValidationError(f"${SEED_ENV} must be an integer") from exc
    return ExperimentConfig(command, flags, seed, ns.out, ns.format or "json")


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(ns)
        code, text = run_experiment(cfg)
    except ValidationError as exc:
        _fail(2, "validation", str(exc))
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        _fail(3, "numerical", str(exc))
    if not cfg.output:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
