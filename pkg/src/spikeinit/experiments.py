"""Experiments: default configurations and runners.

Each experiment takes a fully resolved config dict (defaults merged with
user overrides), writes ``results.csv``, ``manifest.json`` and a plot into
``out`` and returns the result rows.
"""
from __future__ import annotations

import copy
import logging
import math
import os
import warnings

import numpy as np

from .errors import ConfigError
from .io import environment_info, write_csv, write_json
from .params import LayerTopology, LifParams, WeightSpec
from .rates import (ShotNoiseSpec, moments_from_spec, shot_noise_rate, siegert_rate,
                    threshold_integration_lif)
from .sim import PoissonInput, SaturatedInputWarning, map_repeats, repeat_seeds, run_network

log = logging.getLogger(__name__)

_NEURON = {"tau": 0.01, "v_th": 1.0, "v_r": 0.0, "i_ext": 0.8, "dt": 1e-3}
_SWEEP = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0]

DEFAULTS = {
    # rate collapse of the uncorrected simulator
    "collapse-sweep": {
        "neuron": dict(_NEURON),
        "input": {"rate": 50.0, "n_sources": 1000},
        "weights": {"kind": "two_point", "w": 0.01, "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 1000},
        "run": {"dts_ms": list(_SWEEP), "duration": 2.0, "warmup": 0.1, "correction": "none"},
        "seed": 0, "repeats": 10,
    },
    "rw-correct": {
        "neuron": dict(_NEURON),
        "input": {"rate": 50.0, "n_sources": 1000},
        "weights": {"kind": "two_point", "w": 0.01, "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 1000},
        "run": {"dts_ms": [1.0, 2.0, 5.0, 10.0, 20.0], "duration": 2.0, "warmup": 0.1,
                "correction": "random-walk"},
        "seed": 0, "repeats": 5,
    },
    "wiener-correct": {
        "neuron": dict(_NEURON),
        "input": {"rate": 50.0, "n_sources": 2000},
        "weights": {"kind": "gaussian", "sigma_w": 0.01, "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 1000},
        "run": {"dts_ms": list(_SWEEP), "duration": 1.0, "warmup": 0.1, "correction": "wiener"},
        "seed": 0, "repeats": 3,
    },
    "permutation-correct": {
        "neuron": dict(_NEURON),
        "input": {"rate": 50.0, "n_sources": 2000},
        "weights": {"kind": "gaussian", "sigma_w": 0.01, "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 1000},
        "run": {"dts_ms": [0.5, 1.0, 2.0, 5.0, 10.0, 20.0], "duration": 1.0, "warmup": 0.1,
                "correction": "permutation"},
        "seed": 0, "repeats": 2,
    },
    # stationary and before-reset densities against the simulator
    "distributions": {
        "neuron": dict(_NEURON, i_ext=0.9),
        "input": {"rate": 30.0, "n_sources": 2000},
        "weights": {"kind": "gaussian", "sigma_w": 0.0096, "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 2000},
        "run": {"duration": 2.0, "warmup": 0.2, "correction": "wiener", "bins": 128},
        "surrogate": {"b_th": 0.01},
        "fp": {"n_points": 2048},
        "seed": 0, "repeats": 1,
    },
    "multilayer-rates": {
        "neuron": dict(_NEURON, i_ext=0.6),
        "input": {"rate": 50.0, "n_sources": 2000},
        "weights": {"kind": "two_point", "connection_prob": 0.5, "balanced": False},
        "network": {"n_neurons": 2000, "n_layers": 20},
        "pipeline": {"target": 50.0, "method": "siegert"},
        "run": {"duration": 1.0, "warmup": 0.0, "correction": "random-walk"},
        "seed": 0, "repeats": 5,
    },
    "gradient-variance": {
        "neuron": dict(_NEURON, i_ext=0.9),
        "input": {"rate": 30.0, "n_sources": 2000},
        "weights": {"kind": "gaussian", "connection_prob": 1.0, "balanced": True},
        "network": {"n_neurons": 2000, "n_layers": 20},
        "pipeline": {"target": 30.0, "method": "siegert"},
        "surrogate": {"b_th": 0.01},
        "run": {"duration": 1.0, "warmup": 0.2, "correction": "wiener"},
        "seed": 0, "repeats": 1,
    },
    "rate-solver": {
        "neuron": dict(_NEURON),
        "input": {"rate": 50.0, "n_sources": 1000},
        "weights": {"kind": "two_point", "w": 0.01, "connection_prob": 1.0, "balanced": True},
        "solver": {"methods": ["siegert", "threshold-integration"]},
        "seed": 0, "repeats": 1,
    },
}

EXPERIMENTS = tuple(DEFAULTS)

# fields a section may gain even though its defaults omit them
_OPTIONAL = {"weights": ("kind", "w", "sigma_w", "mu_w", "w_e", "w_i", "connection_prob", "balanced")}


# --------------------------------------------------------------------------- config handling
def merge(base, override, path=""):
    """Recursive merge that rejects keys the defaults do not know."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            if k in _OPTIONAL.get(path, ()):
                out[k] = v
                continue
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{where}' must be a mapping")
            out[k] = merge(base[k], v, where)
        else:
            out[k] = v
    return out


def resolve(experiment, overrides=None):
    """Defaults for ``experiment`` with ``overrides`` applied and validated."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment '{experiment}'; choose from {', '.join(EXPERIMENTS)}")
    cfg = merge(DEFAULTS[experiment], overrides or {})
    cfg["experiment"] = experiment
    if not isinstance(cfg["repeats"], int) or cfg["repeats"] < 1:
        raise ConfigError(f"field 'repeats' must be an integer >= 1, got {cfg['repeats']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"field 'seed' must be a non-negative integer, got {cfg['seed']!r}")
    neuron_params(cfg)
    if "w" in cfg["weights"] or "sigma_w" in cfg["weights"] or "w_e" in cfg["weights"]:
        weight_spec(cfg)
    return cfg


def neuron_params(cfg, dt=None) -> LifParams:
    try:
        p = LifParams(**cfg["neuron"])
    except TypeError as exc:
        raise ConfigError(f"neuron: {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"neuron: {exc}") from None
    return p if dt is None else p.with_dt(dt)


def weight_spec(cfg, scale=None) -> WeightSpec:
    w = dict(cfg["weights"])
    kind = w.pop("kind")
    p = w.pop("connection_prob", 1.0)
    bal = w.pop("balanced", False)
    try:
        if kind == "two_point":
            return WeightSpec.two_point(scale if scale is not None else w["w"], p, bal)
        if kind == "gaussian":
            return WeightSpec.gaussian(scale if scale is not None else w["sigma_w"], w.get("mu_w", 0.0), p, bal)
        if kind == "exponential_pair":
            w_e = scale if scale is not None else w["w_e"]
            return WeightSpec.exponential_pair(w_e, w.get("w_i", -w_e), p, bal)
    except KeyError as exc:
        raise ConfigError(f"weights: missing field {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"weights: {exc}") from None
    raise ConfigError(f"weights.kind: unsupported kind {kind!r}")


def _correction(name):
    return None if name in (None, "none") else name


# --------------------------------------------------------------------------- plotting
def _plot(path, x, series, xlabel, ylabel, logx=False, logy=False, hline=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y, err in series:
        ax.errorbar(x, y, yerr=err, marker="o", ms=3, capsize=2, label=label)
    if hline is not None:
        ax.axhline(hline, color="k", ls="--", lw=1, label="theory")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --------------------------------------------------------------------------- runners
def _single_layer_rates(cfg, dt, seeds):
    p = neuron_params(cfg, dt)
    spec = weight_spec(cfg)
    n_src = cfg["input"]["n_sources"]
    n_post = cfg["network"]["n_neurons"]
    run = cfg["run"]

    def one(s):
        layers = [LayerTopology(n_src, n_post, spec, seed=s)]
        src = PoissonInput(cfg["input"]["rate"], n_src, dt, seed=s + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaturatedInputWarning)
            res = run_network(layers, p, src, run["duration"], correction=_correction(run["correction"]),
                              seed=s + 2, warmup=run["warmup"])
        return res.rates[0]

    return np.array(map_repeats(one, seeds))


def theory_rate(cfg) -> float:
    p = neuron_params(cfg)
    mom = moments_from_spec(p, weight_spec(cfg), cfg["input"]["rate"], cfg["input"]["n_sources"])
    return siegert_rate(p, mom)


def run_sweep(cfg):
    """Rate against timestep for one correction (collapse and correction sweeps)."""
    seeds = repeat_seeds(cfg["seed"], cfg["repeats"])
    theory = theory_rate(cfg)
    rows = []
    for dt_ms in cfg["run"]["dts_ms"]:
        rates = _single_layer_rates(cfg, dt_ms * 1e-3, seeds)
        se = rates.std(ddof=1) / math.sqrt(rates.size) if rates.size > 1 else 0.0
        rows.append({"dt_ms": float(dt_ms), "rate_hz": float(rates.mean()), "rate_se": float(se),
                     "theory_hz": theory})
        log.info("dt=%g ms: %.3f Hz", dt_ms, rates.mean())
    return ["dt_ms", "rate_hz", "rate_se", "theory_hz"], rows


def run_rate_solver(cfg):
    p = neuron_params(cfg)
    spec = weight_spec(cfg)
    rate_in, n = cfg["input"]["rate"], cfg["input"]["n_sources"]
    mom = moments_from_spec(p, spec, rate_in, n)
    rows = []
    for m in cfg["solver"]["methods"]:
        if m == "siegert":
            r = siegert_rate(p, mom)
        elif m == "threshold-integration":
            r = threshold_integration_lif(p, mom)[1]
        elif m == "shot-noise":
            if spec.kind != "exponential_pair":
                raise ConfigError("solver.methods: shot-noise needs weights.kind = 'exponential_pair'")
            agg = n * spec.connection_prob * rate_in * 0.5
            r = shot_noise_rate(p, ShotNoiseSpec(agg, agg, spec.w_e, spec.w_i))
        else:
            raise ConfigError(f"solver.methods: unknown method {m!r}")
        rows.append({"method": m, "mu": mom.mu, "sigma2": mom.sigma2, "rate_hz": r})
    return ["method", "mu", "sigma2", "rate_hz"], rows


def run_distributions(cfg, out):
    from .fokker_planck import FpGrid, SurrogateSpec, fp_before_reset, surrogate_mass

    p = neuron_params(cfg)
    spec = weight_spec(cfg)
    n_src = cfg["input"]["n_sources"]
    mom = moments_from_spec(p, spec, cfg["input"]["rate"], n_src)
    stat, rate = threshold_integration_lif(p, mom)
    b = cfg["surrogate"]["b_th"]
    grid = FpGrid.around(p, mom, b, cfg["fp"]["n_points"])
    before = fp_before_reset(stat, mom, p, grid)
    run = cfg["run"]
    layers = [LayerTopology(n_src, cfg["network"]["n_neurons"], spec, seed=cfg["seed"])]
    res = run_network(layers, p, PoissonInput(cfg["input"]["rate"], n_src, p.dt, seed=cfg["seed"] + 1),
                      run["duration"], correction=_correction(run["correction"]), seed=cfg["seed"] + 2,
                      warmup=run["warmup"], record_vpre=[0])
    edges, sim_mass, fp_mass = histogram_comparison(res.v_pre[0], before, run["bins"])
    centres = 0.5 * (edges[1:] + edges[:-1])
    width = np.diff(edges)
    rows = [{"v": c, "stationary": float(stat.interp(np.array([c]))[0]), "before_reset": fp / w,
             "simulated": s / w} for c, s, fp, w in zip(centres, sim_mass, fp_mass, width)]
    stat.to_csv(os.path.join(out, "stationary_density.csv"))
    before.to_csv(os.path.join(out, "before_reset_density.csv"))
    summary = {"l1": float(np.abs(sim_mass - fp_mass).sum()), "theory_rate": rate,
               "sim_rate": float(res.rates[0]), "mass": before.mass(),
               "I_integral": surrogate_mass(before, SurrogateSpec.boxcar(b, v_th=p.v_th))}
    _plot(os.path.join(out, "plot.png"), centres,
          [("before reset (FP)", [r["before_reset"] for r in rows], None),
           ("simulated", [r["simulated"] for r in rows], None),
           ("stationary", [r["stationary"] for r in rows], None)], "v", "density")
    return ["v", "stationary", "before_reset", "simulated"], rows, summary


def histogram_comparison(samples, density, bins):
    """Bin masses of ``samples`` and of ``density`` on ``bins`` equal bins over its grid.

    Returns ``(edges, sample_mass, density_mass)``; their L1 distance is
    ``abs(sample_mass - density_mass).sum()``.
    """
    from .fokker_planck import _cumulative
    from .rates import MembraneDensity

    g = density.grid
    lo, hi = float(g[0]), float(g[-1])
    edges = np.linspace(lo, hi, bins + 1)
    x = np.asarray(samples, dtype=float).ravel()
    counts, _ = np.histogram(np.clip(x, lo, hi), bins=edges)
    sim = counts / x.size
    # extend the density by zero so the first/last half cells are covered
    ext = MembraneDensity(np.r_[lo - 1e-12, g, hi + 1e-12], np.r_[0.0, density.density, 0.0], lo)
    cum = _cumulative(ext, edges)
    return edges, sim, np.diff(cum)


def multilayer_plan(cfg):
    from .pipeline import RateTheta, plan_network_init

    p = neuron_params(cfg)
    w = cfg["weights"]
    theta = RateTheta(p, cfg["input"]["rate"], cfg["network"]["n_neurons"], w["kind"], w["connection_prob"],
                      w.get("balanced", False), cfg["pipeline"]["method"])
    from .fokker_planck import SurrogateSpec

    b = cfg.get("surrogate", {}).get("b_th", 0.01)
    return plan_network_init(cfg["network"]["n_layers"], cfg["pipeline"]["target"], theta,
                             SurrogateSpec.boxcar(b, v_th=p.v_th))


def run_multilayer(cfg, out):
    plan = multilayer_plan(cfg)
    p = neuron_params(cfg)
    n = cfg["network"]["n_neurons"]
    n_src = cfg["input"]["n_sources"]
    if n_src != n:
        raise ConfigError("input.n_sources must equal network.n_neurons for the chained plan")
    run = cfg["run"]

    def one(s):
        layers = plan.build_chain(seed=s)
        src = PoissonInput(cfg["input"]["rate"], n_src, p.dt, seed=s + 1)
        return run_network(layers, p, src, run["duration"], correction=_correction(run["correction"]),
                           seed=s + 2, warmup=run["warmup"]).rates

    rates = np.array(map_repeats(one, repeat_seeds(cfg["seed"], cfg["repeats"])))
    mean = rates.mean(axis=0)
    se = rates.std(axis=0, ddof=1) / math.sqrt(rates.shape[0]) if rates.shape[0] > 1 else np.zeros_like(mean)
    rows = [{"layer": l, "rate_hz": float(mean[l]), "rate_se": float(se[l]),
             "target_hz": plan.layers[l].target_rate, "sigma_w": plan.layers[l].sigma_w}
            for l in range(mean.size)]
    plan.to_json(os.path.join(out, "plan.json"))
    plan.to_csv(os.path.join(out, "plan.csv"))
    _plot(os.path.join(out, "plot.png"), np.arange(mean.size), [("simulated", mean, se)], "layer", "rate (Hz)",
          hline=cfg["pipeline"]["target"])
    return ["layer", "rate_hz", "rate_se", "target_hz", "sigma_w"], rows, {"rates": rates}


def gradient_flow(cfg, seed=None):
    """Forward a planned chain once and backpropagate with and without kappa."""
    from .backprop import backward_unrolled, forward_unrolled
    from .fokker_planck import SurrogateSpec

    plan = multilayer_plan(cfg)
    p = neuron_params(cfg)
    s = cfg["seed"] if seed is None else seed
    layers = plan.build_chain(seed=s)
    src = PoissonInput(cfg["input"]["rate"], cfg["input"]["n_sources"], p.dt, seed=s + 1)
    run = cfg["run"]
    trace = forward_unrolled(layers, p, src, run["duration"], correction=_correction(run["correction"]),
                             seed=s + 2, warmup=run["warmup"])
    b = cfg["surrogate"]["b_th"]
    base = backward_unrolled(trace, layers, SurrogateSpec.boxcar(b, 1.0, p.v_th), seed=s + 3)
    corr = backward_unrolled(trace, layers, SurrogateSpec.boxcar(b, plan.layers[0].kappa, p.v_th), seed=s + 3)
    return plan, trace, base, corr


def run_gradient_variance(cfg, out):
    plan, trace, base, corr = gradient_flow(cfg)
    rows = [{"layer": l, "var_ds_corrected": float(corr.per_layer_variance[l]),
             "var_ds_original": float(base.per_layer_variance[l])} for l in range(len(plan.layers))]
    plan.to_json(os.path.join(out, "plan.json"))
    x = np.arange(len(rows))
    _plot(os.path.join(out, "plot.png"), x, [("kappa-corrected", corr.per_layer_variance, None),
                                              ("original", base.per_layer_variance, None)],
          "layer", "Var[ds]", logy=True)
    return ["layer", "var_ds_corrected", "var_ds_original"], rows, {
        "kappa": plan.layers[0].kappa, "I_integral": plan.layers[0].I_integral,
        "rates": trace.result.rates}


def run_experiment(cfg, out):
    """Run a resolved config, writing ``results.csv``, ``manifest.json`` and ``plot.png`` into ``out``."""
    os.makedirs(out, exist_ok=True)
    exp = cfg["experiment"]
    summary = {}
    if exp in ("collapse-sweep", "rw-correct", "wiener-correct", "permutation-correct"):
        cols, rows = run_sweep(cfg)
        x = [r["dt_ms"] for r in rows]
        _plot(os.path.join(out, "plot.png"), x, [(cfg["run"]["correction"], [r["rate_hz"] for r in rows],
                                                  [r["rate_se"] for r in rows])],
              "timestep (ms)", "rate (Hz)", logx=True, hline=rows[0]["theory_hz"])
    elif exp == "rate-solver":
        cols, rows = run_rate_solver(cfg)
        _plot(os.path.join(out, "plot.png"), np.arange(len(rows)), [("rate", [r["rate_hz"] for r in rows], None)],
              "method index", "rate (Hz)")
    elif exp == "distributions":
        cols, rows, summary = run_distributions(cfg, out)
    elif exp == "multilayer-rates":
        cols, rows, summary = run_multilayer(cfg, out)
    else:
        cols, rows, summary = run_gradient_variance(cfg, out)
    write_csv(os.path.join(out, "results.csv"), cols, rows)
    write_json(os.path.join(out, "manifest.json"),
               {"config": cfg, "columns": cols, "environment": environment_info(),
                "repeat_seeds": repeat_seeds(cfg["seed"], cfg["repeats"]),
                "summary": {k: v for k, v in summary.items() if not isinstance(v, np.ndarray) or v.size < 1000}})
    return rows
