"""Two-step initialisation: weight scale for a target rate, then surrogate scale.

Step one inverts the forward rate map ``V(x) = rate of a layer whose weights
have scale x`` with a bracketing root finder.  Step two evaluates the
before-reset density for the chosen weights and picks

    kappa = sqrt((1 - alpha^2) / (n Var[w] I))

so that the backward variance ratio ``kappa^2 I n Var[w] / (1 - alpha^2)``
is one.  ``I`` is the surrogate mass of the before-reset density.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize

from .errors import ConfigError, NumericalError, SpikeInitError
from .fokker_planck import FpGrid, SurrogateSpec, fp_before_reset, surrogate_mass
from .params import LifParams, WeightSpec, chain
from .rates import (ShotNoiseSpec, moments_from_spec, shot_noise_rate, siegert_rate,
                    threshold_integration_lif)

log = logging.getLogger(__name__)

METHODS = ("siegert", "threshold-integration", "shot-noise", "monte-carlo")
SCALE_KINDS = ("two_point", "gaussian", "exponential_pair")
BRACKET = (1e-4, 1.0)


class BracketError(ConfigError):
    """The target rate lies outside what the weight scale can reach."""


@dataclass(frozen=True)
class RateTheta:
    """Everything the rate map needs besides the weight scale.

    Parameters
    ----------
    params : LifParams
    input_rate : float
        Rate of every presynaptic neuron (Hz).
    n : int
        Presynaptic population size; with ``connection_prob`` the mean
        fan-in is ``n * connection_prob``.  Chains are square, so this is
        also the layer width used in the backward variance.
    kind : str
        ``two_point`` (scale is ``w``), ``gaussian`` (scale is ``sigma_w``)
        or ``exponential_pair`` (scale is the mean magnitude of both signs).
    method : str
        One of ``siegert``, ``threshold-integration``, ``shot-noise`` or
        ``monte-carlo``.
    correction : str or None
        Collapse correction used by the Monte-Carlo method.
    """

    params: LifParams = field(default_factory=LifParams)
    input_rate: float = 50.0
    n: int = 2000
    kind: str = "two_point"
    connection_prob: float = 1.0
    balanced: bool = True
    method: str = "siegert"
    correction: str | None = None
    mc_repeats: int = 5
    mc_duration: float = 1.0
    mc_warmup: float = 0.2
    mc_neurons: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCALE_KINDS:
            raise ConfigError(f"unknown weight kind {self.kind!r}; expected one of {SCALE_KINDS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown rate method {self.method!r}; expected one of {METHODS}")
        if self.method == "shot-noise" and self.kind != "exponential_pair":
            raise ConfigError("the shot-noise method needs kind='exponential_pair'")
        if self.method in ("siegert", "threshold-integration") and self.correction:
            raise ConfigError(f"correction {self.correction!r} only applies to the monte-carlo method")
        if self.n < 1 or self.input_rate < 0 or self.mc_repeats < 1:
            raise ConfigError("RateTheta needs n >= 1, input_rate >= 0 and mc_repeats >= 1")

    def weight_spec(self, scale: float) -> WeightSpec:
        if self.kind == "two_point":
            return WeightSpec.two_point(scale, self.connection_prob, self.balanced)
        if self.kind == "gaussian":
            return WeightSpec.gaussian(scale, 0.0, self.connection_prob, self.balanced)
        return WeightSpec.exponential_pair(scale, -scale, self.connection_prob, self.balanced)

    def var_w(self, scale: float) -> float:
        """Variance of a matrix entry, counting unconnected pairs as zeros."""
        m1, m2 = self.weight_spec(scale).moments()
        p = self.connection_prob
        return p * m2 - (p * m1) ** 2

    def with_input_rate(self, rate: float) -> "RateTheta":
        return replace(self, input_rate=float(rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d


def _mc_rate(scale: float, theta: RateTheta):
    from .sim import PoissonInput, map_repeats, repeat_seeds, run_network

    n_post = theta.mc_neurons or theta.n
    spec = theta.weight_spec(scale)

    def one(s):
        layers = chain([theta.n, n_post], spec, seed=s)
        src = PoissonInput(theta.input_rate, theta.n, theta.params.dt, seed=s + 1)
        res = run_network(layers, theta.params, src, theta.mc_duration, correction=theta.correction,
                          seed=s + 2, warmup=theta.mc_warmup)
        return res.rates[0]

    rates = np.array(map_repeats(one, repeat_seeds(theta.seed, theta.mc_repeats)))
    se = rates.std(ddof=1) / math.sqrt(rates.size) if rates.size > 1 else 0.0
    return float(rates.mean()), float(se)


def rate_operator_V(sigma_w: float, theta: RateTheta) -> float:
    """Output rate (Hz) of a layer with weight scale ``sigma_w``."""
    if not sigma_w > 0:
        raise ConfigError(f"weight scale must be > 0, got {sigma_w}")
    p = theta.params
    if theta.method == "monte-carlo":
        return _mc_rate(sigma_w, theta)[0]
    if theta.method == "shot-noise":
        r = theta.n * theta.connection_prob * theta.input_rate * 0.5
        return shot_noise_rate(p, ShotNoiseSpec(r, r, sigma_w, -sigma_w))
    mom = moments_from_spec(p, theta.weight_spec(sigma_w), theta.input_rate, theta.n)
    if mom.sigma == 0:
        return 0.0
    if theta.method == "siegert":
        return siegert_rate(p, mom)
    return threshold_integration_lif(p, mom)[1]


def solve_weight_sigma(target_rate: float, theta: RateTheta, rtol: float = 1e-4) -> float:
    """Weight scale at which :func:`rate_operator_V` equals ``target_rate``.

    The bracket starts at ``[1e-4, 1]`` and is widened deterministically
    (lower end divided by 10, upper end doubled) a few times if needed.
    """
    if not target_rate > 0:
        raise ConfigError(f"target rate must be > 0, got {target_rate}")
    lo, hi = BRACKET

    def f(x):
        return rate_operator_V(x, theta) - target_rate

    f_lo, f_hi = f(lo), f(hi)
    for _ in range(6):
        if f_lo < 0 < f_hi or f_lo > 0 > f_hi:
            break
        if f_lo >= 0 and f_hi >= 0:
            lo /= 10.0
            f_lo = f(lo)
        else:
            hi *= 2.0
            f_hi = f(hi)
    else:
        if f_lo == 0:
            return lo
        if f_hi == 0:
            return hi
        raise BracketError(f"target {target_rate:g} Hz is not reachable for weight scales in "
                           f"[{lo:g}, {hi:g}]: rates span {f_lo + target_rate:.6g} to "
                           f"{f_hi + target_rate:.6g} Hz")
    # rate is smooth in the scale, so a tight x tolerance meets the rate tolerance
    x, info = optimize.toms748(f, lo, hi, xtol=1e-14, rtol=1e-10, full_output=True)
    if not info.converged:
        raise NumericalError(f"root finder did not converge for target {target_rate:g} Hz")
    if theta.method != "monte-carlo":
        got = rate_operator_V(x, theta)
        if abs(got - target_rate) > rtol * target_rate:
            raise NumericalError(f"root at {x:g} gives {got:g} Hz, outside tolerance of {target_rate:g} Hz")
    return float(x)


def surrogate_integral(sigma_w: float, theta: RateTheta, surrogate: SurrogateSpec,
                       n_points: int = 2048) -> float:
    """Surrogate mass ``I`` of the before-reset density for these weights."""
    p = theta.params
    mom = moments_from_spec(p, theta.weight_spec(sigma_w), theta.input_rate, theta.n)
    stat, _ = threshold_integration_lif(p, mom)
    b = surrogate.b_th if surrogate.shape == "boxcar" else 0.0
    dens = fp_before_reset(stat, mom, p, FpGrid.around(p, mom, b, n_points))
    return surrogate_mass(dens, surrogate)


def kappa_from_integral(i_integral: float, sigma_w: float, theta: RateTheta) -> float:
    if not i_integral > 0:
        raise ConfigError("the surrogate sees no probability mass (I = 0); widen b_th or check that "
                          "the layer fires at all")
    a = theta.params.alpha
    return math.sqrt((1.0 - a * a) / (theta.n * theta.var_w(sigma_w) * i_integral))


def kappa_for_gradient_flow(sigma_w: float, theta: RateTheta, surrogate: SurrogateSpec) -> float:
    """Surrogate scale that keeps backward variance constant from layer to layer."""
    return kappa_from_integral(surrogate_integral(sigma_w, theta, surrogate), sigma_w, theta)


def forward_rate_bound(rho_prev: float, theta: RateTheta, sigma_w: float) -> float:
    """Upper bound on the per-step firing probability of the next layer.

    ``n Var[w] (A rho + B rho^2) / (2 V_th^2)`` with ``A = 1/(1 - a^2)`` and
    ``B = 2a / ((1 - a)^2 (1 + a))``.  Only a diagnostic: it assumes a
    membrane distribution symmetric around zero, input spikes independent
    across time and neurons, and ignores the reset.
    """
    if not 0.0 <= rho_prev <= 1.0:
        raise ConfigError(f"rho_prev must lie in [0, 1], got {rho_prev}")
    a = theta.params.alpha
    coef_a, coef_b = bound_coefficients(a)
    return theta.n * theta.var_w(sigma_w) * (coef_a * rho_prev + coef_b * rho_prev ** 2) / (
        2.0 * theta.params.v_th ** 2)


def bound_coefficients(alpha: float):
    """``(A, B)`` of :func:`forward_rate_bound`."""
    return 1.0 / (1.0 - alpha * alpha), 2.0 * alpha / ((1.0 - alpha) ** 2 * (1.0 + alpha))


# --------------------------------------------------------------------------- plans
@dataclass
class LayerPlan:
    layer: int
    input_rate: float
    target_rate: float
    sigma_w: float
    predicted_rate: float
    I_integral: float
    kappa: float
    method: str


@dataclass
class InitPlan:
    """Per-layer weight scales and surrogate scales for a feed-forward chain."""

    theta: RateTheta
    surrogate: SurrogateSpec
    layers: list

    @property
    def sigmas(self):
        return [e.sigma_w for e in self.layers]

    @property
    def kappas(self):
        return [e.kappa for e in self.layers]

    def weight_specs(self):
        return [self.theta.weight_spec(e.sigma_w) for e in self.layers]

    def build_chain(self, seed=0):
        """Realised topologies for this plan (square layers of width ``n``)."""
        n = self.theta.n
        return chain([n] * (len(self.layers) + 1), self.weight_specs(), seed=seed)

    def to_dict(self):
        return {"theta": self.theta.to_dict(), "surrogate": self.surrogate.to_dict(),
                "layers": [asdict(e) for e in self.layers]}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        cols = ["layer", "sigma_w", "predicted_rate", "kappa", "I_integral"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for e in self.layers:
                d = asdict(e)
                w.writerow([d["layer"]] + [format(d[c], ".10g") for c in cols[1:]])

    @classmethod
    def from_dict(cls, d):
        th = dict(d["theta"])
        th["params"] = LifParams(**th["params"])
        s = d["surrogate"]
        sur = SurrogateSpec(s["shape"], b_th=s["b_th"], kappa=s["kappa"], v_th=s["v_th"], beta=s["beta"])
        return cls(RateTheta(**th), sur, [LayerPlan(**e) for e in d["layers"]])


def plan_network_init(n_layers: int, targets, theta: RateTheta,
                      surrogate: SurrogateSpec | None = None) -> InitPlan:
    """Solve weight and surrogate scales layer by layer.

    ``targets`` is one rate or a list of ``n_layers`` rates.  Layer 0 is fed
    at ``theta.input_rate``; layer ``l`` is fed at target ``l - 1``.
    Identical layer configurations are solved once.
    """
    if n_layers < 1:
        raise ConfigError("n_layers must be >= 1")
    if np.isscalar(targets):
        targets = [float(targets)] * n_layers
    targets = [float(t) for t in targets]
    if len(targets) != n_layers:
        raise ConfigError(f"need {n_layers} targets, got {len(targets)}")
    surrogate = surrogate or SurrogateSpec.boxcar(0.01, v_th=theta.params.v_th)
    cache = {}
    out = []
    rate_in = theta.input_rate
    for l, tgt in enumerate(targets):
        key = (rate_in, tgt)
        if key not in cache:
            th = theta.with_input_rate(rate_in)
            try:
                sw = solve_weight_sigma(tgt, th)
                pred = rate_operator_V(sw, th)
                # the before-reset density needs a diffusion density
                dth = replace(th, method="siegert", correction=None)
                i_int = surrogate_integral(sw, dth, surrogate)
                kap = kappa_from_integral(i_int, sw, th)
            except SpikeInitError as exc:
                raise type(exc)(f"layer {l}: {exc}") from exc
            cache[key] = (sw, pred, i_int, kap)
        sw, pred, i_int, kap = cache[key]
        out.append(LayerPlan(l, rate_in, tgt, sw, pred, i_int, kap, theta.method))
        rate_in = tgt
    return InitPlan(theta, surrogate, out)
