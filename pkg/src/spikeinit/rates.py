"""Stationary firing rate and membrane density of a LIF population.

Three routes to the output rate under Poisson input:

* ``siegert_rate``: diffusion approximation, closed form;
* ``shot_noise_rate``: exponentially distributed weights;
* ``threshold_integration_lif``: backward integration of the stationary
  flux/density pair, which also yields the density.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, NumericalError
from .params import LifParams, WeightSpec

QUAD_EPSREL = 1e-8


@dataclass(frozen=True)
class DiffusionMoments:
    """Drift ``mu`` and noise ``sigma`` of the equivalent Ornstein-Uhlenbeck input.

    ``sigma**2 = tau * sum(r_k w_k**2)``; the stationary variance of the
    free membrane is half of that, see :attr:`membrane_variance`.
    """

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def sigma2(self) -> float:
        return self.sigma ** 2

    @property
    def membrane_variance(self) -> float:
        """Stationary variance of the threshold-free membrane, sigma**2 / 2."""
        return 0.5 * self.sigma ** 2


def diffusion_moments(params: LifParams, inputs) -> DiffusionMoments:
    """Moments from ``[(rate_k, weight_k), ...]``.

    ``mu = I_ext + tau * sum(r_k w_k)`` and ``sigma**2 = tau * sum(r_k w_k**2)``.
    """
    mu = params.i_ext
    s2 = 0.0
    for r, w in inputs:
        if r < 0:
            raise ConfigError(f"input rates must be >= 0, got {r}")
        mu += params.tau * r * w
        s2 += params.tau * r * w * w
    return DiffusionMoments(mu, math.sqrt(s2))


def moments_from_spec(params: LifParams, spec: WeightSpec, rate: float, n_pre: int) -> DiffusionMoments:
    """Moments for ``n_pre`` sources at ``rate`` connected according to ``spec``."""
    if rate < 0:
        raise ConfigError(f"input rate must be >= 0, got {rate}")
    m1, m2 = spec.moments()
    agg = n_pre * spec.connection_prob * rate
    return DiffusionMoments(params.i_ext + params.tau * agg * m1, math.sqrt(params.tau * agg * m2))


def siegert_rate(params: LifParams, moments: DiffusionMoments) -> float:
    """Stationary rate (Hz) under the diffusion approximation.

    ``1 / (tau sqrt(pi) int_{(V_r-mu)/sigma}^{(V_th-mu)/sigma} exp(x^2)(1 + erf x) dx)``,
    with the integrand evaluated as ``erfcx(-x)`` to stay finite.
    """
    if moments.sigma == 0:
        raise ConfigError("sigma = 0: no input noise, the rate is set by the deterministic "
                          "(mean-driven) dynamics, which this solver does not cover")
    lo = (params.v_r - moments.mu) / moments.sigma
    hi = (params.v_th - moments.mu) / moments.sigma
    if hi > 26.5:  # integrand overflows; the rate is below 1e-300 Hz
        return 0.0
    val, _ = integrate.quad(lambda x: special.erfcx(-x), lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
    return 1.0 / (params.tau * math.sqrt(math.pi) * val)


# --------------------------------------------------------------------------- shot noise
@dataclass(frozen=True)
class ShotNoiseSpec:
    """Excitatory/inhibitory input rates with exponentially distributed amplitudes.

    ``w_e > 0`` and ``w_i < 0`` are the mean amplitudes.
    """

    r_e: float
    r_i: float
    w_e: float
    w_i: float

    def __post_init__(self):
        if self.r_e < 0 or self.r_i < 0:
            raise ConfigError("shot-noise rates must be >= 0")
        if not self.w_e > 0:
            raise ConfigError(f"w_e must be > 0, got {self.w_e}")
        if not self.w_i < 0:
            raise ConfigError(f"w_i must be < 0, got {self.w_i}")


def _shot_log_g(s, b, w_e, w_i, v_r, delta):
    # log of (1 - x w_i)^b e^{x v_r} (expm1(x delta)/x + w_e), x = (1 - s)/w_e
    x = (1.0 - s) / w_e
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        xd = x * delta
        small = np.log(np.where(x > 0, np.expm1(xd) / x, delta) + w_e)
        # for large x delta: log(e^{xd} - 1 + x w_e) - log x
        large = xd + np.log1p((x * w_e - 1.0) * np.exp(-xd)) - np.log(np.where(x > 0, x, 1.0))
        tail = np.where(xd > 30.0, large, small)
    return b * np.log1p(-x * w_i) + x * v_r + tail


def shot_noise_rate(params: LifParams, spec: ShotNoiseSpec) -> float:
    """Stationary rate (Hz) for exponentially distributed synaptic amplitudes.

    Evaluates ``1/r = tau int_0^{1/w_e} Z(x)/x (e^{x V_th}/(1 - x w_e) - e^{x V_r}) dx``
    with ``Z(x) = (1 - x w_e)^{tau r_e} (1 - x w_i)^{tau r_i}``.  The integral
    is rewritten in ``s = 1 - x w_e``, which isolates the algebraic endpoint
    factor ``s^{tau r_e - 1}``; the ``x -> 0`` end is evaluated through its
    finite limit.  A constant bias shifts both thresholds by ``-I_ext``.
    """
    a = params.tau * spec.r_e
    b = params.tau * spec.r_i
    v_th = params.v_th - params.i_ext
    v_r = params.v_r - params.i_ext
    if a == 0.0:
        if v_th > 0:
            return 0.0
        raise ConfigError("no excitation and bias above threshold: rate is set by the deterministic drift")
    delta = v_th - v_r
    args = (b, spec.w_e, spec.w_i, v_r, delta)
    s_grid = np.linspace(0.0, 1.0, 2049)[1:]
    if a >= 1.0:
        def logf(s):
            return (a - 1.0) * np.log(s) + _shot_log_g(s, *args)
    else:
        def logf(s):
            return _shot_log_g(s, *args)
    lg = logf(s_grid)
    if not np.all(np.isfinite(lg)):
        raise NumericalError("shot-noise integrand is not finite near the lower endpoint x = 0")
    peak = float(lg.max())
    s_peak = float(s_grid[int(lg.argmax())])

    def f(s):
        return float(np.exp(logf(np.asarray(s, dtype=float)) - peak))

    opts = dict(epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
    if a >= 1.0:
        pts = [p for p in (s_peak,) if 0.0 < p < 1.0]
        val, _ = integrate.quad(f, 0.0, 1.0, points=pts or None, **opts)
    else:
        val, _ = integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(a - 1.0, 0.0), **opts)
    if not (np.isfinite(val) and val > 0):
        raise NumericalError("shot-noise integral diverged at the upper endpoint x = 1/w_e")
    log_inv = math.log(params.tau) + math.log(val) + peak - math.log(spec.w_e)
    if log_inv > 700:
        return 0.0
    return math.exp(-log_inv)


# --------------------------------------------------------------------------- densities
@dataclass
class MembraneDensity:
    """Probability density on a voltage grid (ascending)."""

    grid: np.ndarray
    density: np.ndarray
    lower_bound: float

    def mass(self) -> float:
        return float(integrate.trapezoid(self.density, self.grid))

    def mean(self) -> float:
        return float(integrate.trapezoid(self.grid * self.density, self.grid) / self.mass())

    def variance(self) -> float:
        m = self.mean()
        return float(integrate.trapezoid((self.grid - m) ** 2 * self.density, self.grid) / self.mass())

    def normalised(self) -> "MembraneDensity":
        return MembraneDensity(self.grid, self.density / self.mass(), self.lower_bound)

    def interp(self, v) -> np.ndarray:
        return np.interp(v, self.grid, self.density, left=0.0, right=0.0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["v", "density"])
            for x, p in zip(self.grid, self.density):
                wr.writerow([format(x, ".10g"), format(p, ".10g")])


def _ti_grid(v_lb, v_r, v_th, h):
    n_above = max(1, int(math.ceil((v_th - v_r) / h - 1e-9)))
    h = (v_th - v_r) / n_above
    n_below = max(0, int(math.ceil((v_r - v_lb) / h - 1e-9)))
    return v_r + h * np.arange(-n_below, n_above + 1), n_below


def _ti_solve(params, mom, v_lb, h):
    grid, i_r = _ti_grid(v_lb, params.v_r, params.v_th, h)
    h = grid[1] - grid[0]
    s2 = mom.sigma2
    p = np.zeros(grid.size)
    # exponential integrator on each cell with coefficients frozen at the midpoint
    mid = grid[1:] - 0.5 * h
    g = 2.0 * (mom.mu - mid) / s2
    decay = np.exp(-g * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(np.abs(g * h) > 1e-12, -np.expm1(-g * h) / g, h)
    src = np.where(np.arange(grid.size - 1) >= i_r, 2.0 * params.tau / s2, 0.0)
    # p can grow by hundreds of decades for weak noise; rescale to stay finite
    log_scale = 0.0
    sc = 1.0
    for k in range(grid.size - 1, 0, -1):
        p[k - 1] = p[k] * decay[k - 1] + src[k - 1] * gain[k - 1] * sc
        if p[k - 1] > 1e200:
            p[k - 1:] *= 1e-200
            sc *= 1e-200
            log_scale += 200.0 * math.log(10.0)
    total = integrate.trapezoid(p, grid)
    if not np.isfinite(total):
        raise NumericalError("threshold integration overflowed")
    log_rate = -math.log(total) - log_scale
    rate = math.exp(log_rate) if log_rate > -745.0 else 0.0
    return grid, p / total, rate


def threshold_integration_lif(params: LifParams, moments: DiffusionMoments, v_lb: float | None = None,
                              grid_size: int = 8192, tol: float = 1e-6, max_doublings: int = 8):
    """Rate and stationary density by integrating down from threshold.

    The stationary pair ``dj/dv = delta(v - V_r) - delta(v - V_th)`` and
    ``(mu - v)/tau p - sigma^2/(2 tau) p' = j`` is integrated from
    ``p(V_th) = 0, j(V_th) = 1`` down to ``v_lb``; the rate is
    ``1 / int p dv``.

    Parameters
    ----------
    v_lb : float, optional
        Lower bound.  Defaults to ``V_r - 10 sigma``, and the distance to
        ``V_r`` is doubled until the rate changes by less than ``tol``.
        An explicit value is used as given.
    grid_size : int
        Number of grid points spanning the initial window; the spacing is
        kept when the window grows.

    Returns
    -------
    density : MembraneDensity
        ``r * p`` on the grid, integrating to one.
    rate : float
        Output rate in Hz.
    """
    if moments.sigma == 0:
        raise ConfigError("sigma = 0: threshold integration needs input noise")
    if grid_size < 512:
        raise ConfigError(f"grid_size must be >= 512, got {grid_size}")
    auto = v_lb is None
    if auto:
        v_lb = params.v_r - 10.0 * moments.sigma
    if v_lb >= params.v_r:
        raise ConfigError(f"v_lb must be below V_r, got {v_lb}")
    h = (params.v_th - v_lb) / (grid_size - 1)
    grid, p, rate = _ti_solve(params, moments, v_lb, h)
    if auto:
        for _ in range(max_doublings):
            v_lb = params.v_r - 2.0 * (params.v_r - v_lb)
            grid, p, new = _ti_solve(params, moments, v_lb, h)
            done = abs(new - rate) <= tol * abs(new)
            rate = new
            if done:
                break
        else:
            raise NumericalError("threshold integration: mass below v_lb did not converge after "
                                 f"{max_doublings} doublings (last v_lb={v_lb:g})")
    if not np.isfinite(rate) or rate < 0:
        raise NumericalError(f"threshold integration produced rate {rate}")
    return MembraneDensity(grid, p, float(grid[0])), float(rate)


def stationary_distribution_diffusion(params: LifParams, moments: DiffusionMoments, grid) -> MembraneDensity:
    """Closed-form stationary density of the diffusion approximation.

    ``P(v) = r (2 tau / sigma) int_{max(y, y_r)}^{y_th} exp(x^2 - y^2) dx`` with
    ``y = (v - mu) / sigma``; zero above threshold.  The inner integral is
    done by adaptive quadrature for every grid point.
    """
    grid = np.asarray(grid, dtype=float)
    rate = siegert_rate(params, moments)
    mu, sig = moments.mu, moments.sigma
    y_th = (params.v_th - mu) / sig
    y_r = (params.v_r - mu) / sig
    dens = np.zeros(grid.size)
    for i, v in enumerate(grid):
        if v >= params.v_th:
            continue
        y = (v - mu) / sig
        lo = max(y, y_r)
        val, _ = integrate.quad(lambda x, y=y: math.exp(x * x - y * y), lo, y_th,
                                epsabs=0.0, epsrel=1e-10, limit=200)
        dens[i] = rate * 2.0 * params.tau / sig * val
    return MembraneDensity(grid, dens, float(grid[0]))
