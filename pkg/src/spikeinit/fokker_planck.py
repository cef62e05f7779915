"""Reset-free Fokker-Planck evolution and surrogate mass.

The surrogate gradient of a spiking layer is evaluated on the membrane after
a step's input has been integrated but before the reset.  That "before-reset"
density is the stationary density evolved for one step ``dt`` under

    tau dP/dt = -d/dv[(mu - v) P] + (sigma^2 / 2) d^2P/dv^2

with no threshold.  The solve uses finite volumes on a uniform grid: upwind
advective fluxes, centred diffusive fluxes, zero flux through both edges and
explicit Euler sub-steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConfigError, NumericalError
from .params import LifParams
from .rates import DiffusionMoments, MembraneDensity, stationary_distribution_diffusion, threshold_integration_lif

log = logging.getLogger(__name__)

MAX_SUBSTEPS = 2 ** 16


@dataclass(frozen=True)
class FpGrid:
    """Uniform cell-centred grid for the reset-free solve.

    ``dt_inner`` is the requested sub-step; it is refined automatically when
    it violates the explicit stability limit.
    """

    v_min: float
    v_max: float
    n_points: int = 4096
    dt_inner: float = 1e-5

    def __post_init__(self):
        if self.n_points < 1024:
            raise ConfigError(f"FpGrid needs n_points >= 1024, got {self.n_points}")
        if not self.v_max > self.v_min:
            raise ConfigError("FpGrid needs v_max > v_min")
        if not self.dt_inner > 0:
            raise ConfigError("FpGrid.dt_inner must be > 0")

    @property
    def h(self) -> float:
        return (self.v_max - self.v_min) / self.n_points

    @property
    def centres(self) -> np.ndarray:
        return self.v_min + self.h * (np.arange(self.n_points) + 0.5)

    @classmethod
    def around(cls, params: LifParams, moments: DiffusionMoments, b_th: float = 0.0, n_points: int = 4096,
               dt_inner: float = 1e-5):
        """Wide default grid: ``V_r - 10 sigma`` to ``V_th + max(10 sigma, 4 B_th)``."""
        s = moments.sigma
        lo = min(params.v_r, moments.mu) - 10.0 * s
        hi = params.v_th + max(10.0 * s, 4.0 * b_th)
        return cls(lo, hi, n_points, dt_inner)


def _project(density: MembraneDensity, grid: FpGrid) -> np.ndarray:
    # cell averages of the piecewise-linear input density
    edges = grid.v_min + grid.h * np.arange(grid.n_points + 1)
    cum = _cumulative(density, edges)
    return np.diff(cum) / grid.h


def _cumulative(density: MembraneDensity, x):
    g, p = density.grid, density.density
    c = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(g))))
    x = np.clip(np.asarray(x, dtype=float), g[0], g[-1])
    k = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
    dx = x - g[k]
    slope = (p[k + 1] - p[k]) / (g[k + 1] - g[k])
    return c[k] + p[k] * dx + 0.5 * slope * dx * dx


def fp_before_reset(initial: MembraneDensity, moments: DiffusionMoments, params: LifParams,
                    grid: FpGrid | None = None, duration: float | None = None) -> MembraneDensity:
    """Evolve ``initial`` for one step without threshold or reset.

    Parameters
    ----------
    initial : MembraneDensity
        Normalised starting density, typically the stationary one.
    grid : FpGrid, optional
        Defaults to :meth:`FpGrid.around`.
    duration : float, optional
        Evolution time; defaults to ``params.dt``.

    Returns
    -------
    MembraneDensity
        Cell-centred density on ``grid``; total mass is conserved.
    """
    if grid is None:
        grid = FpGrid.around(params, moments)
    t_end = params.dt if duration is None else duration
    if t_end < 0:
        raise ConfigError("duration must be >= 0")
    mass0 = initial.mass()
    if abs(mass0 - 1.0) > 1e-4:
        raise ConfigError(f"initial density must be normalised, mass is {mass0:.6g}")
    h = grid.h
    x = grid.centres
    p = _project(initial, grid)
    p *= 1.0 / (p.sum() * h)
    if t_end == 0:
        return MembraneDensity(x, p, grid.v_min)

    faces = grid.v_min + h * np.arange(1, grid.n_points)     # interior faces
    a = (moments.mu - faces) / params.tau
    a_pos, a_neg = np.maximum(a, 0.0), np.minimum(a, 0.0)
    diff = moments.sigma2 / (2.0 * params.tau)
    rate_max = float(np.max(np.abs(a))) / h + 2.0 * diff / (h * h)
    n_sub = max(1, int(math.ceil(t_end / grid.dt_inner)))
    while t_end / n_sub * rate_max > 0.9:
        n_sub *= 2
        if n_sub > MAX_SUBSTEPS:
            raise NumericalError(f"reset-free solve needs more than {MAX_SUBSTEPS} sub-steps; "
                                 "coarsen the grid or shorten the step")
    k = t_end / n_sub
    flux = np.zeros(grid.n_points + 1)
    for _ in range(n_sub):
        flux[1:-1] = a_pos * p[:-1] + a_neg * p[1:] - diff * (p[1:] - p[:-1]) / h
        p = p - k / h * (flux[1:] - flux[:-1])
    low = p.min()
    if low < -1e-12:
        log.warning("before-reset density dipped to %.3g; clipping", low)
    if low < 0:
        clipped = -p[p < 0].sum() * h
        p = np.maximum(p, 0.0)
        log.debug("clipped negative mass %.3g", clipped)
    return MembraneDensity(x, p, grid.v_min)


def before_reset_density(params: LifParams, moments: DiffusionMoments, b_th: float = 0.0,
                         n_points: int = 4096, source: str = "threshold-integration") -> MembraneDensity:
    """Stationary density followed by one reset-free step.

    ``source`` selects the stationary density: ``"threshold-integration"``
    (default) or ``"closed-form"``.
    """
    if source == "threshold-integration":
        stat, _ = threshold_integration_lif(params, moments)
    elif source == "closed-form":
        v = np.linspace(params.v_r - 10.0 * moments.sigma, params.v_th, 2001)
        stat = stationary_distribution_diffusion(params, moments, v).normalised()
    else:
        raise ConfigError(f"unknown stationary source {source!r}")
    return fp_before_reset(stat, moments, params, FpGrid.around(params, moments, b_th, n_points))


# --------------------------------------------------------------------------- surrogates
@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate derivative ``kappa * H'(v - v_th)``.

    Shapes
    ------
    boxcar
        ``H'(x) = 1`` for ``|x| < b_th``, else 0.
    sigmoid
        ``H'(x) = beta s(beta x) (1 - s(beta x))`` with the logistic ``s``.
    samples
        Piecewise-linear ``H'`` through ``(x_samples, h_samples)``, zero
        outside.
    """

    shape: str = "boxcar"
    b_th: float = 0.01
    kappa: float = 1.0
    v_th: float = 1.0
    beta: float = 10.0
    x_samples: tuple = ()
    h_samples: tuple = ()

    def __post_init__(self):
        if self.shape not in ("boxcar", "sigmoid", "samples"):
            raise ConfigError(f"unknown surrogate shape {self.shape!r}")
        if self.shape == "boxcar" and not self.b_th > 0:
            raise ConfigError("boxcar surrogate needs b_th > 0")
        if self.shape == "samples":
            if len(self.x_samples) < 2 or len(self.x_samples) != len(self.h_samples):
                raise ConfigError("sampled surrogate needs matching x/h samples (at least two)")
            if min(self.h_samples) < 0:
                raise ConfigError("surrogate samples must be >= 0")
        if not self.kappa > 0:
            raise ConfigError("kappa must be > 0")

    @classmethod
    def boxcar(cls, b_th, kappa=1.0, v_th=1.0):
        return cls("boxcar", b_th=float(b_th), kappa=float(kappa), v_th=float(v_th))

    @classmethod
    def sigmoid(cls, beta=10.0, kappa=1.0, v_th=1.0):
        return cls("sigmoid", beta=float(beta), kappa=float(kappa), v_th=float(v_th))

    @classmethod
    def samples(cls, x, h, kappa=1.0, v_th=1.0):
        return cls("samples", x_samples=tuple(map(float, x)), h_samples=tuple(map(float, h)),
                   kappa=float(kappa), v_th=float(v_th))

    def with_kappa(self, kappa):
        from dataclasses import replace
        return replace(self, kappa=float(kappa))

    def support(self):
        """Interval of ``v`` outside which ``H'`` vanishes (infinite for the sigmoid)."""
        if self.shape == "boxcar":
            return self.v_th - self.b_th, self.v_th + self.b_th
        if self.shape == "samples":
            return self.v_th + min(self.x_samples), self.v_th + max(self.x_samples)
        return -math.inf, math.inf

    def h_prime(self, v):
        """``H'(v - v_th)`` without ``kappa``."""
        x = np.asarray(v, dtype=float) - self.v_th
        if self.shape == "boxcar":
            return (np.abs(x) < self.b_th).astype(float)
        if self.shape == "sigmoid":
            s = 0.5 * (1.0 + np.tanh(0.5 * self.beta * x))
            return self.beta * s * (1.0 - s)
        return np.interp(x, self.x_samples, self.h_samples, left=0.0, right=0.0)

    def __call__(self, v):
        return self.kappa * self.h_prime(v)

    def to_dict(self):
        return {"shape": self.shape, "b_th": self.b_th, "kappa": self.kappa, "v_th": self.v_th,
                "beta": self.beta}


def surrogate_mass(density: MembraneDensity, surrogate: SurrogateSpec) -> float:
    """``I = int H'(v)^2 P(v) dv`` (``kappa`` excluded).

    For the boxcar this is the probability mass within ``b_th`` of the
    threshold, integrated exactly for the piecewise-linear density.  Parts
    of the support beyond the grid contribute nothing.
    """
    g = density.grid
    lo, hi = surrogate.support()
    if hi <= g[0] or lo >= g[-1]:
        raise ConfigError(f"surrogate support [{lo:g}, {hi:g}] lies outside the density grid "
                          f"[{g[0]:g}, {g[-1]:g}]")
    if surrogate.shape == "boxcar":
        a, b = max(lo, g[0]), min(hi, g[-1])
        return float(_cumulative(density, b) - _cumulative(density, a))
    if surrogate.shape == "samples":
        # refine so the sample knots are resolved
        x = np.union1d(g, np.clip(np.asarray(surrogate.x_samples) + surrogate.v_th, g[0], g[-1]))
        return float(integrate.trapezoid(surrogate.h_prime(x) ** 2 * density.interp(x), x))
    return float(integrate.trapezoid(surrogate.h_prime(g) ** 2 * density.density, g))
