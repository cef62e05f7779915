"""Neuron constants, weight distributions and realised layer connectivity."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError

WEIGHT_KINDS = ("two_point", "gaussian", "exponential_pair", "discrete")


@dataclass(frozen=True)
class LifParams:
    """Constants of a leaky integrate-and-fire population.

    The membrane resistance is fixed at 1, so ``i_ext`` is expressed in
    voltage units, and there is no refractory period.

    Parameters
    ----------
    tau : float
        Membrane time constant in seconds.
    v_th, v_r : float
        Threshold and reset potentials, ``v_th > v_r``.
    i_ext : float
        Constant bias, voltage-equivalent.
    dt : float
        Simulation step in seconds.
    """

    tau: float = 0.01
    v_th: float = 1.0
    v_r: float = 0.0
    i_ext: float = 0.0
    dt: float = 1e-3

    def __post_init__(self):
        for name in ("tau", "v_th", "v_r", "i_ext", "dt"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"LifParams.{name} must be finite")
        if self.tau <= 0:
            raise ConfigError(f"LifParams.tau must be > 0, got {self.tau}")
        if self.dt <= 0:
            raise ConfigError(f"LifParams.dt must be > 0, got {self.dt}")
        if self.v_th <= self.v_r:
            raise ConfigError(f"LifParams needs v_th > v_r, got v_th={self.v_th}, v_r={self.v_r}")

    @property
    def alpha(self) -> float:
        """Per-step decay factor exp(-dt/tau)."""
        return math.exp(-self.dt / self.tau)

    @property
    def alpha_bar(self) -> float:
        """Decay averaged over a uniform arrival time within the step."""
        return self.tau / self.dt * -math.expm1(-self.dt / self.tau)

    @property
    def drive(self) -> float:
        """Bias contribution per step, (1 - alpha) * I_ext."""
        return -math.expm1(-self.dt / self.tau) * self.i_ext

    def with_dt(self, dt: float) -> "LifParams":
        return replace(self, dt=dt)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WeightSpec:
    """Distribution of a single synaptic weight.

    Use the class methods rather than the raw constructor.  ``balanced``
    removes the per-neuron drift that a finite row of random weights adds to
    the mean input.  For the sign-carrying kinds (two-point and exponential
    pair) each row of a realised matrix gets exactly half of its connections
    excitatory (the odd one out is assigned at random) instead of drawing
    every sign independently.  For Gaussian weights each row's connected
    entries are shifted to have mean ``mu_w``.
    """

    kind: str
    w: float = 0.0
    mu_w: float = 0.0
    sigma_w: float = 0.0
    w_e: float = 0.0
    w_i: float = 0.0
    deltas: tuple = ()
    values: tuple = ()
    connection_prob: float = 1.0
    balanced: bool = False

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if not 0.0 <= self.connection_prob <= 1.0:
            raise ConfigError(f"connection_prob must lie in [0, 1], got {self.connection_prob}")
        if self.kind == "two_point" and not self.w > 0:
            raise ConfigError(f"two-point weights need w > 0, got {self.w}")
        if self.kind == "gaussian" and not self.sigma_w >= 0:
            raise ConfigError(f"gaussian weights need sigma_w >= 0, got {self.sigma_w}")
        if self.kind == "exponential_pair" and not (self.w_e > 0 > self.w_i):
            raise ConfigError(f"exponential pair needs w_e > 0 > w_i, got w_e={self.w_e}, w_i={self.w_i}")
        if self.kind == "discrete":
            d = np.asarray(self.deltas, dtype=float)
            if d.size == 0 or d.size != len(self.values):
                raise ConfigError("discrete weights need matching non-empty deltas and values")
            if np.any(d <= 0) or abs(d.sum() - 1.0) > 1e-12:
                raise ConfigError("discrete weight proportions must be positive and sum to 1")

    # constructors -----------------------------------------------------------
    @classmethod
    def two_point(cls, w, connection_prob=1.0, balanced=False):
        return cls("two_point", w=float(w), connection_prob=float(connection_prob), balanced=balanced)

    @classmethod
    def gaussian(cls, sigma_w, mu_w=0.0, connection_prob=1.0, balanced=False):
        return cls("gaussian", mu_w=float(mu_w), sigma_w=float(sigma_w), connection_prob=float(connection_prob),
                   balanced=balanced)

    @classmethod
    def exponential_pair(cls, w_e, w_i, connection_prob=1.0, balanced=False):
        return cls("exponential_pair", w_e=float(w_e), w_i=float(w_i),
                   connection_prob=float(connection_prob), balanced=balanced)

    @classmethod
    def discrete(cls, deltas, values, connection_prob=1.0):
        return cls("discrete", deltas=tuple(float(x) for x in deltas),
                   values=tuple(float(x) for x in values), connection_prob=float(connection_prob))

    def scaled(self, scale: float) -> "WeightSpec":
        """Copy with every weight magnitude multiplied by ``scale``."""
        if self.kind == "two_point":
            return replace(self, w=self.w * scale)
        if self.kind == "gaussian":
            return replace(self, mu_w=self.mu_w * scale, sigma_w=self.sigma_w * scale)
        if self.kind == "exponential_pair":
            return replace(self, w_e=self.w_e * scale, w_i=self.w_i * scale)
        return replace(self, values=tuple(v * scale for v in self.values))

    # statistics -------------------------------------------------------------
    def moments(self):
        """Mean and second moment of a connected weight, ``(E[w], E[w^2])``."""
        if self.kind == "two_point":
            return 0.0, self.w ** 2
        if self.kind == "gaussian":
            return self.mu_w, self.mu_w ** 2 + self.sigma_w ** 2
        if self.kind == "exponential_pair":
            return 0.5 * (self.w_e + self.w_i), self.w_e ** 2 + self.w_i ** 2
        d = np.asarray(self.deltas)
        x = np.asarray(self.values)
        return float(d @ x), float(d @ x ** 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deltas"] = list(self.deltas)
        d["values"] = list(self.values)
        return d

    # realisation ------------------------------------------------------------
    def sample_matrix(self, n_post: int, n_pre: int, rng: np.random.Generator) -> np.ndarray:
        """Draw an ``n_post x n_pre`` weight matrix, zero where unconnected."""
        p = self.connection_prob
        if p >= 1.0:
            mask = np.ones((n_post, n_pre), dtype=bool)
        else:
            mask = rng.random((n_post, n_pre)) < p
        if self.kind in ("two_point", "exponential_pair"):
            if self.balanced:
                exc = np.zeros((n_post, n_pre), dtype=bool)
                for i in range(n_post):
                    cols = np.flatnonzero(mask[i])
                    half = cols.size // 2 + (cols.size % 2 and rng.random() < 0.5)
                    exc[i, rng.permutation(cols)[:half]] = True
            else:
                exc = rng.random((n_post, n_pre)) < 0.5
            if self.kind == "two_point":
                w = np.where(exc, self.w, -self.w)
            else:
                w = np.where(exc, rng.exponential(self.w_e, (n_post, n_pre)),
                             -rng.exponential(-self.w_i, (n_post, n_pre)))
        elif self.kind == "gaussian":
            w = rng.normal(self.mu_w, self.sigma_w, (n_post, n_pre))
            if self.balanced:
                k = np.maximum(mask.sum(axis=1, keepdims=True), 1)
                w = w - (np.where(mask, w, 0.0).sum(axis=1, keepdims=True) / k - self.mu_w)
        else:
            w = rng.choice(np.asarray(self.values), size=(n_post, n_pre), p=np.asarray(self.deltas))
        return np.ascontiguousarray(np.where(mask, w, 0.0))


@dataclass
class LayerTopology:
    """A realised feed-forward projection ``n_pre -> n_post``.

    ``weights`` is drawn lazily from ``weight_spec`` with ``seed`` unless
    supplied explicitly.
    """

    n_pre: int
    n_post: int
    weight_spec: WeightSpec
    seed: int = 0
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_pre < 1 or self.n_post < 1:
            raise ConfigError(f"layer sizes must be positive, got {self.n_pre} -> {self.n_post}")
        if self.weights is None:
            rng = np.random.default_rng(self.seed)
            self.weights = self.weight_spec.sample_matrix(self.n_post, self.n_pre, rng)
        else:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.n_post, self.n_pre):
                raise ConfigError(f"weights shape {self.weights.shape} != ({self.n_post}, {self.n_pre})")

    @property
    def n_connections(self) -> int:
        return int(np.count_nonzero(self.weights))

    @property
    def connected_fraction(self) -> float:
        return self.n_connections / (self.n_pre * self.n_post)

    def summary(self) -> dict:
        return {"n_pre": self.n_pre, "n_post": self.n_post, "seed": self.seed,
                "n_connections": self.n_connections, "weight_spec": self.weight_spec.to_dict()}


def chain(sizes, specs, seed=0):
    """Build a list of topologies for layer sizes ``[n0, n1, ..., nL]``.

    ``specs`` is one WeightSpec or a list of L of them.  Per-layer seeds are
    spawned from ``seed``.
    """
    n_layers = len(sizes) - 1
    if isinstance(specs, WeightSpec):
        specs = [specs] * n_layers
    if len(specs) != n_layers:
        raise ConfigError(f"need {n_layers} weight specs, got {len(specs)}")
    seeds = np.random.SeedSequence(seed).generate_state(n_layers, dtype=np.uint32)
    return [LayerTopology(sizes[i], sizes[i + 1], specs[i], int(seeds[i])) for i in range(n_layers)]
