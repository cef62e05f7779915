"""Firing-rate theory, timestep-collapse corrections and initialisation for
discrete-time leaky integrate-and-fire networks."""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, SpikeInitError
from .params import LayerTopology, LifParams, WeightSpec, chain
from .sim import (NetworkResult, PoissonInput, SaturatedInputWarning, SpikeRaster, poisson_spikes,
                  run_network, step_population)
from .correction import (NoCorrection, PermutationCorrection, RandomWalkCorrection, RwQuery,
                         WienerCorrection, WienerQuery, rw_spike_probability, wiener_spike_probability)
from .rates import (DiffusionMoments, MembraneDensity, ShotNoiseSpec, diffusion_moments, moments_from_spec,
                    shot_noise_rate, siegert_rate, stationary_distribution_diffusion,
                    threshold_integration_lif)
from .fokker_planck import FpGrid, SurrogateSpec, fp_before_reset, surrogate_mass
from .backprop import (GradientTrace, backward_unrolled, forward_unrolled, gradient_variance_per_layer)
from .pipeline import (InitPlan, RateTheta, forward_rate_bound, kappa_for_gradient_flow,
                       plan_network_init, rate_operator_V, solve_weight_sigma)

__all__ = [
    "ConfigError", "NumericalError", "SpikeInitError",
    "LayerTopology", "LifParams", "WeightSpec", "chain",
    "NetworkResult", "PoissonInput", "SaturatedInputWarning", "SpikeRaster", "poisson_spikes",
    "run_network", "step_population",
    "NoCorrection", "PermutationCorrection", "RandomWalkCorrection", "RwQuery", "WienerCorrection",
    "WienerQuery", "rw_spike_probability", "wiener_spike_probability",
    "DiffusionMoments", "MembraneDensity", "ShotNoiseSpec", "diffusion_moments", "moments_from_spec",
    "shot_noise_rate", "siegert_rate", "stationary_distribution_diffusion", "threshold_integration_lif",
    "FpGrid", "SurrogateSpec", "fp_before_reset", "surrogate_mass",
    "GradientTrace", "backward_unrolled", "forward_unrolled", "gradient_variance_per_layer",
    "InitPlan", "RateTheta", "forward_rate_bound", "kappa_for_gradient_flow", "plan_network_init",
    "rate_operator_V", "solve_weight_sigma",
]
