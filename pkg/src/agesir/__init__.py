"""Stochastic SIR epidemics with infection-age-dependent random infectivity."""
from ._jit import backend
from .model import (AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition, Profile,
                    mean_infectivity, infectivity_covariance, sample_infectivity,
                    sample_initial_individual)
from .agepop import AgeMeasure, h_biased_inverse, measure_apply
from .abm import (SimulationConfig, Trajectory, fluctuation_paths, run_replicas, scaled_paths,
                  simulate, simulate_hazard)

__all__ = [
    "AgeLaw", "AgeMeasure", "DurationDistribution", "InfectivityLaw", "InitialCondition", "Profile",
    "SimulationConfig", "Trajectory", "backend", "fluctuation_paths", "h_biased_inverse",
    "infectivity_covariance", "mean_infectivity", "measure_apply", "run_replicas", "sample_infectivity",
    "sample_initial_individual", "scaled_paths", "simulate", "simulate_hazard",
]
