"""Worldline Monte Carlo for the two qubits with oscillator and bath integrated out."""

from .kernel import (
    EffectiveKernel,
    KernelQuadratureError,
    Segment,
    SegmentDomainError,
    effective_kernel,
    kernel_direct,
    pair_integrals,
    segment_interaction,
)
from .sampler import Estimates, Sample, WlmcConfig, histogram_modes, make_rng, measure, merge_estimates, run, sweep
from .updates import attach_couplings, bond_probabilities, cluster_update, metropolis_segment_flip, overlap_matrix
from .worldline import (
    DressedConfig,
    DressedWorldline,
    Worldline,
    WorldlineConfig,
    WorldlineError,
    dress,
    insert_potential_flips,
)

__all__ = [
    "EffectiveKernel", "KernelQuadratureError", "Segment", "SegmentDomainError", "effective_kernel",
    "kernel_direct", "pair_integrals", "segment_interaction", "Estimates", "Sample", "WlmcConfig",
    "histogram_modes", "make_rng", "measure", "merge_estimates", "run", "sweep", "attach_couplings",
    "bond_probabilities", "cluster_update", "metropolis_segment_flip", "overlap_matrix", "DressedConfig",
    "DressedWorldline", "Worldline", "WorldlineConfig", "WorldlineError", "dress", "insert_potential_flips",
]
