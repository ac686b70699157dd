"""Correlation spectroscopy of single nuclear spins with weak measurements."""

from corrspec.analytic import (
    corr_prob_multi_weak,
    corr_prob_single,
    corr_prob_two,
    exact_joint_prob,
    imperfect_trajectory_weights,
    precision_delta_omega,
    trajectory_prob_polarized,
    trajectory_prob_unpolarized,
)
from corrspec.discriminate import (
    nv_mediated_contrast,
    pi_pulse_conditioned_contrast,
    polarized_contrast,
)
from corrspec.estimate import FrequencyEstimator, crb_check, mle_frequency
from corrspec.fisher import (
    convergence_threshold,
    fisher_imperfect_multi,
    fisher_polarized,
    fisher_unpolarized,
    optimize_measurement_count,
)
from corrspec.nmr import NmrConfig, compare_protocols, nmr_fisher, nmr_kraus
from corrspec.operators import (
    DetectorModel,
    NucleusParams,
    ProtocolSchedule,
    SpinState,
    measurement_kraus,
)
from corrspec.simulate import MeasurementRecord, likelihood_of_record, run_batch, run_protocol

__version__ = "0.1.0"
