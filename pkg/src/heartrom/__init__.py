"""heartrom: ODE surrogates of ventricular pressure-volume dynamics coupled
to lumped-parameter circulation models, with variance-based sensitivity
analysis and Bayesian calibration on top."""

__version__ = "0.1.0"

from .annrom import (RomArchitecture, RomModel, nn_eval, rom_initial_state,
                     rom_rhs, rom_volume, simulate_rom)
from .circulation import (CircParams, CircState, WindkesselParams,
                          chamber_activation, circ_rhs, initial_circ_state,
                          total_blood_volume, v_lv_of_circ,
                          windkessel_pressure_step)
from .coupledsim import (ClosedLoop, CoupledConfig, CoupledResult,
                         CouplingError, QoiVector, RefVentricle, RomVentricle,
                         Windkessel, compare_rom_vs_ref, coupled_step,
                         extract_qois, generate_dataset, run_fixed_beats,
                         run_to_limit_cycle)
from .bayes import (InverseProblem, PosteriorSamples, credibility_region,
                    log_posterior, metropolis_chains, run_mcmc)
from .gsa import SobolResult, run_gsa, sobol_indices
from .params import ParamDim, ParamSpace, ParamVector, gsa_space, training_space
from .refventricle import (RefVentricleParams, activation_rhs, simulate_ref,
                           volume_from_pressure)
from .sampling import (SampleDesign, saltelli_design, sample_monte_carlo,
                       sample_sobol_sequence)
from .training import (TrainingConfig, TrainingReport, cross_validate, loss,
                       residual_jacobian, train)
from .transients import Dataset, Transient, read_transients, write_transients
