"""Transmit beamforming for MIMO single-carrier block transmission with frequency-domain equalisation."""

from .channel import (ChannelSvd, FrequencyDomainChannel, PowerDelayProfile, SystemConfig,
                      TimeDomainChannel, decompose, generate_channel, to_frequency_domain)
from .equalizer import BeamformerSet, EqualizerSet, StreamMse, mmse_filter, stream_mse
from .errors import ConfigError, ConvergenceError, RankDeficientError, ZeroSinrError
from .optimizer import (ALL_CRITERIA, Criterion, CriterionKind, DualState, PowerAllocation,
                        SchurClass, SolverConfig, assemble_beamformer, objective,
                        schur_class, solve_dual, solve_inner, waterfill)

__version__ = "0.1.0"
