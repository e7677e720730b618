"""
Higher-order spectral decomposition (HOSD).

Blind recovery of recurring transient waveforms from ensembles of noisy
records: bispectrum-weighted delay filters, iterated realignment,
threshold-based reconstruction and deflation into additive components.
"""
__version__ = "0.1.0"

from .baselines import (PairwiseDelayMatrix, SvdDelays, WoodyResult, pairwise_xcorr_delays,
                        svd_delays, svd_phase_delays, woody_align)
from .decomposition import (Component, DecompositionConfig, DecompositionResult, cross_fitted_statistic,
                            hosd_decompose, mean_record_statistic, residual_stop_check)
from .delay import (AlignmentResult, DelayEstimates, DelayFilter, IterConfig, average_delay_filter,
                    detect_peak, filter_outputs, iterate_alignment, partial_delay_spectra,
                    partial_delay_spectrum)
from .errors import HosdError, InvalidInputError, UndefinedStatisticError
from .hos import (BispectrumGrid, HosFilter, RecordEnsemble, SpectrumSet, apply_quasi_cumulant_window,
                  bias_epsilon, estimate_bispectrum, estimate_denominator, fft_records, hos_filter,
                  make_ensemble, make_hos_filter, quasi_cumulant_mask, segment_record)
from .reconstruction import (ThresholdChoice, fit_scale, reconstruct_component, recover_waveform,
                             select_threshold, skewness_bound, subthreshold_skewness)
from .streaming import DetectionEvent, StreamState, detection_gate, push_record, run_stream
from .synthesis import (GroundTruth, SynthesisSpec, band_noise, circular_delay_correlation, embed_ensemble,
                        make_transient, nongaussian_noise, simulate, simulate_mixture)
