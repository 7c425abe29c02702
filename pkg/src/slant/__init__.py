"""Opinion dynamics driven by marked temporal point processes on a follow graph."""

from .core import (Event, EventLog, MarkovState, ModelError, ModelParams, Network,
                   RandomStream, SentimentModel, apply_jump, decay_intensity, decay_opinion,
                   intensities_from_history, intensity_from_history, opinion_from_history,
                   opinions_from_history, sample_sentiment)
from .estimate import EstimateConfig, SPGConfig, build_features, estimate_all
from .forecast import (ForecastResult, ForecastState, StabilityReport, covariance_dynamics,
                       forecast_hawkes, forecast_mc, forecast_poisson, mc_sample_size,
                       reconstruct_state, steady_state)
from .netgen import KroneckerSpec, ParamGenSpec, erdos_renyi, gen_params, kronecker_graph
from .simulate import (SimConfig, SimulationTruncated, sample_next_event_time, simulate,
                       stationary_rates)

__version__ = "0.1.0"
