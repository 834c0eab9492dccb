"""Multi-resolution active learning for Fourier neural operators."""
from .annealing import ALPHA_GRID, CostSchedule, decay_c, scheduled_costs, select
from .baselines import POLICY_NAMES, PolicySpec
from .campaign import CampaignConfig, CampaignHistory, build_campaign_data, run_campaign
from .ensemble import Ensemble, PredictiveMixture, evaluate, fit_ensemble, predictive_mixture
from .errors import ConfigError, MultiResError, NumericalError
from .grids import DiscretizedFunction, GridSpec, ResolutionSpec, downsample, interpolate_up, relative_l2
from .model import ModelConfig, ProbabilisticFNO, TrainConfig, build_model, gaussian_nll, predict, train
from .pde import make_pool, make_task, make_test_set, query_simulator
from .utility import (LowRankGaussian, logdet_lowrank, moment_match, mutual_information, score_pool,
                      utility_u1, utility_u2)

__version__ = "0.1.0"
