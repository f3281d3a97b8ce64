"""Aging control and traffic offloading under location-dependent prices.

Device side: an average-reward MDP whose optimal upload policy is a set of
per-price age thresholds. Provider side: per-location thresholds chosen by
simulated annealing to minimise leasing cost under AoI and capacity limits.
"""

from .errors import *  # noqa: F401,F403
from .mobility import MobilityModel, build_model, estimate_from_trace
from .mdp import AgingMdpInstance, ThresholdPolicy, linear_utility, solve_average_reward
from .aoi import analyze, upload_time_distribution
from .joac import JoacInstance, evaluate, feasible, objective, t_max
from .anneal import AnnealConfig, mh_chain_fixed_T, neighborhood_graph, sa_optimize
from .coloring import Coloring, ColoringStream, accelerated_sa, greedy_coloring
from .sim import exhaustive_policy_enumeration, exhaustive_threshold_search, simulate_policy

__version__ = "0.1.0"
