"""Age of Information under semi-persistent scheduling.

Frame-slotted simulator of the reservation rules, exact trace analysis of
the AoI, a closed-form approximation of its distribution, and oracles that
check one against the other.
"""

from .analytic import (AnalyticModel, AoiMetrics, EmptySlotSolution, FixedPointError, aoi_metrics,
                       aoi_pmf, aoi_pmf_averaged, average_aoi, collision_duration_pmf,
                       collision_given_duration, expected_empty_slots, joint_collision_duration,
                       reservation_duration_pmf, start_state_pmf, violation_probability)
from .aoi import (aoi_at, aoi_trajectory, collision_duration, empirical_aoi_pmf,
                  reservation_statistics, verify_segmentation)
from .config import (AnalyticParams, ConfigError, GeometricCounter, SystemConfig, UniformCounter,
                     p_e_from_3gpp)
from .pmf import (DomainError, Pmf, binomial_pmf, convolve, convolve_power, max_cdf_gap, mean,
                  tail_above, total_variation)
from .simulator import (ChannelState, TraceSet, empirical_slot_marginal, initial_state,
                        run_simulation, step_frame)
from .validation import (assumption_distance, assumption_study, brute_force_stationary,
                         empty_slot_report, exact_aoi_small, exact_collision_joint)

__version__ = "0.1.0"
