"""Receding-horizon control without terminal weight: solvers, stability
certificates built on the one-step value, the MPCS algorithm and a
closed-loop simulator."""

from .cost import (FunctionCost, QuadraticCost, StageCost, TerminalWeight, horizon_cost,
                   shift_from_original, stage)
from .dynamics import (TAU_SET, Constraints, InputBox, LinearModel, StateSet, SystemModel,
                       TabulatedModel, contains, step)
from .errors import (ArgumentError, BudgetError, ConfigError, DomainError, MPCError, ShapeError,
                     SingularityError, UnsupportedError)
from .mpcs import (FeasibleSet, MpcsConfig, MpcsStepRecord, StateGrid, compute_feasible_set,
                   mpcs_step, mpcs_step_nested, mpcs_step_rf, run_mpcs)
from .sim import (ClosedLoopTrace, MPCController, OpenLoop, StaticGain, compare_runs,
                  format_summary, simulate)
from .solver import (GridSpec, HorizonSolution, OneStepValue, brute_force_dp,
                     lq_gain_and_value, one_step_value, solve_horizon, solve_lq_horizon)
from .stability import (TAU_CERT, Certificate, check_classic, check_thm1, check_thm2,
                        check_thm_tw, first_order_region, lq_horizon_forms, lq_n1_certificate)

__version__ = "0.1.0"
