"""Multi-chart CUSUM detection across coupled sensors: simulation, calibration,
Monte Carlo performance estimates and finite-difference checks."""
from .calibration import CalibrationResult, McParams, Method, asymptotic_h, calibrate_h_mc, f_cusum, solve_nu
from .detector import CusumState, StoppingOutcome, cusum_step, run_multichart, run_single_cusum, statistic_paths
from .engine import BudgetExceeded, Estimate, RunResult, Scenario, run_replications
from .montecarlo import equalizer_test, estimate_delay, estimate_false_alarm, excess_delay_table
from .pde import Grid2D, PdeSolution, product_check, solve_S, solve_T, survival_1d
from .sde import Constant, CoupledAutoregressive, DriftModel, PathBundle, RotationalPair, SimConfig, simulate_paths

__all__ = [
    "BudgetExceeded", "CalibrationResult", "Constant", "CoupledAutoregressive", "CusumState", "DriftModel",
    "Estimate", "Grid2D", "McParams", "Method", "PathBundle", "PdeSolution", "RotationalPair", "RunResult",
    "Scenario", "SimConfig", "StoppingOutcome", "asymptotic_h", "calibrate_h_mc", "cusum_step",
    "equalizer_test", "estimate_delay", "estimate_false_alarm", "f_cusum", "product_check",
    "run_multichart", "run_replications", "run_single_cusum", "simulate_paths", "solve_S", "solve_T",
    "solve_nu", "statistic_paths", "survival_1d", "excess_delay_table",
]
