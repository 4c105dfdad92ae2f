"""Receiver-side trajectory forecasting: kinematic baselines and hybrid GP."""

from .hgp import (DEFAULT_LIMITS, Limits, expected_cos, expected_sin, forecast_batch,
                  hgp_direct, hgp_indirect, hybrid_guard, integrate_positions,
                  points_from_marginals)
from .kinematic import (ForecastPoint, KalmanState, ca_propagate, constant_accel,
                        constant_speed, hold_last, kalman_step)
from .predictors import (Predictor, PredictorConfig, PredictorKind, available, create,
                         register)

__all__ = [
    "DEFAULT_LIMITS", "ForecastPoint", "KalmanState", "Limits", "Predictor",
    "PredictorConfig", "PredictorKind", "available", "ca_propagate", "constant_accel",
    "constant_speed", "create", "expected_cos", "expected_sin", "forecast_batch",
    "hgp_direct", "hgp_indirect", "hold_last", "hybrid_guard", "integrate_positions",
    "kalman_step", "points_from_marginals", "register",
]
