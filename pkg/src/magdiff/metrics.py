from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsRecord:
    rmse: float
    mae: float
    mape: float  # fraction, not percent
    mse: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def metrics(y_true, y_pred, with_mape: bool = True) -> MetricsRecord:
    """RMSE, MAE, MAPE (fractional) and MSE; RMSE is the square root of the same MSE accumulator."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError(f"need equal non-zero lengths, got {len(y_true)} and {len(y_pred)}")
    delta = y_pred - y_true
    mse = float(np.mean(delta * delta))
    mae = float(np.mean(np.abs(delta)))
    if with_mape:
        small = np.flatnonzero(np.abs(y_true) <= 1e-9)
        if len(small):
            raise ValueError(f"MAPE undefined: y_true[{small[0]}] is zero")
        mape = float(np.mean(np.abs(delta / y_true)))
    else:
        mape = math.nan
    return MetricsRecord(math.sqrt(mse), mae, mape, mse)
