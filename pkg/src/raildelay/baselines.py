"""Parameter-free reference predictors.

Historical average predicts the mean of the target channel over the
sample's input windows; persistence repeats the last observed value.
Both run through the same evaluation path as the trained model.
"""

from __future__ import annotations

import numpy as np

from .windows import Sample

BASELINE_KINDS = ("historical_average", "persistence")


def ha_predict(sample: Sample, recent_only: bool = False) -> np.ndarray:
    """Per-station mean of the target channel across all window slices,
    broadcast to every horizon. `recent_only` restricts the average to
    the recent window (sensitivity check)."""
    parts = [sample.x_recent[:, 0, :]]
    if not recent_only:
        for w in (sample.x_daily, sample.x_weekly):
            if w.shape[-1] > 0:
                parts.append(w[:, 0, :])
    history = np.concatenate(parts, axis=-1)
    if history.shape[-1] == 0:
        raise ValueError("sample has no input slices to average")
    means = history.mean(axis=-1)
    return np.repeat(means[:, None], sample.y.shape[-1], axis=1)


def persistence_predict(sample: Sample) -> np.ndarray:
    """Repeat the last recent-window target value across the horizon."""
    last = sample.x_recent[:, 0, -1]
    return np.repeat(last[:, None], sample.y.shape[-1], axis=1)


def baseline_predictor(kind: str, **kwargs):
    if kind == "historical_average":
        return lambda s: ha_predict(s, **kwargs)
    if kind == "persistence":
        return persistence_predict
    raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINE_KINDS}")
