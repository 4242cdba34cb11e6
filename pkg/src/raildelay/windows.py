"""Sliding-window sample assembly and chronological dataset splits.

A sample is anchored at slot t0 (the last observed hour) and predicts the
next t_p slots. Three input windows feed the model: the t_h hours up to
the anchor, and groups of t_p slots aligned with the *target* hours on
previous days (stride q) and previous weeks (stride 7q). The first week
of data is reserved as history so every anchor has a full weekly window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ingest import FeatureCube


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    """Window geometry in slots. t_d and t_w must be multiples of t_p;
    one "group" of t_p slots per prior day/week is the default. Setting
    t_d or t_w to 0 disables that component."""

    q: int = 24          # slots per day
    t_p: int = 3         # prediction horizon
    t_h: int = 3         # recent window length
    t_d: int = 3         # daily window length (t_d/t_p prior days)
    t_w: int = 3         # weekly window length (t_w/t_p prior weeks)

    def __post_init__(self):
        if not (1 <= self.t_p <= self.q):
            raise WindowError("need q >= t_p >= 1")
        if self.t_h < 1:
            raise WindowError("recent window must be nonempty")
        for name, val in (("t_d", self.t_d), ("t_w", self.t_w)):
            if val < 0 or val % self.t_p != 0:
                raise WindowError(f"{name} must be a nonnegative multiple of t_p")

    @property
    def history_slots(self) -> int:
        """Warm-up prefix reserved as pure history (one week of slots)."""
        return 7 * self.q

    def min_anchor(self) -> int:
        bounds = [self.t_h - 1, self.history_slots - 1]
        if self.t_d:
            bounds.append((self.t_d // self.t_p) * self.q - 1)
        if self.t_w:
            bounds.append(7 * (self.t_w // self.t_p) * self.q - 1)
        return max(bounds)


@dataclass(frozen=True)
class Sample:
    """One training instance; target covers slots t0+1 .. t0+t_p."""

    x_recent: np.ndarray   # N x F x t_h
    x_daily: np.ndarray    # N x F x t_d
    x_weekly: np.ndarray   # N x F x t_w
    y: np.ndarray          # N x t_p
    mask: np.ndarray       # N x t_p
    t0: int


def _check_history(name: str, first_slot: int, t0: int, earliest_valid: int):
    if first_slot < 0:
        raise WindowError(
            f"{name} window underruns history at anchor {t0}; "
            f"earliest valid anchor is {earliest_valid}")


def recent_window(cube: FeatureCube, t0: int, cfg: WindowConfig) -> np.ndarray:
    """Slots t0-t_h+1 .. t0 inclusive, chronological."""
    first = t0 - cfg.t_h + 1
    _check_history("recent", first, t0, cfg.t_h - 1)
    return cube.X[:, :, first:t0 + 1]


def _grouped_window(cube: FeatureCube, t0: int, cfg: WindowConfig,
                    length: int, stride: int, name: str) -> np.ndarray:
    groups = length // cfg.t_p
    if groups == 0:
        return cube.X[:, :, :0]
    first = t0 - groups * stride + 1
    _check_history(name, first, t0, groups * stride - 1)
    slots = []
    for m in range(groups, 0, -1):
        start = t0 - m * stride + 1
        slots.extend(range(start, start + cfg.t_p))
    return cube.X[:, :, slots]


def daily_window(cube: FeatureCube, t0: int, cfg: WindowConfig) -> np.ndarray:
    """Target-aligned slots from the previous t_d/t_p days (stride q)."""
    return _grouped_window(cube, t0, cfg, cfg.t_d, cfg.q, "daily")


def weekly_window(cube: FeatureCube, t0: int, cfg: WindowConfig) -> np.ndarray:
    """Target-aligned slots from the previous t_w/t_p weeks (stride 7q)."""
    return _grouped_window(cube, t0, cfg, cfg.t_w, 7 * cfg.q, "weekly")


def window_index_sets(t0: int, cfg: WindowConfig) -> dict[str, list[int]]:
    """The slot indices each window would read; used for auditing."""
    out = {"recent": list(range(t0 - cfg.t_h + 1, t0 + 1)), "daily": [], "weekly": []}
    for name, stride, length in (("daily", cfg.q, cfg.t_d), ("weekly", 7 * cfg.q, cfg.t_w)):
        for m in range(length // cfg.t_p, 0, -1):
            start = t0 - m * stride + 1
            out[name].extend(range(start, start + cfg.t_p))
    return out


@dataclass
class Splits:
    train: list[int] = field(default_factory=list)
    val: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def valid_anchors(cube: FeatureCube, cfg: WindowConfig) -> list[int]:
    lo = cfg.min_anchor()
    hi = cube.n_slots - cfg.t_p - 1  # need target slots t0+1 .. t0+t_p
    return list(range(lo, hi + 1))


def split_dataset(cube: FeatureCube, cfg: WindowConfig) -> Splits:
    """Chronological split of valid anchors: last 20% test, then last 20%
    of the remainder validation, rest training (floor rounding)."""
    anchors = valid_anchors(cube, cfg)
    n = len(anchors)
    n_test = n // 5
    n_val = (n - n_test) // 5
    n_train = n - n_test - n_val
    if min(n_train, n_val, n_test) < 1:
        raise WindowError(
            f"only {n} valid anchors; too few for a train/val/test split")
    return Splits(
        train=anchors[:n_train],
        val=anchors[n_train:n_train + n_val],
        test=anchors[n_train + n_val:],
    )


def make_sample(cube: FeatureCube, t0: int, cfg: WindowConfig) -> Sample:
    return Sample(
        x_recent=recent_window(cube, t0, cfg),
        x_daily=daily_window(cube, t0, cfg),
        x_weekly=weekly_window(cube, t0, cfg),
        y=cube.Y[:, t0 + 1:t0 + 1 + cfg.t_p],
        mask=cube.mask[:, t0 + 1:t0 + 1 + cfg.t_p],
        t0=t0,
    )


def enumerate_samples(cube: FeatureCube, anchors, cfg: WindowConfig):
    """Yield one Sample per anchor, in the given (deterministic) order."""
    for t0 in anchors:
        yield make_sample(cube, t0, cfg)


def save_split_manifest(splits: Splits, cfg: WindowConfig, path) -> None:
    doc = {
        "window": {"q": cfg.q, "t_p": cfg.t_p, "t_h": cfg.t_h, "t_d": cfg.t_d, "t_w": cfg.t_w},
        "anchors": splits.as_dict(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_split_manifest(path) -> tuple[Splits, WindowConfig]:
    with open(path) as f:
        doc = json.load(f)
    cfg = WindowConfig(**doc["window"])
    a = doc["anchors"]
    return Splits(train=a["train"], val=a["val"], test=a["test"]), cfg
