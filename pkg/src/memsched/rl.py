"""The learning side of the core-aware scheduler.

One linear value model per core scores "prioritise this core's requests"
from four features of the controller state:

* ``num_pet``      requests of the core waiting in the buffer
* ``row_hit_pet``  of those, how many would hit the currently open row
* ``bp_pet``       distinct ready banks with waiting requests (shared by all cores)
* ``hist_pet``     requests the core had admitted within the recent window

Features enter the model normalised to [0, 1].  The environment reward is a
fairness signal: each core's memory-related starvation (stall cycles per
access) is bucketed by four thresholds and the reward depends on the lowest
and highest bucket present, giving a 4x4 rule table.  Models are trained with
a linear Q-learning (TD(0)) step on the previously selected core.

The numeric kernels are numba-compiled so the simulation engine can call the
very same functions from its compiled cycle loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from numba import njit

from .dram import BankState, NO_ROW
from .errors import CalibrationError, ConfigError

N_FEATURES = 4
N_CATEGORIES = 4
HISTORY_WINDOW = 100


@njit(cache=True)
def normalize_features(num_pet, row_hit_pet, bp_pet, hist_pet, capacity, window, out):
    out[0] = num_pet / capacity
    out[1] = row_hit_pet / capacity
    out[2] = bp_pet / capacity
    out[3] = min(1.0, hist_pet / window)


@njit(cache=True)
def predict(theta, f):
    return theta[0] * f[0] + theta[1] * f[1] + theta[2] * f[2] + theta[3] * f[3]


@njit(cache=True)
def starvation(stall_cycles, access_count):
    if access_count <= 0:
        return 0.0
    return stall_cycles / access_count


@njit(cache=True)
def categorize(value, thresholds):
    k = 0
    for t in thresholds:
        if t <= value:
            k += 1
    return min(k, N_CATEGORIES - 1)


@njit(cache=True)
def reward_from_starvations(starv, thresholds, rewards):
    lo = N_CATEGORIES
    hi = -1
    for v in starv:
        k = categorize(v, thresholds)
        lo = min(lo, k)
        hi = max(hi, k)
    return rewards[lo, hi]


@njit(cache=True)
def td_step(theta, f, env_reward, max_estimate, prev_estimate, alpha, gamma):
    """In-place TD(0) step along the feature vector; returns the TD error."""
    delta = env_reward + gamma * max_estimate - prev_estimate
    for i in range(N_FEATURES):
        theta[i] += alpha * delta * f[i]
        if not np.isfinite(theta[i]):
            raise AssertionError("non-finite model parameter after update")
    return delta


@njit(cache=True)
def select_from_estimates(estimates, eligible, u, epsilon, fallback):
    """epsilon-greedy choice; returns ``(core, max_estimate)``.

    The max estimate is the greedy value over eligible cores whichever branch
    chose the core.  Ties go to the lowest core index.
    """
    best = -1
    best_val = 0.0
    for c in range(len(estimates)):
        if eligible[c] and (best < 0 or estimates[c] > best_val):
            best = c
            best_val = estimates[c]
    if best < 0:
        raise AssertionError("select_core called with no eligible core")
    if u < epsilon:
        return fallback, best_val
    return best, best_val


def default_rewards():
    """``1 - spread/3`` for every (lowest, highest) category pair."""
    r = np.zeros((N_CATEGORIES, N_CATEGORIES))
    for lo in range(N_CATEGORIES):
        for hi in range(lo, N_CATEGORIES):
            r[lo, hi] = 1.0 - (hi - lo) / (N_CATEGORIES - 1)
    return r


@dataclass(frozen=True)
class FeatureTuple:
    num_pet: int
    row_hit_pet: int
    bp_pet: int
    hist_pet: int
    capacity: int = 64
    window: int = HISTORY_WINDOW

    def __post_init__(self):
        assert 0 <= self.row_hit_pet <= self.num_pet

    @property
    def normalized(self) -> np.ndarray:
        out = np.empty(N_FEATURES)
        normalize_features(self.num_pet, self.row_hit_pet, self.bp_pet, self.hist_pet,
                           self.capacity, self.window, out)
        return out


@dataclass
class CoreModel:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        assert self.theta.shape == (N_FEATURES,)


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.15
    gamma: float = 0.9
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("learner.alpha", f"must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("learner.gamma", f"must be in [0, 1), got {self.gamma}")
        # epsilon = 0 is allowed so greedy runs can be compared against FR-FCFS.
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("learner.epsilon", f"must be in [0, 1], got {self.epsilon}")


@dataclass
class LearnerState:
    prev_reward_estimate: float = 0.0
    prev_features: Optional[FeatureTuple] = None
    prev_selected: Optional[int] = None


@dataclass
class StarvationState:
    stall_cycles: list
    access_count: list

    @classmethod
    def zeros(cls, core_count):
        return cls([0] * core_count, [0] * core_count)

    def values(self):
        return [mr_starvation(s, a) for s, a in zip(self.stall_cycles, self.access_count)]


@dataclass(frozen=True)
class RewardRuleTable:
    """Four starvation thresholds plus the (lowest, highest) category reward table.

    A core's category is the number of thresholds at or below its starvation,
    capped at 3, so the last threshold only marks the upper end of the
    calibrated range.
    """

    thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    rewards: np.ndarray = field(default_factory=default_rewards)
    mode: str = "percentile"
    degenerate: bool = False

    def __post_init__(self):
        k = tuple(float(x) for x in self.thresholds)
        if len(k) != N_CATEGORIES:
            raise ConfigError("reward.thresholds", f"need {N_CATEGORIES} values, got {len(k)}")
        if not all(math.isfinite(x) for x in k) or any(a >= b for a, b in zip(k, k[1:])):
            raise ConfigError("reward.thresholds", f"must be finite and strictly increasing, got {k}")
        r = np.asarray(self.rewards, dtype=np.float64)
        if r.shape != (N_CATEGORIES, N_CATEGORIES):
            raise ConfigError("reward.rewards", "must be a 4x4 table indexed [lowest][highest]")
        if np.any(np.triu(r) < 0) or np.any(np.triu(r) > 1):
            raise ConfigError("reward.rewards", "rewards must lie in [0, 1]")
        if self.mode not in ("percentile", "equal-width"):
            raise ConfigError("reward.mode", f"unknown mode {self.mode!r}")
        object.__setattr__(self, "thresholds", k)
        object.__setattr__(self, "rewards", r)

    @property
    def threshold_array(self):
        return np.array(self.thresholds)

    def category(self, value):
        return int(categorize(float(value), self.threshold_array))

    def to_dict(self):
        return {"mode": self.mode, "thresholds": [float(t) for t in self.thresholds],
                "degenerate": bool(self.degenerate),
                "rewards": [list(map(float, row)) for row in self.rewards]}

    @classmethod
    def from_dict(cls, d: Mapping):
        kw = {}
        for key in ("thresholds", "mode", "degenerate"):
            if key in d:
                kw[key] = d[key]
        if "rewards" in d and d["rewards"] is not None:
            kw["rewards"] = np.asarray(d["rewards"], dtype=np.float64)
        return cls(**kw)


def extract_features(core: int, buffer, banks: Sequence[BankState],
                     history: Mapping[int, Sequence[int]], now: int,
                     window: int = HISTORY_WINDOW) -> FeatureTuple:
    """Features of ``core`` for a request-buffer snapshot.

    ``history`` maps each core to the DRAM cycles at which its requests were
    admitted; only admissions in ``(now - window, now]`` count.
    """
    num = hit = 0
    ready_banks = set()
    for p in buffer.entries:
        bank = banks[p.bank]
        if bank.ready_at <= now:
            ready_banks.add(p.bank)
        if p.request.core_id == core:
            num += 1
            open_row = NO_ROW if bank.open_row is None else bank.open_row
            if open_row == p.row:
                hit += 1
    hist = sum(1 for t in history.get(core, ()) if now - window < t <= now)
    return FeatureTuple(num, hit, len(ready_banks), hist, buffer.capacity, window)


def _as_vector(f):
    if isinstance(f, FeatureTuple):
        return f.normalized
    return np.asarray(f, dtype=np.float64)


def predict_reward(model: CoreModel, f) -> float:
    """Linear value estimate; ``f`` is a FeatureTuple or a normalized 4-vector."""
    return float(predict(model.theta, _as_vector(f)))


def mr_starvation(stall_cycles, access_count) -> float:
    return float(starvation(float(stall_cycles), float(access_count)))


def compute_reward(starvations: Sequence[float], table: RewardRuleTable) -> float:
    if len(starvations) < 1:
        raise ValueError("compute_reward needs at least one core")
    return float(reward_from_starvations(np.asarray(starvations, dtype=np.float64),
                                         table.threshold_array, table.rewards))


def q_update(model: CoreModel, f_prev, env_reward: float, max_current_estimate: float,
             prev_estimate: float, cfg: LearnerConfig) -> CoreModel:
    """Return the model after one TD step along the previous features."""
    theta = model.theta.copy()
    td_step(theta, _as_vector(f_prev), float(env_reward), float(max_current_estimate),
            float(prev_estimate), cfg.alpha, cfg.gamma)
    return CoreModel(theta)


def select_core(models: Sequence[CoreModel], features: Sequence, eligible,
                cfg: LearnerConfig, rng, frfcfs_fallback_core: int):
    """epsilon-greedy over eligible cores; consumes exactly one ``rng.random()`` draw."""
    n = len(models)
    mask = np.zeros(n, dtype=np.bool_)
    for c in eligible:
        mask[c] = True
    assert mask.any(), "select_core needs at least one eligible core"
    assert mask[frfcfs_fallback_core], "fallback core must be eligible"
    est = np.array([predict_reward(models[c], features[c]) if mask[c] else 0.0
                    for c in range(n)])
    core, best = select_from_estimates(est, mask, float(rng.random()), cfg.epsilon,
                                       frfcfs_fallback_core)
    return int(core), float(best)


def calibrate_thresholds(samples, mode: str = "percentile") -> RewardRuleTable:
    """Derive the four thresholds from observed starvation values.

    ``percentile`` puts them at the 20/40/60/80th percentiles (linear
    interpolation); ``equal-width`` splits ``[min, max]`` into four equal
    parts and uses the three inner cut points plus ``max``.  Ties are pushed
    apart by a few ulps so the thresholds stay strictly increasing; the table
    is then flagged ``degenerate``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < N_CATEGORIES:
        raise CalibrationError(f"need at least {N_CATEGORIES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise CalibrationError("samples contain non-finite values")
    if mode == "percentile":
        k = np.percentile(x, [20, 40, 60, 80])
    elif mode == "equal-width":
        lo, hi = float(x.min()), float(x.max())
        k = lo + (hi - lo) / 4 * np.arange(1, 5)
        k[3] = hi
    else:
        raise CalibrationError(f"unknown calibration mode {mode!r}")
    k = [float(v) for v in k]
    degenerate = False
    for i in range(1, len(k)):
        if k[i] <= k[i - 1]:
            k[i] = k[i - 1] + max(abs(k[i - 1]), 1.0) * 16 * np.finfo(float).eps
            degenerate = True
    return RewardRuleTable(thresholds=tuple(k), mode=mode, degenerate=degenerate)
