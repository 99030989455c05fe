"""Feature families for the hybrid model.

* one-hot calendar codes (day of week, hour of day, holiday flag),
* weekly statistics of the history window (max, min, mean),
* cosine similarity of the history window to K-means centres,

and :func:`assemble_sample`, which stacks them into the temporal input
``X`` (168 x 34) and the non-temporal input ``Q`` (12 + n_c).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .data import RawWindow, Scaler

N_WEEKDAY = 7
N_HOUR = 24
N_HOLIDAY = 2
N_CALENDAR = N_WEEKDAY + N_HOUR + N_HOLIDAY  # 33
IN_DIM = 1 + N_CALENDAR  # 34


def one_hot(code: int, cardinality: int) -> np.ndarray:
    if not 0 <= code < cardinality:
        raise ValueError(f"code {code} out of range for cardinality {cardinality}")
    v = np.zeros(cardinality)
    v[code] = 1.0
    return v


@dataclass(frozen=True)
class TimeIndex:
    """Calendar codes of one hour. ``holiday`` is 0 on holidays, 1 otherwise."""

    weekday: int
    hour: int
    holiday: int

    def __post_init__(self):
        if not (0 <= self.weekday < 7 and 0 <= self.hour < 24 and self.holiday in (0, 1)):
            raise ValueError(f"invalid time index {self}")

    @classmethod
    def of(cls, when: dt.datetime, holidays) -> "TimeIndex":
        return cls(when.weekday(), when.hour, 0 if when.date() in holidays else 1)

    def encode(self) -> np.ndarray:
        return np.concatenate(
            [
                one_hot(self.weekday, N_WEEKDAY),
                one_hot(self.hour, N_HOUR),
                one_hot(self.holiday, N_HOLIDAY),
            ]
        )


def stat_features(window) -> np.ndarray:
    w = np.asarray(window, dtype=np.float64)
    return np.array([w.max(), w.min(), w.mean()])


# --------------------------------------------------------------------------
# clustering


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centers: np.ndarray
    final_objective: float
    iterations_run: int
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        c = np.array(self.centers, dtype=np.float64)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centers must be a non-empty 2-D array")
        if not np.isfinite(c).all():
            raise ValueError("non-finite cluster centre")
        if (np.linalg.norm(c, axis=1) <= 0).any():
            raise ValueError("cluster centre with zero norm")

    @property
    def n_c(self) -> int:
        return self.centers.shape[0]


def assign(windows: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centre per window (ties go to the lowest index) and its distance."""
    # direct differences rather than the expanded quadratic form: exact ties stay exact
    d = np.sqrt(((windows[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(windows)), labels]


def _objective(windows, centers, labels) -> float:
    return float(np.linalg.norm(windows - centers[labels], axis=1).sum())


def kmeans_fit(
    windows,
    n_c: int,
    seed: int = 0,
    epsilon: float | None = None,
    max_iter: int = 300,
    rel_tol: float = 1e-6,
) -> ClusterModel:
    """K-means with Euclidean assignment and mean updates.

    The objective ``J`` is the summed (unsquared) distance of each window to
    its centre. Iteration stops once ``|J(k+1) - J(k)| <= epsilon``
    (default ``rel_tol * J(1)``) or after ``max_iter`` updates. A centre's mean
    update is only accepted when it does not raise that cluster's share of
    ``J``, which keeps ``J`` non-increasing.
    """
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("windows must be a 2-D array")
    if n_c < 1:
        raise ValueError("n_c must be positive")
    if len(X) < n_c:
        raise ValueError(f"{len(X)} windows is fewer than n_c={n_c}")

    rng = np.random.default_rng(seed)
    centers = X[np.sort(rng.choice(len(X), size=n_c, replace=False))].copy()
    history: list[float] = []
    it = 0
    while it < max_iter:
        labels, dist = assign(X, centers)
        new = centers.copy()
        for j in range(n_c):
            members = np.flatnonzero(labels == j)
            if members.size == 0:
                # reseed with the window farthest from its centre
                far = int(np.argmax(dist))
                new[j] = X[far]
                dist[far] = 0.0
                continue
            pts = X[members]
            mean = pts.sum(axis=0) / members.size
            if np.linalg.norm(pts - mean, axis=1).sum() <= np.linalg.norm(pts - centers[j], axis=1).sum():
                new[j] = mean
        centers = new
        labels, _ = assign(X, centers)
        it += 1
        history.append(_objective(X, centers, labels))
        if epsilon is None:
            epsilon = rel_tol * history[0]
        if len(history) > 1 and abs(history[-1] - history[-2]) <= epsilon:
            break
    return ClusterModel(centers, history[-1], it, tuple(history))


def similarity(window, model: ClusterModel) -> np.ndarray:
    L = np.asarray(window, dtype=np.float64)
    norm = np.linalg.norm(L)
    if norm <= 0:
        raise ValueError("similarity of a zero-norm window is undefined")
    c = model.centers
    p = (c @ L) / (norm * np.linalg.norm(c, axis=1))
    return np.clip(p, -1.0, 1.0)


# --------------------------------------------------------------------------
# sample assembly


@dataclass(frozen=True)
class FeatureMask:
    """Which feature families feed the model.

    ``calendar`` adds the hourly one-hots to ``X``; ``nontemporal`` enables
    ``Q`` altogether, within which ``stats`` and ``similarity`` are optional.
    """

    calendar: bool = True
    nontemporal: bool = True
    stats: bool = True
    similarity: bool = True

    @property
    def in_dim(self) -> int:
        return IN_DIM if self.calendar else 1

    def q_dim(self, n_c: int) -> int:
        if not self.nontemporal:
            return 0
        return 3 * self.stats + N_WEEKDAY + N_HOLIDAY + n_c * self.similarity

    @property
    def needs_clusters(self) -> bool:
        return self.nontemporal and self.similarity


FULL = FeatureMask()
VARIANTS = {
    "proposed": FULL,
    "model1": FeatureMask(calendar=False, nontemporal=False, stats=False, similarity=False),
    "model2": FeatureMask(similarity=False),
    "model3": FeatureMask(stats=False),
}


@dataclass(frozen=True, eq=False)
class WindowSample:
    X: np.ndarray
    Q: np.ndarray
    Y: np.ndarray
    target_date: dt.date


_CAL_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _calendar_row(when: dt.datetime, holidays) -> np.ndarray:
    key = (when.weekday(), when.hour, 0 if when.date() in holidays else 1)
    row = _CAL_CACHE.get(key)
    if row is None:
        row = _CAL_CACHE[key] = TimeIndex(*key).encode()
    return row


def calendar_block(start: dt.datetime, hours: int, holidays) -> np.ndarray:
    """One-hot calendar rows (hours x 33) for consecutive hours from ``start``."""
    step = dt.timedelta(hours=1)
    return np.stack([_calendar_row(start + k * step, holidays) for k in range(hours)])


def target_day_codes(day: dt.date, holidays) -> np.ndarray:
    """Weekday and holiday one-hots of the target day (length 9)."""
    return np.concatenate(
        [one_hot(day.weekday(), N_WEEKDAY), one_hot(0 if day in holidays else 1, N_HOLIDAY)]
    )


def assemble_sample(
    raw: RawWindow,
    scaler: Scaler,
    holidays,
    clusters: ClusterModel | None,
    mask: FeatureMask = FULL,
) -> WindowSample:
    L = scaler.apply(raw.history)
    width = len(L)
    if mask.calendar:
        X = np.empty((width, IN_DIM))
        X[:, 0] = L
        X[:, 1:] = calendar_block(raw.history_start, width, holidays)
    else:
        X = L[:, None].copy()

    parts = []
    if mask.nontemporal:
        if mask.stats:
            parts.append(stat_features(L))
        parts.append(target_day_codes(raw.target_start.date(), holidays))
        if mask.similarity:
            if clusters is None:
                raise ValueError("similarity features need a fitted ClusterModel")
            parts.append(similarity(L, clusters))
    Q = np.concatenate(parts) if parts else np.zeros(0)
    return WindowSample(X, Q, scaler.apply(raw.target), raw.target_start.date())


def stack(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays ``(X, Q, Y)`` from a sequence of samples."""
    samples = list(samples)
    return (
        np.stack([s.X for s in samples]),
        np.stack([s.Q for s in samples]),
        np.stack([s.Y for s in samples]),
    )
