"""Series ingestion, chronological splitting, and synthetic drift generators.

The generators exist so that drift-adaptation claims can be tested without
any benchmark corpus: a covariate-shift stream (AR(1) with mean jumps) and
a concept-drift stream (lagged linear map from driver channels to a target
channel whose coefficients change at given points in time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .forecaster import Sample

DRIFT_KINDS = ("mean_shift", "concept_drift")

# fixed base coefficients of the lagged driver->target map; change points
# multiply the lag-1 coefficient of driver 0 by -magnitude
CONCEPT_A1 = 1.0
CONCEPT_A2 = 0.5


@dataclass
class SeriesFrame:
    """Raw multivariate series: values (T x C), one name per channel."""

    values: np.ndarray
    columns: List[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"series values must be 2-D, got {self.values.shape}")
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("column count != value columns")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]


@dataclass
class SplitSpec:
    train_frac: float = 0.60
    val_frac: float = 0.10
    test_frac: float = 0.30

    def __post_init__(self) -> None:
        for f in (self.train_frac, self.val_frac, self.test_frac):
            if f < 0:
                raise ValueError("split fractions must be >= 0")
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass
class DriftSpec:
    kind: str = "concept_drift"
    change_points: List[int] = field(default_factory=list)
    magnitudes: List[float] = field(default_factory=list)
    ar_coeff: float = 0.8
    noise_std: float = 0.1
    channels: int = 2
    length: int = 6000
    seed: int = 7

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"kind {self.kind!r} not in {DRIFT_KINDS}")
        if not -1.0 < self.ar_coeff < 1.0:
            raise ValueError("ar_coeff must lie in (-1, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.channels < 1 or (self.kind == "concept_drift" and self.channels < 2):
            raise ValueError("concept_drift needs >= 2 channels (driver + target)")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if len(self.change_points) != len(self.magnitudes):
            raise ValueError("change_points and magnitudes lengths differ")
        prev = -1
        for cp in self.change_points:
            if not 0 <= cp < self.length:
                raise ValueError(f"change point {cp} outside [0, {self.length})")
            if cp <= prev:
                raise ValueError("change_points must be strictly increasing")
            prev = cp


def load_csv(path: str) -> SeriesFrame:
    """Header row; first column is a timestamp/index and is dropped; the
    remaining columns must parse as reals. No reordering, no imputation."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise ValueError(f"{path}: need a timestamp column plus data columns")
    data_rows = rows[1:]
    if not data_rows:
        raise ValueError(f"{path}: no data rows (header only)")
    ncol = len(header)
    values = np.empty((len(data_rows), ncol - 1), dtype=np.float64)
    for r, row in enumerate(data_rows):
        if len(row) != ncol:
            raise ValueError(
                f"{path}: ragged row {r + 2}: {len(row)} cells, expected {ncol}")
        for c in range(1, ncol):
            try:
                values[r, c - 1] = float(row[c])
            except ValueError:
                raise ValueError(
                    f"{path}: unparsable cell at row {r + 2}, "
                    f"column {header[c]!r}: {row[c]!r}") from None
    return SeriesFrame(values, header[1:])


def write_csv(frame: SeriesFrame, path: str) -> None:
    """Inverse of load_csv; repr-precision floats, index as timestamp."""
    lines = [",".join(["timestamp"] + list(frame.columns))]
    for t in range(frame.T):
        lines.append(",".join([str(t)] + [repr(float(v)) for v in frame.values[t]]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def chrono_split(frame: SeriesFrame, spec: SplitSpec, L: int, k: int
                 ) -> Tuple[List[Sample], List[Sample], List[Sample]]:
    """Dense stride-1 sliding-window samples split chronologically.

    Region boundaries sit at floor(train*T) and floor((train+val)*T).
    A fitting sample (train or val) is dropped if its target rows would
    cross into a later region; lookbacks may borrow earlier rows. Test
    samples run to the end of the series in strict origin order.
    """
    T = frame.T
    min_len = L + k + 10
    if T < min_len:
        raise ValueError(f"series length {T} < required minimum {min_len} (L+k+10)")
    b1 = int(np.floor(spec.train_frac * T))
    b2 = int(np.floor((spec.train_frac + spec.val_frac) * T))

    def build(lo: int, hi: int) -> List[Sample]:
        out = []
        for o in range(lo, hi + 1):
            if o - L + 1 < 0:
                continue
            out.append(Sample(x=frame.values[o - L + 1:o + 1],
                              y=frame.values[o + 1:o + 1 + k], origin=o))
        return out

    train = build(L - 1, b1 - 1 - k)
    val = build(b1, b2 - 1 - k)
    test = build(b2, T - 1 - k)
    return train, val, test


def gen_mean_shift(spec: DriftSpec) -> SeriesFrame:
    """AR(1) around a piecewise-constant mean that jumps at change points.

    x_t = mu_t + ar_coeff * (x_{t-1} - mu_{t-1}) + noise_std * eta_t, with
    the same mean path in every channel and independent channel noise.
    """
    if spec.kind != "mean_shift":
        raise ValueError(f"spec.kind is {spec.kind!r}, expected 'mean_shift'")
    T, C = spec.length, spec.channels
    rng = np.random.default_rng(spec.seed)
    mu = np.zeros(T)
    for cp, mag in zip(spec.change_points, spec.magnitudes):
        mu[cp:] += mag
    eta = rng.standard_normal((T, C))
    x = np.empty((T, C))
    x[0] = mu[0] + spec.noise_std * eta[0]
    for t in range(1, T):
        x[t] = mu[t] + spec.ar_coeff * (x[t - 1] - mu[t - 1]) + spec.noise_std * eta[t]
    return SeriesFrame(x, [f"ch{c}" for c in range(C)])


def concept_coefficients(spec: DriftSpec, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """Lag-1 and lag-2 coefficient vectors over the drivers at time t.

    Base values (CONCEPT_A1, CONCEPT_A2) for every driver; each change
    point at or before t multiplies driver 0's lag-1 coefficient by
    -magnitude, so magnitude 1.0 is a pure sign flip.
    """
    n_drivers = spec.channels - 1
    a1 = np.full(n_drivers, CONCEPT_A1)
    a2 = np.full(n_drivers, CONCEPT_A2)
    for cp, mag in zip(spec.change_points, spec.magnitudes):
        if t >= cp:
            a1[0] *= -mag
    return a1, a2


def gen_concept_drift(spec: DriftSpec) -> SeriesFrame:
    """Driver channels are AR(1); the last channel is a lagged linear map of
    the drivers whose coefficients change at the change points:

        y_t = sum_c a1_c * x_c[t-1] + a2_c * x_c[t-2] + noise_std * eps_t

    The drivers are autocorrelated, so flipping a lag-1 coefficient flips
    the cross term in the target's autocovariance: the drift is visible in
    the target channel's own history, not just jointly.
    """
    if spec.kind != "concept_drift":
        raise ValueError(f"spec.kind is {spec.kind!r}, expected 'concept_drift'")
    T, C = spec.length, spec.channels
    n_drivers = C - 1
    rng = np.random.default_rng(spec.seed)
    innov = rng.standard_normal((T, n_drivers))
    eps = rng.standard_normal(T)
    drivers = np.empty((T, n_drivers))
    drivers[0] = innov[0]
    for t in range(1, T):
        drivers[t] = spec.ar_coeff * drivers[t - 1] + innov[t]
    target = np.empty(T)
    for t in range(T):
        if t < 2:
            target[t] = spec.noise_std * eps[t]
            continue
        a1, a2 = concept_coefficients(spec, t)
        target[t] = (a1 @ drivers[t - 1] + a2 @ drivers[t - 2]
                     + spec.noise_std * eps[t])
    values = np.column_stack([drivers, target])
    cols = [f"driver{c}" for c in range(n_drivers)] + ["target"]
    return SeriesFrame(values, cols)
