"""Trip data: CSV loading, cleaning and window splitting, kinematic
derivation, and a synthetic four-regime generator.

A trip is a timestamped speed profile (position optional, acceleration and
jerk derived when the file does not carry them). Usable trips are 198 or 199
steps long; each one is truncated to 198 and halved into two 99-step feature
matrices with columns speed, accel, jerk.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (EmptyInput, LengthMismatch, NonMonotonicTime,
                     SchemaError, TooShort)
from .gaf import FeatureMatrix

TRIP_STEPS = 198
WINDOW_STEPS = 99
FEATURE_NAMES = ("speed", "accel", "jerk")


@dataclass
class Trip:
    trip_id: str
    t: np.ndarray
    speed: np.ndarray
    position: np.ndarray = None
    accel: np.ndarray = None
    jerk: np.ndarray = None

    def __len__(self):
        return len(self.speed)


@dataclass
class Sample:
    trip_id: str
    matrix: FeatureMatrix
    label: int = None


# -- CSV I/O -------------------------------------------------------------------

REQUIRED_COLUMNS = ("trip_id", "t", "speed")
OPTIONAL_COLUMNS = ("position", "accel", "jerk")


def load_trips(path):
    """Parse a trip CSV; rows grouped by trip_id in order of appearance."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInput(f"{path} is empty")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path} is missing required columns: {', '.join(missing)}")
        present_optional = [c for c in OPTIONAL_COLUMNS if c in reader.fieldnames]
        rows = {}
        for line_no, row in enumerate(reader, start=2):
            trip_id = row.get("trip_id")
            if trip_id is None or any(row.get(c) in (None, "") for c in REQUIRED_COLUMNS):
                raise SchemaError(f"{path}:{line_no}: incomplete row")
            try:
                values = {c: float(row[c]) for c in ("t", "speed")}
                for c in present_optional:
                    cell = row.get(c)
                    values[c] = float(cell) if cell not in (None, "") else None
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from exc
            rows.setdefault(trip_id, []).append(values)
    if not rows:
        raise EmptyInput(f"{path} has a header but no rows")

    trips = []
    for trip_id, entries in rows.items():
        t = np.array([e["t"] for e in entries])
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTime(f"trip {trip_id!r}: timestamps must strictly increase")
        trip = Trip(trip_id=trip_id, t=t,
                    speed=np.array([e["speed"] for e in entries]))
        for c in present_optional:
            column = [e[c] for e in entries]
            if all(v is not None for v in column):
                setattr(trip, c, np.array(column))
        trips.append(trip)
    return trips


def write_trips_csv(path, trips):
    with open(path, "w", newline="") as fh:
        fh.write("trip_id,t,position,speed\n")
        for trip in trips:
            pos = trip.position
            if pos is None:
                pos = np.zeros(len(trip))
            for i in range(len(trip)):
                # plain-float repr is the shortest exact round-trip form
                fh.write(f"{trip.trip_id},{float(trip.t[i])!r},"
                         f"{float(pos[i])!r},{float(trip.speed[i])!r}\n")


def write_labels_csv(path, samples):
    with open(path, "w", newline="") as fh:
        fh.write("trip_id,label\n")
        for s in samples:
            fh.write(f"{s.trip_id},{s.label}\n")


def read_labels_csv(path):
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInput(f"{path} is empty")
        for c in ("trip_id", "label"):
            if c not in reader.fieldnames:
                raise SchemaError(f"{path} is missing required column {c!r}")
        for line_no, row in enumerate(reader, start=2):
            try:
                labels[row["trip_id"]] = int(row["label"])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from exc
    if not labels:
        raise EmptyInput(f"{path} has a header but no rows")
    return labels


def attach_labels(samples, labels):
    """Label samples in place; every sample must be covered."""
    missing = [s.trip_id for s in samples if s.trip_id not in labels]
    if missing:
        raise SchemaError(f"no label for {len(missing)} samples, first {missing[0]!r}")
    for s in samples:
        s.label = labels[s.trip_id]
    return samples


# -- kinematics ------------------------------------------------------------------

def _forward_diff(values, dt):
    out = np.empty_like(values)
    out[:-1] = (values[1:] - values[:-1]) / dt
    out[-1] = out[-2]
    return out


def derive_kinematics(speed, dt):
    """Forward differences with the last value repeated: speed -> accel, jerk."""
    speed = np.asarray(speed, dtype=np.float64)
    if speed.size < 3:
        raise TooShort(f"need at least 3 speed samples, got {speed.size}")
    accel = _forward_diff(speed, dt)
    jerk = _forward_diff(accel, dt)
    return accel, jerk


def is_kinematically_consistent(trip: Trip, tol=0.5) -> bool:
    """Loose sanity flag: position integrates speed, accel differentiates it."""
    dt = float(np.median(np.diff(trip.t)))
    if trip.position is not None and len(trip) > 1:
        rebuilt = trip.position[0] + np.concatenate(
            ([0.0], np.cumsum(trip.speed[:-1]) * dt))
        if np.max(np.abs(rebuilt - trip.position)) > tol * len(trip) * dt:
            return False
    if trip.accel is not None and len(trip) > 2:
        derived = _forward_diff(trip.speed, dt)
        if np.max(np.abs(derived[:-1] - trip.accel[:-1])) > tol / dt * 0.1 + 1e-6:
            return False
    return True


# -- cleaning and window splitting ------------------------------------------------

def clean_and_split(trips):
    """Keep 198/199-step trips with some positive speed, truncate to 198, and
    halve each into two 99-step feature matrices (ids suffixed _a and _b).

    Acceleration and jerk are derived on the full trip before halving, so the
    second window keeps correct differences at its left edge.
    """
    samples = []
    for trip in trips:
        speed = np.asarray(trip.speed, dtype=np.float64)
        if np.all(speed <= 0.0):
            continue
        if len(speed) not in (TRIP_STEPS, TRIP_STEPS + 1):
            continue
        speed = speed[:TRIP_STEPS]
        t = np.asarray(trip.t, dtype=np.float64)[:TRIP_STEPS]
        dt = float(np.median(np.diff(t)))
        if trip.accel is not None:
            accel = np.asarray(trip.accel, dtype=np.float64)[:TRIP_STEPS]
        else:
            accel = _forward_diff(speed, dt)
        if trip.jerk is not None:
            jerk = np.asarray(trip.jerk, dtype=np.float64)[:TRIP_STEPS]
        else:
            jerk = _forward_diff(accel, dt)
        for sl, suffix in ((slice(0, WINDOW_STEPS), "_a"),
                           (slice(WINDOW_STEPS, TRIP_STEPS), "_b")):
            matrix = FeatureMatrix(
                values=np.column_stack([speed[sl], accel[sl], jerk[sl]]),
                feature_names=FEATURE_NAMES, dt=dt)
            samples.append(Sample(trip_id=trip.trip_id + suffix, matrix=matrix))
    return samples


# -- synthetic regimes --------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    """Generator knobs for one driving style.

    accel_std and accel_corr shape a slow AR(1) acceleration component whose
    increments set the jerk dispersion; end_ratio fixes the accel/speed
    direction each 99-step window steers into over its final second.
    """
    name: str
    mean_speed: float
    accel_std: float
    accel_corr: float
    end_ratio: float
    end_noise: float


# accel_std and accel_corr pair up so that the smooth component's increment
# dispersion std*sqrt(2(1-corr))/dt lands on the per-style jerk scale
# (0.43, 0.39, 0.19, 0.28) while the speed equilibrium shift std/kappa stays
# small enough to keep every profile clear of zero
DEFAULT_REGIMES = (
    Regime("aggressive", mean_speed=7.05, accel_std=0.50, accel_corr=0.99630,
           end_ratio=0.38, end_noise=0.034),
    Regime("assertive", mean_speed=6.66, accel_std=0.45, accel_corr=0.99625,
           end_ratio=-0.38, end_noise=0.034),
    Regime("conservative", mean_speed=2.91, accel_std=0.35, accel_corr=0.99853,
           end_ratio=-0.13, end_noise=0.030),
    Regime("moderate", mean_speed=4.25, accel_std=0.40, accel_corr=0.99755,
           end_ratio=0.13, end_noise=0.030),
)

_DT = 0.1
_KAPPA = 1.0       # mean-reversion strength of speed toward the regime mean
_RAMP_BLEND = 9    # increments easing from cruise dynamics into the target
_RAMP_RELEASE = 8  # increments easing back out after a window boundary
_BLEND_WEIGHTS = np.arange(1, _RAMP_BLEND + 1) / (_RAMP_BLEND + 1.0)


def _ramp_v_end(v0, s_slice, mean_speed, pins_inside, c):
    """Final window speed if the blend-and-pin tail is driven by target c."""
    v = v0
    for w, s in zip(_BLEND_WEIGHTS, s_slice):
        v += _DT * ((1.0 - w) * (_KAPPA * (mean_speed - v) + s) + w * c)
    return v + _DT * pins_inside * c


def _solve_target(v0, s_slice, regime, eta, pins_inside):
    """Pinned acceleration c with c = ratio * v_end exactly.

    v_end is affine in c (the recurrence is linear), so two tail simulations
    pin down the line and the fixed point is closed form.
    """
    ratio = regime.end_ratio + regime.end_noise * eta
    at_zero = _ramp_v_end(v0, s_slice, regime.mean_speed, pins_inside, 0.0)
    at_one = _ramp_v_end(v0, s_slice, regime.mean_speed, pins_inside, 1.0)
    gain = at_one - at_zero
    return ratio * at_zero / (1.0 - ratio * gain)


def synth_trip(regime: Regime, rng, trip_id):
    """One 198-step trip: mean-reverting speed with smooth acceleration noise,
    each 99-step half steered into the regime's endpoint direction.

    Window A covers rows 0..98, window B rows 99..197. The last blend lands
    the final in-window acceleration on target exactly, and the pinned
    increments right after each window boundary keep the forward-differenced
    jerk at zero on the window's final row.
    """
    n = TRIP_STEPS
    sigma = regime.accel_std
    rho = regime.accel_corr
    innov = sigma * np.sqrt(1.0 - rho * rho)

    v = np.empty(n)
    v[0] = max(0.3, regime.mean_speed + 0.6 * rng.standard_normal())
    xi = rng.standard_normal(n - 1)
    eta_a = rng.standard_normal()
    eta_b = rng.standard_normal()
    s_arr = np.empty(n - 1)
    s_val = sigma * rng.standard_normal()
    for i in range(n - 1):
        s_arr[i] = s_val
        s_val = rho * s_val + innov * xi[i]

    # increment i turns row i into row i+1
    a_blend, a_pin_from, a_pin_to = 88, 97, 99   # v[98] set by increments <= 97
    b_blend, b_pin_from, b_pin_to = 186, 195, 196
    release_until = a_pin_to + _RAMP_RELEASE

    target_a = target_b = None
    for i in range(n - 1):
        cruise = _KAPPA * (regime.mean_speed - v[i]) + s_arr[i]
        if a_blend <= i < a_pin_from:
            if target_a is None:
                target_a = _solve_target(v[i], s_arr[a_blend:a_pin_from],
                                         regime, eta_a, pins_inside=1)
            w = _BLEND_WEIGHTS[i - a_blend]
            a = (1.0 - w) * cruise + w * target_a
        elif a_pin_from <= i <= a_pin_to:
            a = target_a
        elif a_pin_to < i <= release_until:
            u = (i - a_pin_to) / (_RAMP_RELEASE + 1.0)
            a = (1.0 - u) * target_a + u * cruise
        elif b_blend <= i < b_pin_from:
            if target_b is None:
                target_b = _solve_target(v[i], s_arr[b_blend:b_pin_from],
                                         regime, eta_b, pins_inside=2)
            w = _BLEND_WEIGHTS[i - b_blend]
            a = (1.0 - w) * cruise + w * target_b
        elif b_pin_from <= i <= b_pin_to:
            a = target_b
        else:
            a = cruise
        v[i + 1] = max(0.0, v[i] + _DT * a)

    t = np.arange(n) * _DT
    position = np.concatenate(([0.0], np.cumsum(v[:-1]) * _DT))
    return Trip(trip_id=trip_id, t=t, speed=v, position=position)


def synth_generate(counts=(250, 250, 250, 250), seed=0, regimes=DEFAULT_REGIMES):
    """Synthesize labeled trips; returns (trips, labeled window samples).

    counts are trips per regime; each trip halves into two windows carrying
    the regime's label, so the sample list is twice as long.
    """
    if len(counts) != len(regimes):
        raise LengthMismatch(f"{len(counts)} counts for {len(regimes)} regimes")
    rng = np.random.default_rng(seed)
    trips = []
    trip_labels = {}
    idx = 0
    for label, (count, regime) in enumerate(zip(counts, regimes)):
        for _ in range(count):
            trip = synth_trip(regime, rng, f"synth{idx:05d}")
            trips.append(trip)
            trip_labels[trip.trip_id] = label
            idx += 1
    samples = clean_and_split(trips)
    for s in samples:
        s.label = trip_labels[s.trip_id[:-2]]
    return trips, samples
