"""Synthetic crash records calibrated to the published marginals.

Features are drawn independently: categorical features from the published
category frequencies (renormalised where they do not sum to 100%), numeric
features from a truncated normal on [min, max] whose parent mean/scale are
solved so the truncated moments hit the published mean/std. Features whose
spread a truncated normal cannot reach get a point mass at the lower bound.

The crash type is drawn from a softmax over class logits that are a fixed
linear function of two Event features (Veh1_maneuver, Crash_location) and two
Traffic features (standardised Hourly_avg_speed and Hourly_volume), scaled
by ``signal_strength``. Class intercepts are calibrated so the label marginal
equals ``class_mix``. This mechanism is invented; it is NOT the joint
structure of any real crash data.
"""

from __future__ import annotations

import functools
import io
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .data import Dataset
from .errors import ConfigError, ContractError
from .schema import CATEGORY_FREQUENCIES, DATE_KEY, NUMERIC_STATS, FeatureSchema, default_schema

DEFAULT_SIGNAL = 2.0
CALIBRATION_SEED = 20_240_613
CALIBRATION_ROWS = 200_000

# class order: Rear-end, Sideswipe, Angle
MANEUVER_WEIGHTS = {
    "Straight": (1.0, -0.5, -0.5),
    "Changing Lanes/Passing": (-1.0, 1.5, -0.5),
    "Negotiating a Curve": (0.0, 0.5, -0.5),
    "Turning (left, right, u-turn)": (-1.0, -0.5, 1.5),
    "Other": (0.0, 0.0, 0.0),
    "Backing": (0.5, 0.0, -0.5),
    "Stopped/Parked": (0.5, 0.0, -0.5),
    "Entering/Leaving Parking/Driveway": (-0.5, -0.5, 1.0),
}
LOCATION_WEIGHTS = {
    "On Roadway - Non-Intersection": (0.25, 0.25, -0.5),
    "On Roadway - Crossing/Intersection/Crosswalk/Roundabout": (-0.75, -0.5, 1.25),
    "Entrance/Exit Ramp": (0.25, 0.25, -0.5),
    "Private Property/Off Roadway": (-0.25, -0.25, 0.5),
    "Shoulder/Median/Gore": (0.0, 0.25, -0.25),
}
SPEED_WEIGHTS = (-0.6, 0.3, 0.3)
VOLUME_WEIGHTS = (0.4, 0.0, -0.4)

MISSING_FEATURES = ("Precip_accum", "Hourly_avg_speed")


@dataclass
class GeneratorConfig:
    n_rows: int = 10_000
    seed: int = 0
    class_mix: tuple[float, float, float] = (0.58, 0.29, 0.13)
    signal_strength: float = DEFAULT_SIGNAL
    missing_rate: dict[str, float] = field(default_factory=lambda: {f: 0.05 for f in MISSING_FEATURES})

    def __post_init__(self):
        self.class_mix = tuple(float(p) for p in self.class_mix)
        if self.n_rows < 1:
            raise ConfigError(f"n_rows must be positive, got {self.n_rows}")
        if len(self.class_mix) != 3 or min(self.class_mix) <= 0 or abs(sum(self.class_mix) - 1) > 1e-9:
            raise ConfigError(f"class_mix must be 3 positive probabilities summing to 1, got {self.class_mix}")
        if not self.signal_strength >= 0:
            raise ConfigError(f"signal_strength must be >= 0, got {self.signal_strength}")
        if isinstance(self.missing_rate, (int, float)):
            self.missing_rate = {f: float(self.missing_rate) for f in MISSING_FEATURES}
        for name, rate in self.missing_rate.items():
            if name not in MISSING_FEATURES:
                raise ConfigError(f"missingness is only generated for {MISSING_FEATURES}, not {name!r}")
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"missing rate for {name} must lie in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_mix"] = list(self.class_mix)
        return d


# ---------------------------------------------------------------------------
# Numeric marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumericSampler:
    """Mixture of a point mass at ``lo`` (weight ``zero_mass``) and a truncated normal."""

    loc: float
    scale: float
    lo: float
    hi: float
    zero_mass: float = 0.0

    @property
    def _ab(self):
        return (self.lo - self.loc) / self.scale, (self.hi - self.loc) / self.scale

    def moments(self) -> tuple[float, float]:
        a, b = self._ab
        m, v = stats.truncnorm.stats(a, b, loc=self.loc, scale=self.scale, moments="mv")
        w = 1.0 - self.zero_mass
        mean = w * m + self.zero_mass * self.lo
        second = w * (v + m * m) + self.zero_mass * self.lo**2
        return float(mean), float(np.sqrt(max(second - mean * mean, 0.0)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, b = self._ab
        x = stats.truncnorm.rvs(a, b, loc=self.loc, scale=self.scale, size=n, random_state=rng)
        if self.zero_mass > 0:
            x = np.where(rng.random(n) < self.zero_mass, self.lo, x)
        return np.clip(x, self.lo, self.hi)


def _fit_sampler(mean: float, std: float, lo: float, hi: float) -> NumericSampler:
    def plain(p):
        s = NumericSampler(mean + std * p[0], std * np.exp(p[1]), lo, hi)
        m, sd = s.moments()
        return [(m - mean) / std, (sd - std) / std]

    fit = optimize.least_squares(plain, [0.0, 0.0], bounds=([-30, -5], [30, 5]))
    if np.max(np.abs(fit.fun)) < 1e-6:
        return NumericSampler(mean + std * fit.x[0], std * np.exp(fit.x[1]), lo, hi)

    if mean - lo < std:
        # half-normal from lo plus a point mass at lo
        def zero_inflated(p):
            s = NumericSampler(lo, std * np.exp(p[0]), lo, hi, 1.0 / (1.0 + np.exp(-p[1])))
            m, sd = s.moments()
            return [(m - mean) / std, (sd - std) / std]

        zfit = optimize.least_squares(zero_inflated, [0.0, 0.0], bounds=([-5, -10], [5, 10]))
        if np.max(np.abs(zfit.fun)) < np.max(np.abs(fit.fun)):
            return NumericSampler(lo, std * np.exp(zfit.x[0]), lo, hi, float(1.0 / (1.0 + np.exp(-zfit.x[1]))))
    return NumericSampler(mean + std * fit.x[0], std * np.exp(fit.x[1]), lo, hi)


@functools.lru_cache(maxsize=None)
def numeric_samplers() -> dict[str, NumericSampler]:
    return {name: _fit_sampler(*vals) for name, vals in NUMERIC_STATS.items()}


def category_probabilities(feature: str) -> dict[str, float]:
    freqs = CATEGORY_FREQUENCIES[feature]
    total = sum(freqs.values())
    return {k: v / total for k, v in freqs.items()}


# ---------------------------------------------------------------------------
# Planted label mechanism
# ---------------------------------------------------------------------------


def _signal(maneuver, location, speed, volume) -> np.ndarray:
    man = np.array([MANEUVER_WEIGHTS[m] for m in CATEGORY_FREQUENCIES["Veh1_maneuver"]])
    loc = np.array([LOCATION_WEIGHTS[c] for c in CATEGORY_FREQUENCIES["Crash_location"]])
    man_idx = pd.Categorical(maneuver, categories=list(CATEGORY_FREQUENCIES["Veh1_maneuver"])).codes
    loc_idx = pd.Categorical(location, categories=list(CATEGORY_FREQUENCIES["Crash_location"])).codes
    if (man_idx < 0).any() or (loc_idx < 0).any():
        raise ContractError("planted mechanism needs observed Veh1_maneuver and Crash_location")
    zs = (np.asarray(speed, dtype=np.float64) - NUMERIC_STATS["Hourly_avg_speed"][0]) / NUMERIC_STATS["Hourly_avg_speed"][1]
    zv = (np.asarray(volume, dtype=np.float64) - NUMERIC_STATS["Hourly_volume"][0]) / NUMERIC_STATS["Hourly_volume"][1]
    return man[man_idx] + loc[loc_idx] + np.outer(zs, SPEED_WEIGHTS) + np.outer(zv, VOLUME_WEIGHTS)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _draw_features(n: int, rng: np.random.Generator, schema: FeatureSchema) -> pd.DataFrame:
    samplers = numeric_samplers()
    cols = {}
    for f in schema.features:
        if f.is_numeric:
            cols[f.name] = samplers[f.name].sample(n, rng)
        else:
            probs = category_probabilities(f.name)
            cats = np.array(list(probs), dtype=object)
            cols[f.name] = cats[rng.choice(len(cats), size=n, p=np.array(list(probs.values())))]
    return pd.DataFrame(cols)


@functools.lru_cache(maxsize=32)
def class_intercepts(signal_strength: float, class_mix: tuple[float, ...]) -> np.ndarray:
    """Intercepts making the expected label marginal equal ``class_mix``.

    Solved by fixed-point iteration on a fixed reference sample, so the result
    depends only on the arguments.
    """
    rng = np.random.default_rng(CALIBRATION_SEED)
    ref = _draw_features(CALIBRATION_ROWS, rng, default_schema())
    base = signal_strength * _signal(ref["Veh1_maneuver"], ref["Crash_location"],
                                     ref["Hourly_avg_speed"], ref["Hourly_volume"])
    mix = np.asarray(class_mix)
    b = np.log(mix)
    for _ in range(200):
        marg = _softmax(base + b).mean(axis=0)
        step = np.log(mix / marg)
        b = b + step
        if np.max(np.abs(step)) < 1e-12:
            break
    return b - b[0]


def planted_probabilities(frame: pd.DataFrame, config: GeneratorConfig) -> np.ndarray:
    """True P(class | features) under the planted mechanism (needs unmasked features)."""
    z = config.signal_strength * _signal(frame["Veh1_maneuver"], frame["Crash_location"],
                                         frame["Hourly_avg_speed"], frame["Hourly_volume"])
    return _softmax(z + class_intercepts(float(config.signal_strength), tuple(config.class_mix)))


def bayes_confusion(probs: np.ndarray) -> np.ndarray:
    """Expected confusion matrix of the argmax-posterior rule (rows true, columns predicted)."""
    pred = probs.argmax(axis=1)
    k = probs.shape[1]
    conf = np.zeros((k, k))
    for j in range(k):
        conf[:, j] = probs[pred == j].sum(axis=0)
    return conf


def bayes_ceiling(probs: np.ndarray) -> dict[str, float]:
    """Expected accuracy and weighted F1 of the Bayes rule, averaged over the given rows."""
    from .metrics import metrics_from_confusion

    m = metrics_from_confusion(bayes_confusion(probs))
    return {"accuracy": m.accuracy, "weighted_f1": m.weighted_f1, "weighted_precision": m.weighted_precision,
            "weighted_recall": m.weighted_recall}


@dataclass
class SyntheticResult:
    dataset: Dataset
    probabilities: np.ndarray  # planted posteriors on the unmasked features
    config: GeneratorConfig

    def ceiling(self) -> dict[str, float]:
        return bayes_ceiling(self.probabilities)

    def manifest(self) -> dict:
        return {
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "planted_mechanism": {
                "description": (
                    "SYNTHETIC: crash type ~ softmax(intercept + signal_strength * (W_maneuver[Veh1_maneuver]"
                    " + W_location[Crash_location] + w_speed * z(Hourly_avg_speed) + w_volume * z(Hourly_volume))),"
                    " z standardised with the published mean/std. Features are mutually independent."
                    " Not an empirical finding."
                ),
                "maneuver_weights": {k: list(v) for k, v in MANEUVER_WEIGHTS.items()},
                "location_weights": {k: list(v) for k, v in LOCATION_WEIGHTS.items()},
                "speed_weights": list(SPEED_WEIGHTS),
                "volume_weights": list(VOLUME_WEIGHTS),
                "intercepts": class_intercepts(float(self.config.signal_strength),
                                               tuple(self.config.class_mix)).tolist(),
            },
            "bayes_ceiling": self.ceiling(),
        }


def generate_with_truth(config: GeneratorConfig, schema: FeatureSchema | None = None) -> SyntheticResult:
    schema = schema or default_schema()
    if schema.fingerprint() != default_schema().fingerprint():
        raise ContractError("the generator only supports the default 33-feature schema")
    rng = np.random.default_rng(config.seed)
    n = config.n_rows
    frame = _draw_features(n, rng, schema)
    frame[DATE_KEY] = np.array([f"D{d:03d}" for d in rng.integers(1, 366, size=n)], dtype=object)
    probs = planted_probabilities(frame, config)
    cum = probs.cumsum(axis=1)
    u = rng.random(n)
    labels = np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1)
    for name in MISSING_FEATURES:
        rate = config.missing_rate.get(name, 0.0)
        mask = rng.random(n) < rate
        frame.loc[mask, name] = np.nan
    return SyntheticResult(Dataset(schema, frame, labels), probs, config)


def generate(config: GeneratorConfig, schema: FeatureSchema | None = None) -> Dataset:
    return generate_with_truth(config, schema).dataset


def marginal_report(data: Dataset) -> pd.DataFrame:
    """Long-form summary: numeric rows carry mean/std/min/max, categorical rows a frequency."""
    if len(data) == 0:
        raise ContractError("marginal_report needs a nonempty dataset")
    rows = []
    for f in data.schema.features:
        col = data.frame[f.name]
        if f.is_numeric:
            x = col.dropna().to_numpy(dtype=np.float64)
            for stat, val in (("mean", x.mean()), ("std", x.std()), ("min", x.min()), ("max", x.max())):
                rows.append({"feature": f.name, "kind": "numeric", "statistic": stat, "value": float(val)})
        else:
            counts = col.value_counts()
            n = int(col.notna().sum())
            for cat in f.categories:
                rows.append({"feature": f.name, "kind": "categorical", "statistic": cat,
                             "value": float(counts.get(cat, 0)) / n if n else 0.0})
    return pd.DataFrame(rows, columns=["feature", "kind", "statistic", "value"])


def marginal_report_text(data: Dataset) -> str:
    buf = io.StringIO()
    marginal_report(data).to_csv(buf, index=False, float_format="%.9g")
    return buf.getvalue()
