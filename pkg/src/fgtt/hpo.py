"""Gaussian-process Bayesian optimisation of FGTT hyperparameters.

Points are dicts ``{dim name: value}``. For the surrogate every point is
encoded into a unit box: continuous dims are scaled to [0, 1] (in log space
when flagged), ordinal dims by their option index, categorical dims one-hot.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from .errors import ConfigError, SurrogateError

CONTINUOUS, ORDINAL, CATEGORICAL = "continuous", "ordinal", "categorical"
N_CANDIDATES = 512
N_INIT = 10
LENGTHSCALES = (0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0)
NOISE_LEVELS = (1e-6, 1e-4, 1e-3, 1e-2, 1e-1)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    log: bool = False
    options: tuple = ()

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            if not self.lo < self.hi:
                raise ConfigError(f"{self.name}: need lo < hi")
            if self.log and self.lo <= 0:
                raise ConfigError(f"{self.name}: log-scaled bounds must be positive")
        elif self.kind in (ORDINAL, CATEGORICAL):
            if not self.options:
                raise ConfigError(f"{self.name}: options must be nonempty")
            object.__setattr__(self, "options", tuple(self.options))
        else:
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def width(self) -> int:
        return len(self.options) if self.kind == CATEGORICAL else 1

    def from_unit(self, u: float):
        if self.kind == CONTINUOUS:
            if self.log:
                return float(math.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo))))
            return float(self.lo + u * (self.hi - self.lo))
        return self.options[min(int(u * len(self.options)), len(self.options) - 1)]

    def encode(self, value) -> list[float]:
        if self.kind == CONTINUOUS:
            if self.log:
                return [(math.log(value) - math.log(self.lo)) / (math.log(self.hi) - math.log(self.lo))]
            return [(value - self.lo) / (self.hi - self.lo)]
        i = self.options.index(value)
        if self.kind == ORDINAL:
            return [i / (len(self.options) - 1) if len(self.options) > 1 else 0.0]
        out = [0.0] * len(self.options)
        out[i] = 1.0
        return out

    def contains(self, value) -> bool:
        if self.kind == CONTINUOUS:
            return isinstance(value, (int, float)) and self.lo <= value <= self.hi
        return value in self.options

    def parse(self, text: str):
        """Inverse of ``str(value)`` used by the history file."""
        if self.kind == CONTINUOUS:
            return float(text)
        for opt in self.options:
            if str(opt) == text:
                return opt
        raise ConfigError(f"{self.name}: {text!r} is not an option")

    def to_dict(self) -> dict:
        if self.kind == CONTINUOUS:
            return {"name": self.name, "kind": self.kind, "lo": self.lo, "hi": self.hi, "log": self.log}
        return {"name": self.name, "kind": self.kind, "options": list(self.options)}


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if not names or len(set(names)) != len(names):
            raise ConfigError("search space needs uniquely named dims")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def width(self) -> int:
        return sum(d.width for d in self.dims)

    def from_unit(self, u: Sequence[float]) -> dict:
        return {d.name: d.from_unit(x) for d, x in zip(self.dims, u)}

    def sample(self, rng: np.random.Generator) -> dict:
        return self.from_unit(rng.random(len(self.dims)))

    def encode(self, point: dict) -> np.ndarray:
        return np.array([x for d in self.dims for x in d.encode(point[d.name])])

    def contains(self, point: dict) -> bool:
        return set(point) == set(self.names) and all(d.contains(point[d.name]) for d in self.dims)

    def to_dict(self) -> dict:
        return {"dims": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchSpace":
        dims = []
        for d in doc["dims"]:
            d = dict(d)
            if "options" in d:
                d["options"] = tuple(d["options"])
            dims.append(Dim(**d))
        return cls(tuple(dims))


def heads_divide_hidden(point: dict) -> bool:
    """Attention heads must split the token width evenly."""
    return point["hidden_dim"] % point["n_heads"] == 0


def default_space() -> SearchSpace:
    """The FGTT search ranges: learning rate, optimiser and the architecture sizes."""
    return SearchSpace((
        Dim("learning_rate", CONTINUOUS, 0.001, 0.1, log=True),
        Dim("optimizer", CATEGORICAL, options=("Adam", "SGD", "RMSProp")),
        Dim("ffn_dim", ORDINAL, options=(16, 24, 32, 64)),
        Dim("hidden_dim", ORDINAL, options=(16, 24, 32, 64)),
        Dim("dropout_rate", ORDINAL, options=(0.1, 0.2, 0.3, 0.4)),
        Dim("n_heads", ORDINAL, options=(2, 3, 4, 6)),
        Dim("n_layers", ORDINAL, options=(2, 3, 4, 5, 6)),
    ))


@dataclass
class Trial:
    trial_id: int
    point: dict
    objective: float = float("nan")
    status: str = "ok"  # "ok" or "failed"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# Gaussian-process surrogate
# ---------------------------------------------------------------------------


def matern52(A: np.ndarray, B: np.ndarray, lengthscale: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2), 0.0)) / lengthscale
    s5 = math.sqrt(5.0) * d
    return (1.0 + s5 + 5.0 / 3.0 * d * d) * np.exp(-s5)


def _cholesky(K: np.ndarray):
    n = len(K)
    for jitter in JITTERS:
        try:
            return cho_factor(K + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise SurrogateError(f"kernel matrix not positive definite even with jitter {JITTERS[-1]}")


@dataclass
class GPSurrogate:
    X: np.ndarray
    y: np.ndarray
    lengthscale: float
    noise: float
    amplitude: float  # signal variance on the normalised scale
    y_mean: float
    y_scale: float
    log_marginal: float
    _chol: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of the latent objective."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
        Ks = matern52(Xs, self.X, self.lengthscale)
        mean = Ks @ self._alpha
        v = cho_solve(self._chol, Ks.T)
        var = self.amplitude * np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 0.0)
        return self.y_mean + self.y_scale * mean, self.y_scale * np.sqrt(var)


def fit_gp(X: np.ndarray, y: np.ndarray) -> GPSurrogate:
    """Fit lengthscale and noise by marginal likelihood over a fixed grid; amplitude is profiled out."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise SurrogateError("need at least two completed trials")
    n = len(y)
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    z = (y - y_mean) / y_scale
    best = None
    for ls in LENGTHSCALES:
        R = matern52(X, X, ls)
        for noise in NOISE_LEVELS:
            chol = _cholesky(R + noise * np.eye(n))
            a = cho_solve(chol, z)
            amp = max(float(z @ a) / n, 1e-12)
            logdet = 2.0 * np.log(np.diag(chol[0])).sum()
            lml = -0.5 * n * math.log(amp) - 0.5 * logdet - 0.5 * n * (1.0 + math.log(2 * math.pi))
            if best is None or lml > best[0]:
                best = (lml, ls, noise, amp, chol, a)
    lml, ls, noise, amp, chol, a = best
    return GPSurrogate(X, y, ls, noise, amp, y_mean, y_scale, lml, chol, a)


def gp_fit(trials: Sequence[Trial], space: SearchSpace) -> GPSurrogate:
    done = [t for t in trials if t.ok]
    if len(done) < 2:
        raise SurrogateError("need at least two completed trials")
    return fit_gp(np.array([space.encode(t.point) for t in done]), np.array([t.objective for t in done]))


def expected_improvement(mean, std, best: float) -> np.ndarray:
    """Maximisation EI; candidates with zero predictive spread score 0."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    ei = np.zeros_like(mean)
    pos = std > 0
    imp = mean[pos] - best
    zs = imp / std[pos]
    ei[pos] = imp * norm.cdf(zs) + std[pos] * norm.pdf(zs)
    return np.maximum(ei, 0.0)


def candidates(space: SearchSpace, rng: np.random.Generator, n: int = N_CANDIDATES) -> list[dict]:
    sobol = qmc.Sobol(d=len(space.dims), scramble=True, seed=rng)
    return [space.from_unit(u) for u in sobol.random(n)]


def propose(surrogate: GPSurrogate, space: SearchSpace, rng: np.random.Generator,
            best: float | None = None, feasible: Callable[[dict], bool] | None = None) -> dict:
    """EI argmax over seeded quasi-random candidates; the first candidate wins ties.

    ``feasible`` drops candidates before scoring.
    """
    cands = candidates(space, rng)
    if feasible is not None:
        cands = [c for c in cands if feasible(c)]
        if not cands:
            raise SurrogateError("no feasible candidate among the quasi-random draws")
    mean, std = surrogate.predict(np.array([space.encode(c) for c in cands]))
    incumbent = float(surrogate.y.max()) if best is None else best
    ei = expected_improvement(mean, std, incumbent)
    return cands[int(np.argmax(ei))]


# ---------------------------------------------------------------------------
# Optimisation loop
# ---------------------------------------------------------------------------


@dataclass
class OptimizeResult:
    trials: list[Trial]
    space: SearchSpace

    @property
    def history(self) -> list[Trial]:
        """Completed trials only."""
        return [t for t in self.trials if t.ok]

    @property
    def best(self) -> Trial:
        done = self.history
        if not done:
            raise SurrogateError("no trial completed")
        return max(done, key=lambda t: t.objective)  # max keeps the first of equal values

    def running_best(self) -> list[float]:
        return list(np.maximum.accumulate([t.objective for t in self.history]))

    def to_text(self) -> str:
        return history_text(self.trials, self.space)


def _evaluate(objective: Callable[[dict], float], point: dict, trial_id: int) -> Trial:
    try:
        value = float(objective(point))
    except (ArithmeticError, ValueError, RuntimeError):
        return Trial(trial_id, point, float("nan"), "failed")
    return Trial(trial_id, point, value, "ok" if math.isfinite(value) else "failed")


def _feasible_sample(space: SearchSpace, rng: np.random.Generator, feasible) -> dict:
    for _ in range(10_000):
        point = space.sample(rng)
        if feasible is None or feasible(point):
            return point
    raise SurrogateError("could not draw a feasible random point")


def optimize(objective: Callable[[dict], float], space: SearchSpace, budget: int, n_init: int = N_INIT,
             seed: int = 0, resume: Sequence[Trial] = (), log=None,
             feasible: Callable[[dict], bool] | None = None) -> OptimizeResult:
    """Random start followed by GP/EI proposals until ``budget`` trials have run.

    Trial ``t`` draws from its own generator seeded by ``(seed, t)``, so a run
    resumed from a saved history continues exactly as the uninterrupted run.
    An objective that raises or returns a non-finite value marks the trial
    failed; failed trials are kept in the history file but not fitted.
    Points rejected by ``feasible`` are never evaluated.
    """
    if not budget >= n_init >= 2:
        raise ConfigError(f"need budget >= n_init >= 2, got budget={budget}, n_init={n_init}")
    trials = list(resume)
    for t in range(len(trials), budget):
        rng = np.random.default_rng([seed, t])
        done = [tr for tr in trials if tr.ok]
        if t < n_init or len(done) < 2:
            point = _feasible_sample(space, rng, feasible)
        else:
            point = propose(gp_fit(done, space), space, rng, feasible=feasible)
        trial = _evaluate(objective, point, t)
        trials.append(trial)
        if log is not None:
            log(f"trial {t:3d} {trial.status} objective {trial.objective:.6g} {point}")
    return OptimizeResult(trials, space)


def random_search(objective: Callable[[dict], float], space: SearchSpace, budget: int, seed: int = 0,
                  feasible: Callable[[dict], bool] | None = None) -> OptimizeResult:
    return optimize(objective, space, budget, n_init=budget, seed=seed, feasible=feasible)


def history_text(trials: Sequence[Trial], space: SearchSpace) -> str:
    buf = io.StringIO()
    buf.write(",".join(["trial", "status", "objective"] + space.names) + "\n")
    for t in trials:
        # repr is the shortest text that reads back to the same float
        cells = [str(t.trial_id), t.status, repr(float(t.objective))]
        cells += [repr(v) if isinstance(v, float) else str(v) for v in (t.point[n] for n in space.names)]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def load_history(path, space: SearchSpace) -> list[Trial]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = {"trial", "status", "objective", *space.names} - set(frame.columns)
    if missing:
        raise ConfigError(f"history file lacks columns {sorted(missing)}")
    trials = []
    for _, row in frame.iterrows():
        point = {d.name: d.parse(row[d.name]) for d in space.dims}
        trials.append(Trial(int(row["trial"]), point, float(row["objective"]), row["status"]))
    return trials


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

BRANIN_MIN = 0.397887357729738


def branin(x1: float, x2: float) -> float:
    b = 5.1 / (4 * math.pi**2)
    c = 5 / math.pi
    t = 1 / (8 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


def branin_space() -> SearchSpace:
    return SearchSpace((Dim("x1", CONTINUOUS, -5.0, 10.0), Dim("x2", CONTINUOUS, 0.0, 15.0)))


def negative_branin(point: dict) -> float:
    return -branin(point["x1"], point["x2"])
