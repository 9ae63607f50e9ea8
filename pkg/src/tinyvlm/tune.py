"""Hyperparameter search: GP surrogate with expected-improvement acquisition.

The search space is a box (learning rate and weight decay are expected in
log10 space). Five quasi-random probes seed the surrogate, then each
round fits a squared-exponential GP (length scale picked by marginal
likelihood on a small grid, observation noise 1e-6) and evaluates EI on a
fixed 256-point candidate grid; exact ties resolve to the first
candidate. Non-finite objective values are recorded as failures with a
penalty of (max observed + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SQRT2 = math.sqrt(2.0)
_LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
_NOISE = 1e-6
_N_INITIAL = 5
_N_CANDIDATES = 256
_PRIMES = (2, 3, 5, 7, 11, 13)


@dataclass(frozen=True)
class TuneSpace:
    """Box bounds per hyperparameter (log10 units for lr / weight decay)."""

    names: tuple[str, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.lows) == len(self.highs)):
            raise ValueError("names, lows and highs must have equal length")
        if any(h <= l for l, h in zip(self.lows, self.highs)):
            raise ValueError("every upper bound must exceed its lower bound")

    @property
    def dim(self) -> int:
        return len(self.names)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return lo + unit * (hi - lo)


@dataclass
class TuneState:
    space: TuneSpace
    points: list[np.ndarray] = field(default_factory=list)     # original scale
    values: list[float] = field(default_factory=list)          # after penalties
    raw_values: list[float] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)
    length_scales: list[float] = field(default_factory=list)
    incumbent_trace: list[float] = field(default_factory=list)
    budget: int = 0
    seed: int = 0

    @property
    def incumbent_index(self) -> int:
        return int(np.argmin(self.values))

    @property
    def best_point(self) -> np.ndarray:
        return self.points[self.incumbent_index]

    @property
    def best_value(self) -> float:
        return self.values[self.incumbent_index]

    def to_dict(self) -> dict:
        return {
            "space": {"names": list(self.space.names),
                       "lows": list(self.space.lows), "highs": list(self.space.highs)},
            "points": [list(map(float, p)) for p in self.points],
            "values": self.values, "raw_values": self.raw_values,
            "failures": self.failures, "length_scales": self.length_scales,
            "incumbent_trace": self.incumbent_trace,
            "budget": self.budget, "seed": self.seed,
            "best": {"point": list(map(float, self.best_point)),
                      "value": self.best_value,
                      "index": self.incumbent_index},
        }


def halton(n: int, dim: int, skip: int = 1) -> np.ndarray:
    """First n points of the Halton low-discrepancy sequence in [0,1)^dim."""
    out = np.empty((n, dim))
    for d in range(dim):
        base = _PRIMES[d % len(_PRIMES)]
        for i in range(n):
            index, f, value = i + skip, 1.0, 0.0
            while index > 0:
                f /= base
                value += f * (index % base)
                index //= base
            out[i, d] = value
    return out


def candidate_grid(dim: int) -> np.ndarray:
    """Deterministic 256-point acquisition grid on the unit box."""
    if dim == 1:
        return np.linspace(0.0, 1.0, _N_CANDIDATES)[:, None]
    side = round(_N_CANDIDATES ** (1.0 / dim))
    if side ** dim == _N_CANDIDATES:
        axes = np.meshgrid(*[np.linspace(0.0, 1.0, side)] * dim, indexing="ij")
        return np.stack([a.reshape(-1) for a in axes], axis=1)
    return halton(_N_CANDIDATES, dim)


def _kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-0.5 * d2 / (length_scale ** 2))


def _fit_gp(x: np.ndarray, y: np.ndarray):
    """Pick the length scale by max marginal likelihood; return a predictor."""
    n = len(y)
    best = None
    for ls in _LENGTH_SCALES:
        k = _kernel(x, x, ls) + _NOISE * np.eye(n)
        try:
            chol = np.linalg.cholesky(k)
        except np.linalg.LinAlgError:
            continue
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
        lml = (-0.5 * float(y @ alpha)
               - float(np.log(np.diag(chol)).sum())
               - 0.5 * n * math.log(2 * math.pi))
        if best is None or lml > best[0]:
            best = (lml, ls, chol, alpha)
    if best is None:
        raise RuntimeError("GP fit failed for every length scale")
    _, ls, chol, alpha = best

    def predict(q: np.ndarray):
        ks = _kernel(q, x, ls)
        mu = ks @ alpha
        v = np.linalg.solve(chol, ks.T)
        var = np.clip(1.0 - (v * v).sum(axis=0), 1e-12, None)
        return mu, np.sqrt(var)

    return predict, ls


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / _SQRT2))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """EI for minimization; zero where the posterior is (numerically) certain."""
    gap = best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gap / sigma, 0.0)
    ei = gap * _norm_cdf(z) + sigma * _norm_pdf(z)
    return np.where(sigma > 1e-9, ei, 0.0)


def bayes_opt_tune(objective, space: TuneSpace, budget: int, seed: int):
    """Minimize a black-box objective over the space; returns (best, state)."""
    if budget < 5:
        raise ValueError(f"budget must be >= {_N_INITIAL}, got {budget}")
    rng = np.random.default_rng(seed)
    state = TuneState(space=space, budget=budget, seed=seed)

    # seeded Cranley-Patterson rotation of the Halton sequence
    shift = rng.random(space.dim)
    unit_points = [(p + shift) % 1.0 for p in halton(_N_INITIAL, space.dim)]
    candidates = candidate_grid(space.dim)

    def record(unit: np.ndarray) -> None:
        point = space.denormalize(unit)
        raw = float(objective(point))
        if math.isfinite(raw):
            value = raw
        else:
            finite = [v for v in state.values if math.isfinite(v)]
            value = (max(finite) + 1.0) if finite else 1.0
            state.failures.append(len(state.points))
        state.points.append(point)
        state.raw_values.append(raw)
        state.values.append(value)
        state.incumbent_trace.append(min(state.values))
        state._units.append(unit)

    state._units = []  # normalized copies, internal to the loop
    for unit in unit_points:
        record(unit)

    for _ in range(budget - _N_INITIAL):
        x = np.array(state._units)
        y = np.array(state.values)
        mean, std = float(y.mean()), float(y.std())
        yz = (y - mean) / std if std > 1e-12 else np.zeros_like(y)
        predict, ls = _fit_gp(x, yz)
        state.length_scales.append(ls)
        mu, sigma = predict(candidates)
        ei = expected_improvement(mu, sigma, float(yz.min()))
        record(candidates[int(np.argmax(ei))])

    del state._units
    return state.best_point, state
