"""Domain types and synthetic data-generating processes with exact oracles.

Every synthetic family draws contexts from Uniform[0, 1]^d and lets the reward
model, the action mechanism and the policies of interest depend on the first
coordinate only, so values, regrets and CDFs reduce to one-dimensional
integrals that :func:`integrate_1d` evaluates to near machine precision.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import optimize, special

__all__ = [
    "ActionSet",
    "ConfigurationError",
    "Dataset",
    "DgpSpec",
    "Observation",
    "Policy",
    "PolicyClass",
    "Propensity",
    "RngStream",
    "UnsupportedError",
    "context_quadrature",
    "gamma_true",
    "integrate_1d",
    "margin_dgp",
    "policy_distance",
    "optimal_value",
    "regret_true",
    "sample_iid",
    "value_true",
]


class ConfigurationError(ValueError):
    """Invalid specification, plan or experiment configuration.

    ``path`` names the offending field (dotted, e.g. ``"dgp.alpha"``) when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class UnsupportedError(ValueError):
    """Operation is not defined for the given specification."""


# ---------------------------------------------------------------------------
# Actions, observations, datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionSet:
    """Finite action set; binary sets are encoded as ``(-1.0, 1.0)``."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ConfigurationError("an action set needs at least two actions", "actions")
        if len(set(vals)) != len(vals):
            raise ConfigurationError("actions must be distinct", "actions")
        if vals != (-1.0, 1.0) and any(not 0.0 <= v <= 1.0 for v in vals):
            raise ConfigurationError("discrete actions must lie in [0, 1]", "actions")
        object.__setattr__(self, "values", tuple(sorted(vals)))

    @classmethod
    def binary(cls) -> "ActionSet":
        return cls((-1.0, 1.0))

    @property
    def is_binary(self) -> bool:
        return self.values == (-1.0, 1.0)

    @property
    def k(self) -> int:
        return len(self.values)

    def index_of(self, actions) -> np.ndarray:
        """Column index of each action; raises if any action is not in the set."""
        arr = np.asarray(actions, dtype=np.float64)
        vals = np.asarray(self.values)
        idx = np.searchsorted(vals, arr)
        idx = np.clip(idx, 0, len(vals) - 1)
        if not np.all(vals[idx] == arr):
            raise ValueError("action outside the action set")
        return idx

    def __contains__(self, a) -> bool:
        return float(a) in self.values


@dataclass(frozen=True)
class Observation:
    """One logged triple ``(x, a, y)`` with the optional design probability ``w``."""

    x: tuple[float, ...]
    a: float
    y: float
    w: float | None = None


@dataclass
class Dataset:
    """Column-oriented sequence of observations.

    Indexing with an integer returns an :class:`Observation`; indexing with a
    slice or index array returns a sub-:class:`Dataset`.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        self.x = x.reshape(-1, 1) if x.ndim <= 1 else x
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        n = self.a.shape[0]
        if self.x.shape[0] != n or self.y.shape[0] != n or (self.w is not None and self.w.shape[0] != n):
            raise ValueError("dataset columns have inconsistent lengths")

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def context_dim(self) -> int:
        return self.x.shape[1]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            w = None if self.w is None else float(self.w[idx])
            return Observation(tuple(self.x[idx].tolist()), float(self.a[idx]), float(self.y[idx]), w)
        return Dataset(
            self.x[idx], self.a[idx], self.y[idx], None if self.w is None else self.w[idx]
        )

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        obs = list(observations)
        if not obs:
            raise ValueError("no observations")
        has_w = [o.w is not None for o in obs]
        if any(has_w) and not all(has_w):
            raise ValueError("either every observation carries w or none does")
        return cls(
            np.array([o.x for o in obs], dtype=np.float64),
            np.array([o.a for o in obs]),
            np.array([o.y for o in obs]),
            np.array([o.w for o in obs]) if all(has_w) else None,
        )

    def to_csv(self, path) -> None:
        """Write with header ``x1..xd,a,y,w`` (``w`` empty when absent)."""
        d = self.context_dim
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j + 1}" for j in range(d)] + ["a", "y", "w"])
            for i in range(len(self)):
                w = "" if self.w is None else repr(float(self.w[i]))
                writer.writerow([repr(float(v)) for v in self.x[i]] + [repr(float(self.a[i])), repr(float(self.y[i])), w])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        xcols = [j for j, h in enumerate(header) if h.startswith("x")]
        ia, iy, iw = header.index("a"), header.index("y"), header.index("w")
        x = np.array([[float(r[j]) for j in xcols] for r in rows], dtype=np.float64).reshape(len(rows), len(xcols))
        w_vals = [r[iw] for r in rows]
        w = None if all(v == "" for v in w_vals) else np.array([float(v) for v in w_vals])
        return cls(x, [float(r[ia]) for r in rows], [float(r[iy]) for r in rows], w)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Counter-based substream keyed by ``(master_seed, stream_id)``.

    Each call to :meth:`generator` builds a fresh Philox generator, so results
    never depend on how many draws another consumer made.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            raise ConfigurationError("stream_id must be non-negative", "stream_id")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError("master_seed must be a 64-bit unsigned integer", "seed")

    def generator(self, *purpose: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id, *purpose))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Working-model bases (shared by model-argmax policies and the bandit design)
# ---------------------------------------------------------------------------


def _basis_interaction(a, x1):
    return np.stack([np.ones_like(x1), x1, a * np.ones_like(x1), a * x1], axis=-1)


def _basis_linear(a, x1):
    return np.stack([np.ones_like(x1), x1], axis=-1)


BASES: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "interaction": _basis_interaction,
    "linear": _basis_linear,
}


def basis_features(name: str, a, x) -> np.ndarray:
    """Feature matrix of the named basis at actions ``a`` and contexts ``x``."""
    x1 = _first_coord(x)
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), x1.shape)
    return BASES[name](a, x1)


def _first_coord(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return arr[:, 0]
    return arr.reshape(-1) if arr.ndim else arr.reshape(1)


def _as_contexts(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    return arr


# ---------------------------------------------------------------------------
# Policies and policy classes
# ---------------------------------------------------------------------------


def _dot_sequential(phi: np.ndarray, beta) -> np.ndarray:
    acc = np.zeros(phi.shape[0])
    for j, b in enumerate(beta):
        acc = acc + phi[:, j] * b
    return acc


@dataclass(frozen=True)
class Policy:
    """Deterministic map from contexts to actions, identified by its descriptor.

    Kinds and ``params``:

    - ``constant``: ``(action,)``
    - ``threshold``: ``(tau, below, above)``; ``above`` iff ``x1 > tau``
    - ``linear``: coefficients ``beta``; action 1 iff ``beta . (1, x) > 0``
    - ``table``: ``(edges, actions)``; bins ``[0, e1), [e1, e2), ..., [ek, 1]`` on ``x1``
    - ``model-argmax``: ``(beta, basis)``; action 1 iff clamped
      ``Q_beta(1, x) >= Q_beta(-1, x)``
    - ``sign``: ``(gamma_estimate,)``; action 1 iff ``gamma_hat(x) > 0``
    """

    kind: str
    params: tuple

    def __call__(self, x) -> np.ndarray:
        xs = _as_contexts(x)
        x1 = xs[:, 0]
        k, p = self.kind, self.params
        if k == "constant":
            return np.full(xs.shape[0], float(p[0]))
        if k == "threshold":
            tau, below, above = p
            return np.where(x1 > tau, float(above), float(below))
        if k == "linear":
            beta = np.asarray(p, dtype=np.float64)
            d = xs.shape[1]
            coef = np.zeros(d + 1)
            coef[: min(len(beta), d + 1)] = beta[: d + 1]
            if np.any(beta[d + 1:] != 0):
                raise ValueError("linear policy has more coefficients than context dims")
            index = coef[0] + xs @ coef[1:]
            return np.where(index > 0, 1.0, -1.0)
        if k == "table":
            edges, actions = p
            bins = np.searchsorted(np.asarray(edges, dtype=np.float64), x1, side="right")
            return np.asarray(actions, dtype=np.float64)[bins]
        if k == "model-argmax":
            beta, basis = p
            qp = np.clip(_dot_sequential(basis_features(basis, 1.0, xs), beta), 0.0, 1.0)
            qm = np.clip(_dot_sequential(basis_features(basis, -1.0, xs), beta), 0.0, 1.0)
            return np.where(qp >= qm, 1.0, -1.0)
        if k == "sign":
            g = np.asarray(p[0](xs), dtype=np.float64)
            return np.where(g > 0, 1.0, -1.0)
        raise ValueError(f"unknown policy kind {k!r}")

    @classmethod
    def constant(cls, action: float) -> "Policy":
        return cls("constant", (float(action),))

    @classmethod
    def threshold(cls, tau: float, below: float = -1.0, above: float = 1.0) -> "Policy":
        return cls("threshold", (float(tau), float(below), float(above)))

    @classmethod
    def linear(cls, beta) -> "Policy":
        return cls("linear", tuple(float(b) for b in beta))

    @classmethod
    def table(cls, edges, actions) -> "Policy":
        edges = tuple(float(e) for e in edges)
        actions = tuple(float(a) for a in actions)
        if len(actions) != len(edges) + 1:
            raise ValueError("a table policy needs len(edges) + 1 actions")
        return cls("table", (edges, actions))

    @classmethod
    def model_argmax(cls, beta, basis: str = "interaction") -> "Policy":
        return cls("model-argmax", (tuple(float(b) for b in beta), basis))

    @property
    def depends_on_first_coordinate_only(self) -> bool:
        if self.kind == "linear":
            return all(b == 0 for b in self.params[2:])
        return True

    def kinks(self) -> tuple[float, ...]:
        """Points in (0, 1) where the action changes along ``x1``."""
        k, p = self.kind, self.params
        if k == "constant":
            pts: Sequence[float] = ()
        elif k == "threshold":
            pts = (p[0],)
        elif k == "table":
            pts = p[0]
        elif k == "linear" and self.depends_on_first_coordinate_only:
            b0 = p[0]
            b1 = p[1] if len(p) > 1 else 0.0
            pts = (-b0 / b1,) if b1 != 0 else ()
        else:
            pts = _rule_changes(lambda t: self(t.reshape(-1, 1)))
        return tuple(sorted(float(t) for t in pts if 0.0 < t < 1.0))


def _rule_changes(rule: Callable[[np.ndarray], np.ndarray], n_scan: int = 4097) -> list[float]:
    """Locate action switches of a piecewise-constant rule on [0, 1] by bisection."""
    grid = np.linspace(0.0, 1.0, n_scan)
    acts = rule(grid)
    out = []
    for i in np.flatnonzero(acts[1:] != acts[:-1]):
        lo, hi = grid[i], grid[i + 1]
        a_lo = acts[i]
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if rule(np.array([mid]))[0] == a_lo:
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return out


@dataclass(frozen=True)
class PolicyClass:
    """Finite, deterministically ordered family of policies.

    ``continuum`` marks a threshold family over ``tau_range``: ``members`` is
    then its enumeration grid, while suprema refine over the whole range.
    ``unrestricted`` holds every measurable policy; its members tuple holds
    just the pointwise-optimal policy of the generating spec.
    """

    kind: str
    members: tuple[Policy, ...]
    tau_range: tuple[float, float] | None = None
    continuum: bool = False

    def __post_init__(self):
        if not self.members and self.kind != "unrestricted":
            raise ConfigurationError("policy class is empty", "class")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @classmethod
    def threshold_grid(cls, taus) -> "PolicyClass":
        taus = [float(t) for t in taus]
        members = tuple(Policy.threshold(t) for t in taus)
        rng = (min(taus), max(taus)) if taus else None
        return cls("threshold-grid", members, rng, False)

    @classmethod
    def threshold_range(cls, lo: float = 0.0, hi: float = 1.0, grid: int = 101) -> "PolicyClass":
        if not hi > lo:
            raise ConfigurationError("degenerate threshold range", "class.tau_range")
        taus = np.linspace(lo, hi, grid)
        return cls("threshold-grid", tuple(Policy.threshold(float(t)) for t in taus), (float(lo), float(hi)), True)

    @classmethod
    def linear_index(cls, betas) -> "PolicyClass":
        return cls("linear-index", tuple(Policy.linear(b) for b in betas))

    @classmethod
    def model_argmax(cls, betas, basis: str = "interaction") -> "PolicyClass":
        return cls("model-argmax", tuple(Policy.model_argmax(b, basis) for b in betas))

    @classmethod
    def table(cls, edges, action_set: ActionSet) -> "PolicyClass":
        """All ``k**(len(edges)+1)`` piecewise-constant assignments, lexicographic."""
        import itertools

        members = tuple(
            Policy.table(edges, combo)
            for combo in itertools.product(action_set.values, repeat=len(edges) + 1)
        )
        return cls("table", members)

    @classmethod
    def unrestricted(cls, spec: "DgpSpec") -> "PolicyClass":
        return cls("unrestricted", (spec.optimal_policy(),))


# ---------------------------------------------------------------------------
# Data-generating processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Propensity:
    """Action mechanism: ``constant`` P(A=1|X)=p, ``logistic`` in x1 with floor
    ``delta``, or ``uniform`` over a discrete action set."""

    kind: str = "constant"
    p: float = 0.5
    intercept: float = 0.0
    slope: float = 0.0

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "p": self.p}
        if self.kind == "logistic":
            return {"kind": "logistic", "intercept": self.intercept, "slope": self.slope}
        return {"kind": self.kind}


FAMILIES = ("margin", "linear", "discrete")
NOISES = ("bernoulli", "uniform-band")


@dataclass(frozen=True)
class DgpSpec:
    """Fully known synthetic distribution of ``(X, A, Y)``.

    Families:

    - ``margin``: ``gamma(x) = sign(x1 - 1/2) |2 (x1 - 1/2)|^(1/alpha) / 2`` and
      ``Q(a, x) = 1/2 + a gamma(x) / 2`` on binary actions.
    - ``linear``: ``Q(a, x) = c0 + c1 x1 + c2 a + c3 a x1`` on binary actions.
    - ``discrete``: ``Q(a, x) = 3/4 - (a - x1)^2 / 2`` on actions in [0, 1].
    """

    family: str = "margin"
    alpha: float | None = 1.0
    delta: float = 0.1
    noise: str = "bernoulli"
    w_band: float = 0.2
    context_dim: int = 1
    propensity: Propensity = field(default_factory=Propensity)
    coef: tuple[float, ...] = (0.5, 0.0, 0.0, 0.0)
    actions: tuple[float, ...] = (-1.0, 1.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}", "family")
        if self.family == "margin":
            if self.alpha is None:
                raise ConfigurationError("required for the margin family", "alpha")
            if not self.alpha > 0:
                raise ConfigurationError("must be positive", "alpha")
        if not 0.0 < self.delta < 0.5:
            raise ConfigurationError("must lie in (0, 1/2)", "delta")
        if self.noise not in NOISES:
            raise ConfigurationError(f"unknown noise {self.noise!r}", "noise")
        if self.noise == "uniform-band" and not 0.0 < self.w_band <= 0.25:
            raise ConfigurationError("must lie in (0, 1/4]", "w_band")
        if int(self.context_dim) != self.context_dim or self.context_dim < 1:
            raise ConfigurationError("must be a positive integer", "context_dim")
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        if self.family == "discrete":
            aset = ActionSet(tuple(self.actions))
            if aset.is_binary:
                raise ConfigurationError("discrete family needs actions in [0, 1]", "actions")
            object.__setattr__(self, "actions", aset.values)
        else:
            object.__setattr__(self, "actions", (-1.0, 1.0))
        if self.family == "linear":
            if len(self.coef) != 4:
                raise ConfigurationError("linear family needs four coefficients", "coef")
            corners = [self._q_linear(a, x) for a in (-1.0, 1.0) for x in (0.0, 1.0)]
            if min(corners) < 0.0 or max(corners) > 1.0:
                raise ConfigurationError("mean reward leaves [0, 1]", "coef")
        self._check_propensity()

    def _check_propensity(self):
        pr = self.propensity
        if self.family == "discrete":
            if pr.kind != "uniform":
                raise ConfigurationError("discrete family supports the uniform propensity only", "propensity.kind")
            if 1.0 / len(self.actions) < self.delta:
                raise ConfigurationError("uniform propensity falls below delta", "propensity")
            return
        if pr.kind == "constant":
            if not self.delta <= pr.p <= 1.0 - self.delta:
                raise ConfigurationError("must lie in [delta, 1 - delta]", "propensity.p")
        elif pr.kind != "logistic":
            raise ConfigurationError(f"unknown propensity {pr.kind!r}", "propensity.kind")

    # -- structure ---------------------------------------------------------

    @property
    def action_set(self) -> ActionSet:
        return ActionSet(self.actions)

    @property
    def is_binary(self) -> bool:
        return self.family != "discrete"

    @property
    def q_range(self) -> tuple[float, float]:
        if self.family == "linear":
            corners = [self._q_linear(a, x) for a in (-1.0, 1.0) for x in (0.0, 1.0)]
            return min(corners), max(corners)
        return 0.25, 0.75

    @property
    def reward_range(self) -> tuple[float, float]:
        if self.noise == "bernoulli":
            return 0.0, 1.0
        lo, hi = self.q_range
        return lo - self.w_band, hi + self.w_band

    @property
    def singular_points(self) -> tuple[float, ...]:
        """Points where ``Q`` is not smooth in ``x1``."""
        return (0.5,) if self.family == "margin" else ()

    def bound_m(self, delta_clip: float | None = None) -> float:
        """Almost-sure bound on the mean influence function."""
        dc = self.delta if delta_clip is None else delta_clip
        lo, hi = self.reward_range
        span = max(1.0, hi) - min(0.0, lo)
        return (1.0 + 1.0 / dc) * span + 1.0

    # -- nuisances -----------------------------------------------------------

    def _q_linear(self, a, x1):
        c0, c1, c2, c3 = self.coef
        return c0 + c1 * x1 + c2 * a + c3 * a * x1

    def gamma(self, x) -> np.ndarray:
        if not self.is_binary:
            raise UnsupportedError("gamma is defined for binary actions only")
        x1 = _first_coord(x)
        if self.family == "margin":
            u = x1 - 0.5
            return 0.5 * np.sign(u) * np.abs(2.0 * u) ** (1.0 / self.alpha)
        c0, c1, c2, c3 = self.coef
        return 2.0 * (c2 + c3 * x1)

    def q(self, a, x) -> np.ndarray:
        """Mean reward ``E[Y | A=a, X=x]``."""
        x1 = _first_coord(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), x1.shape)
        if self.family == "margin":
            return 0.5 + a * self.gamma(x1) / 2.0
        if self.family == "linear":
            return self._q_linear(a, x1)
        return 0.75 - 0.5 * (a - x1) ** 2

    def g(self, a, x) -> np.ndarray:
        """Action mechanism ``P(A=a | X=x)``."""
        x1 = _first_coord(x)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), x1.shape)
        if self.family == "discrete":
            return np.full(x1.shape, 1.0 / len(self.actions))
        p1 = self.p_one(x1)
        return np.where(a == 1.0, p1, 1.0 - p1)

    def p_one(self, x) -> np.ndarray:
        x1 = _first_coord(x)
        pr = self.propensity
        if pr.kind == "constant":
            return np.full(x1.shape, pr.p)
        return self.delta + (1.0 - 2.0 * self.delta) * special.expit(pr.intercept + pr.slope * x1)

    def action_probs(self, x) -> np.ndarray:
        """``(n, k)`` matrix of ``g(a | x)`` over the ordered action set."""
        x1 = _first_coord(x)
        return np.stack([self.g(a, x1) for a in self.actions], axis=1)

    def cdf(self, v, a, x) -> np.ndarray:
        """Conditional reward CDF ``P(Y <= v | A=a, X=x)``."""
        q = self.q(a, x)
        v = np.asarray(v, dtype=np.float64)
        if self.noise == "uniform-band":
            return np.clip((v - q + self.w_band) / (2.0 * self.w_band), 0.0, 1.0)
        return np.where(v < 0.0, 0.0, np.where(v < 1.0, 1.0 - q, 1.0))

    def draw_rewards(self, q: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        u = gen.random(q.shape)
        if self.noise == "bernoulli":
            return (u < q).astype(np.float64)
        return q + self.w_band * (2.0 * u - 1.0)

    def optimal_policy(self) -> Policy:
        """Pointwise-optimal policy over all measurable policies."""
        if self.family == "margin":
            return Policy.threshold(0.5)
        if self.family == "linear":
            _, _, c2, c3 = self.coef
            if c3 == 0.0:
                return Policy.constant(1.0 if c2 > 0 else -1.0)
            r = -c2 / c3
            if c3 > 0:
                return Policy.threshold(r, -1.0, 1.0)
            return Policy.threshold(r, 1.0, -1.0)
        acts = self.actions
        mids = [(acts[i] + acts[i + 1]) / 2.0 for i in range(len(acts) - 1)]
        return Policy.table(mids, acts)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "alpha": self.alpha,
            "delta": self.delta,
            "noise": self.noise,
            "context_dim": self.context_dim,
            "propensity": self.propensity.to_dict(),
        }
        if self.noise == "uniform-band":
            out["w_band"] = self.w_band
        if self.family == "linear":
            out["coef"] = list(self.coef)
        if self.family == "discrete":
            out["actions"] = list(self.actions)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, path: str = "dgp") -> "DgpSpec":
        if not isinstance(d, dict):
            raise ConfigurationError("must be an object", path)
        for key in ("family", "delta", "noise", "context_dim", "propensity"):
            if key not in d:
                raise ConfigurationError("required field missing", f"{path}.{key}")
        if d["family"] == "margin" and d.get("alpha") is None:
            raise ConfigurationError("required for the margin family", f"{path}.alpha")
        pr = d["propensity"]
        if not isinstance(pr, dict) or "kind" not in pr:
            raise ConfigurationError("must be an object with a 'kind'", f"{path}.propensity")
        kwargs = dict(
            family=d["family"],
            alpha=d.get("alpha"),
            delta=float(d["delta"]),
            noise=d["noise"],
            context_dim=d["context_dim"],
            propensity=Propensity(
                kind=pr["kind"],
                p=float(pr.get("p", 0.5)),
                intercept=float(pr.get("intercept", 0.0)),
                slope=float(pr.get("slope", 0.0)),
            ),
        )
        if "w_band" in d:
            kwargs["w_band"] = float(d["w_band"])
        if "coef" in d:
            kwargs["coef"] = tuple(d["coef"])
        if "actions" in d:
            kwargs["actions"] = tuple(d["actions"])
        try:
            return cls(**kwargs)
        except ConfigurationError as exc:
            if exc.path:
                raise ConfigurationError(str(exc).split(": ", 1)[-1], f"{path}.{exc.path}") from None
            raise

    @classmethod
    def from_json(cls, text: str) -> "DgpSpec":
        return cls.from_dict(json.loads(text))


def margin_dgp(alpha: float = 1.0, delta: float = 0.1, **kw) -> DgpSpec:
    """Canonical margin family with the balanced action mechanism."""
    return DgpSpec(family="margin", alpha=alpha, delta=delta, **kw)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _gl(order: int):
    return np.polynomial.legendre.leggauss(order)


@functools.lru_cache(maxsize=256)
def _graded_rule(points: tuple[float, ...], order: int, layers: int, ratio: float):
    """Composite Gauss-Legendre rule on [0, 1], geometrically graded toward each
    point in ``points`` so kinks and power-law singularities there integrate
    to near machine precision."""
    t, wt = _gl(order)
    edges: list[tuple[float, float]] = []
    for a, b in zip(points[:-1], points[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        half = mid - a
        cuts_left = [a] + [a + half * ratio**k for k in range(layers, 0, -1)] + [mid]
        cuts_right = [mid] + [b - half * ratio**k for k in range(1, layers + 1)] + [b]
        for seq in (cuts_left, cuts_right):
            for lo, hi in zip(seq[:-1], seq[1:]):
                if hi > lo:
                    edges.append((lo, hi))
    lo = np.array([e[0] for e in edges])
    hi = np.array([e[1] for e in edges])
    half = (hi - lo)[:, None] / 2.0
    nodes = (lo[:, None] + half * (t[None, :] + 1.0)).reshape(-1)
    weights = (half * wt[None, :]).reshape(-1)
    return nodes, weights


def integrate_1d(fn: Callable[[np.ndarray], np.ndarray], breaks: Sequence[float] = (), order: int = 12,
                 layers: int = 14, ratio: float = 0.2) -> float:
    """Integrate ``fn`` over [0, 1]; ``breaks`` lists kinks/discontinuities."""
    nodes, weights = quad_rule_1d(breaks, order, layers, ratio)
    return float(np.dot(weights, fn(nodes)))


def quad_rule_1d(breaks: Sequence[float] = (), order: int = 12, layers: int = 14, ratio: float = 0.2):
    pts = sorted({0.0, 1.0, *(float(b) for b in breaks if 0.0 < b < 1.0)})
    return _graded_rule(tuple(pts), order, layers, ratio)


def context_quadrature(spec: DgpSpec, policies: Sequence[Policy] = (), extra_breaks: Sequence[float] = (),
                       quad_points: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(m, d)`` and weights for expectations over the context law.

    Integrands depending on ``x1`` only use the graded one-dimensional rule
    (other coordinates fixed at 1/2); otherwise a tensor Gauss-Legendre rule
    with ``quad_points`` nodes per axis is used for ``d <= 3``.
    """
    if quad_points < 64:
        raise ConfigurationError("quad_points must be at least 64", "quad_points")
    d = spec.context_dim
    if all(p.depends_on_first_coordinate_only for p in policies):
        breaks = set(spec.singular_points) | set(extra_breaks)
        for p in policies:
            breaks.update(p.kinks())
        order = max(8, int(math.ceil(quad_points / 8)))
        nodes, weights = quad_rule_1d(tuple(sorted(breaks)), order=order)
        X = np.full((nodes.shape[0], d), 0.5)
        X[:, 0] = nodes
        return X, weights
    if d > 3:
        raise UnsupportedError("tensor quadrature is limited to context_dim <= 3")
    t, wt = _gl(quad_points)
    t = (t + 1.0) / 2.0
    wt = wt / 2.0
    grids = np.meshgrid(*([t] * d), indexing="ij")
    wgrids = np.meshgrid(*([wt] * d), indexing="ij")
    X = np.stack([g.reshape(-1) for g in grids], axis=1)
    W = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
    return X, W


# ---------------------------------------------------------------------------
# Oracle operations
# ---------------------------------------------------------------------------


def sample_iid(spec: DgpSpec, n: int, rng) -> Dataset:
    """Draw ``n`` i.i.d. observations; ``w`` is left empty."""
    if n < 1:
        raise ConfigurationError("n must be at least 1", "n")
    gen = _as_rng(rng)
    x = gen.random((n, spec.context_dim))
    u_a = gen.random(n)
    if spec.is_binary:
        a = np.where(u_a < spec.p_one(x), 1.0, -1.0)
    else:
        cum = np.cumsum(spec.action_probs(x), axis=1)
        idx = np.minimum((u_a[:, None] >= cum).sum(axis=1), len(spec.actions) - 1)
        a = np.asarray(spec.actions)[idx]
    y = spec.draw_rewards(spec.q(a, x), gen)
    return Dataset(x, a, y)


def gamma_true(spec: DgpSpec, x):
    """Conditional action effect ``Q(1, x) - Q(-1, x)``."""
    out = spec.gamma(x)
    return float(out[0]) if np.ndim(x) == 0 else out


def value_true(spec: DgpSpec, policy: Policy, quad_points: int = 96) -> float:
    """Mean value ``E[Q(pi(X), X)]`` by deterministic quadrature."""
    X, W = context_quadrature(spec, (policy,), quad_points=quad_points)
    return float(np.dot(W, spec.q(policy(X), X)))


def _threshold_value(spec: DgpSpec, tau: float, below: float, above: float) -> float:
    return value_true(spec, Policy.threshold(tau, below, above))


@functools.lru_cache(maxsize=256)
def optimal_value(spec: DgpSpec, cls: PolicyClass) -> tuple[float, Policy]:
    """``(V*, argmax)`` over the class; continuum threshold classes are refined
    around the best grid point to ``1e-6`` in ``tau``."""
    if cls.kind == "unrestricted":
        pol = spec.optimal_policy()
        return value_true(spec, pol), pol
    values = [value_true(spec, p) for p in cls.members]
    j = int(np.argmax(values))
    best, best_pol = values[j], cls.members[j]
    if cls.continuum and best_pol.kind == "threshold":
        taus = [p.params[0] for p in cls.members]
        lo = taus[max(j - 1, 0)]
        hi = taus[min(j + 1, len(taus) - 1)]
        _, below, above = best_pol.params
        res = optimize.minimize_scalar(
            lambda t: -_threshold_value(spec, t, below, above),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-7},
        )
        if -res.fun > best:
            best, best_pol = float(-res.fun), Policy.threshold(float(res.x), below, above)
    return best, best_pol


def regret_true(spec: DgpSpec, cls: PolicyClass, policy: Policy) -> float:
    """``V* - V(pi)``; negative for out-of-class policies that beat the class."""
    v_star, _ = optimal_value(spec, cls)
    return v_star - value_true(spec, policy)


def policy_distance(spec: DgpSpec, p1: Policy, p2: Policy) -> float:
    """``L2(P)`` distance ``||p1 - p2||`` between two policies."""
    X, W = context_quadrature(spec, (p1, p2))
    return float(np.sqrt(np.dot(W, (p1(X) - p2(X)) ** 2)))
