"""Sequential design with exploration-clipped action probabilities."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .core import (
    BASES,
    ConfigurationError,
    Dataset,
    DgpSpec,
    Policy,
    UnsupportedError,
    _as_rng,
    _dot_sequential,
    basis_features,
    context_quadrature,
    value_true,
)
from .erm import ErmResult, ThresholdObjective
from .meanvalue import aipw_table
from .nuisance import RIDGE, NuisanceModel, OracleNuisance


class DesignError(RuntimeError):
    """The working-model fit failed during a design run."""


def g_shape(u, t: float, xi: float):
    """Clipped, piecewise-linear map from a predicted effect to ``P(A = 1)``.

    Equals ``t`` below ``-xi``, ``1 - t`` above ``xi`` and interpolates
    linearly in between, so ``g_shape(0) = 1/2`` and the slope is at most
    ``(1/2 - t) / xi``. Accepts scalars or arrays.
    """
    if not 0.0 < t <= 0.5 or not xi > 0.0:
        raise ConfigurationError("need t in (0, 1/2] and xi > 0", "schedule")
    if np.ndim(u) == 0:
        return kernels.g_shape(float(u), float(t), float(xi))
    u = np.asarray(u, dtype=np.float64)
    mid = 0.5 + (0.5 - t) * u / xi
    return np.where(u <= -xi, t, np.where(u >= xi, 1.0 - t, mid))


@dataclass(frozen=True)
class DesignSchedule:
    """Exploration floor ``t_n`` and blur width ``xi_n``.

    Both are ``max(floor, value * n**-power)``; ``power = 0`` gives constants.
    Steps before ``n0`` are burn-in draws from the logging propensity.
    """

    t: float = 0.1
    xi: float = 0.25
    n0: int = 50
    t_power: float = 0.0
    t_floor: float | None = None
    xi_power: float = 0.0
    xi_floor: float | None = None

    def __post_init__(self):
        if not 0.0 < self.t <= 0.5:
            raise ConfigurationError("t must lie in (0, 1/2]", "schedule.t")
        if not self.xi > 0.0:
            raise ConfigurationError("xi must be positive", "schedule.xi")
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise ConfigurationError("n0 must be a positive integer", "schedule.n0")
        for name in ("t", "xi"):
            power = getattr(self, f"{name}_power")
            floor = getattr(self, f"{name}_floor")
            if power < 0:
                raise ConfigurationError("decay power must be non-negative", f"schedule.{name}_power")
            if power > 0 and (floor is None or not 0.0 < floor <= getattr(self, name)):
                raise ConfigurationError("a decaying sequence needs a positive limit not above its start",
                                         f"schedule.{name}_floor")

    def _seq(self, value, power, floor, n):
        steps = np.arange(1, n + 1, dtype=np.float64)
        if power == 0:
            return np.full(n, float(value))
        return np.maximum(floor, value * steps ** (-power))

    def t_seq(self, n: int) -> np.ndarray:
        return self._seq(self.t, self.t_power, self.t_floor, n)

    def xi_seq(self, n: int) -> np.ndarray:
        return self._seq(self.xi, self.xi_power, self.xi_floor, n)

    def kappa_sup(self, n: int) -> float:
        return float(np.max((0.5 - self.t_seq(n)) / self.xi_seq(n)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict, path: str = "schedule") -> "DesignSchedule":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown keys {sorted(unknown)}", path)
        try:
            return cls(**d)
        except ConfigurationError as err:
            raise ConfigurationError(err.message, path + err.path[len("schedule"):]) from None


@dataclass(frozen=True)
class WorkingModel:
    """Linear working model ``Q_beta(a, x) = basis(a, x) . beta`` clamped to [0, 1]."""

    basis: str = "interaction"
    beta: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.basis not in BASES:
            raise ConfigurationError(f"unknown basis {self.basis!r}", "model.basis")

    @property
    def dim(self) -> int:
        return BASES[self.basis](np.zeros(1), np.zeros(1)).shape[1]

    def predict(self, a, x, beta=None) -> np.ndarray:
        b = self.beta if beta is None else beta
        if b is None:
            raise ConfigurationError("working model has no coefficients", "model.beta")
        return np.clip(_dot_sequential(basis_features(self.basis, a, x), b), 0.0, 1.0)


def fit_beta(history: Dataset, basis: str = "interaction", ridge: float = RIDGE) -> np.ndarray:
    """Inverse-probability-weighted least squares for the working model.

    Minimizes ``sum_i (Y_i - phi_i . beta)**2 / w_i`` with a ridge of ``ridge``
    on the normal equations.
    """
    if history.w is None:
        raise ConfigurationError("history needs logged propensities", "w")
    phi = basis_features(basis, history.a, history.x)
    p = phi.shape[1]
    if len(history) < p:
        raise ConfigurationError(f"need at least {p} observations", "history")
    wt = 1.0 / history.w
    S = phi.T @ (phi * wt[:, None]) + ridge * np.eye(p)
    if np.linalg.cond(S) > 1e14:
        raise DesignError("normal equations are singular beyond the ridge")
    return np.linalg.solve(S, phi.T @ (wt * history.y))


@dataclass(eq=False)
class BanditLog:
    """Outcome of a design run.

    ``data.w`` holds the probability of the action actually taken; ``g1`` the
    probability of action 1; ``beta_path`` the coefficients used at each step
    (NaN rows during burn-in).
    """

    data: Dataset
    g1: np.ndarray
    beta_path: np.ndarray
    schedule: DesignSchedule
    basis: str = "interaction"
    t: np.ndarray = field(default=None)
    xi: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.data)
        if self.t is None:
            self.t = self.schedule.t_seq(n)
        if self.xi is None:
            self.xi = self.schedule.xi_seq(n)

    def __len__(self) -> int:
        return len(self.data)

    def recompute(self) -> tuple[np.ndarray, np.ndarray]:
        """``(P(A = 1), w)`` recomputed from the logged coefficients.

        After burn-in the probability of action -1 is ``G(-u)``, the mirror
        of ``G(u)``; during burn-in it is one minus the logging propensity.
        """
        d = self.data
        g1 = self.g1.copy()
        w = np.where(d.a == 1.0, g1, 1.0 - g1)
        rows = np.flatnonzero(~np.isnan(self.beta_path[:, 0]))
        for i in rows:
            x = d.x[i:i + 1]
            b = self.beta_path[i]
            qp = np.clip(_dot_sequential(basis_features(self.basis, 1.0, x), b), 0.0, 1.0)[0]
            qm = np.clip(_dot_sequential(basis_features(self.basis, -1.0, x), b), 0.0, 1.0)[0]
            t, xi = float(self.t[i]), float(self.xi[i])
            g1[i] = kernels.g_shape(float(qp - qm), t, xi)
            w[i] = g1[i] if d.a[i] == 1.0 else kernels.g_shape(float(qm - qp), t, xi)
        return g1, w

    def to_csv(self, path, sidecar=None) -> None:
        d = self.data
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["step"] + [f"x{j + 1}" for j in range(d.context_dim)] + ["a", "y", "w"])
            for i in range(len(d)):
                wr.writerow([i + 1] + [repr(float(v)) for v in d.x[i]]
                            + [repr(float(d.a[i])), repr(float(d.y[i])), repr(float(d.w[i]))])
        if sidecar is not None:
            beta = [None if np.isnan(r[0]) else [float(v) for v in r] for r in self.beta_path]
            meta = {"schedule": self.schedule.to_dict(), "basis": self.basis, "beta_path": beta}
            with open(sidecar, "w") as fh:
                json.dump(meta, fh, indent=1)


def run_design(spec: DgpSpec, schedule: DesignSchedule, model: WorkingModel, n: int, rng) -> BanditLog:
    """Run ``n`` steps of the sequential design.

    Each step draws a context and both potential rewards, sets ``P(A = 1)``
    from the working model refit on all earlier steps (the logging propensity
    during burn-in) and reveals the reward of the action taken. Runs with
    ``n <= n0`` consist of burn-in only.
    """
    if not spec.is_binary:
        raise UnsupportedError("the sequential design needs binary actions")
    if n < 1:
        raise ConfigurationError("n must be at least 1", "n")
    gen = _as_rng(rng)
    x = gen.random((n, spec.context_dim))
    u = gen.random(n)
    z_plus = spec.draw_rewards(spec.q(1.0, x), gen)
    z_minus = spec.draw_rewards(spec.q(-1.0, x), gen)
    phi_plus = np.ascontiguousarray(basis_features(model.basis, 1.0, x))
    phi_minus = np.ascontiguousarray(basis_features(model.basis, -1.0, x))
    t_seq = schedule.t_seq(n)
    xi_seq = schedule.xi_seq(n)
    a, y, w, g1, beta_path, status = kernels.design_loop(
        phi_plus, phi_minus, z_plus, z_minus, u, np.ascontiguousarray(spec.p_one(x)),
        t_seq, xi_seq, int(schedule.n0), RIDGE)
    if status >= 0:
        raise DesignError(f"working-model fit failed at step {status + 1}")
    data = Dataset(x, np.asarray(a, dtype=np.float64), np.asarray(y), np.asarray(w))
    return BanditLog(data, np.asarray(g1), np.asarray(beta_path), schedule, model.basis, t_seq, xi_seq)


def martingale_increments(log: BanditLog, policy: Policy, spec: DgpSpec, q_model: NuisanceModel | None = None,
                          value_center: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ``f_pi(O_i, W_i)`` and its conditional mean given the past.

    ``f_pi`` is the influence function with the logged propensity ``w`` and
    outcome model ``q_model`` (true ``Q`` by default). Given the past, the
    importance weight cancels against the design probability, which is never
    below the exploration floor, so the conditional mean is the same at every
    step: ``E[Q(pi(X), X) - q(pi(X), X)] + E[q(pi(X), X)] - center``.
    """
    qm = OracleNuisance(spec, 0.0) if q_model is None else q_model
    center = value_true(spec, policy) if value_center is None else value_center
    d = log.data
    pa = policy(d.x)
    f = np.where(d.a == pa, (d.y - qm.q(d.a, d.x)) / d.w, 0.0) + qm.q(pa, d.x) - center
    X, W = context_quadrature(spec, (policy,))
    px = policy(X)
    c = float(np.dot(W, spec.q(px, X) - qm.q(px, X) + qm.q(px, X))) - center
    return f, np.full(f.shape, c)


def martingale_sum(values: np.ndarray, cond_means: np.ndarray) -> float:
    """``n**-1/2 * sum_i (f_i - E[f_i | past])``."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.sum(values - np.asarray(cond_means, dtype=np.float64)) / math.sqrt(values.size))


def martingale_check(log: BanditLog, policy: Policy, spec: DgpSpec, q_model: NuisanceModel | None = None,
                     value_center: float | None = None) -> float:
    """Centered, scaled martingale sum of the influence function along a run."""
    return martingale_sum(*martingale_increments(log, policy, spec, q_model, value_center))


def bandit_value_estimate(log: BanditLog, policy: Policy, q_model: NuisanceModel) -> float:
    """AIPW value estimate weighting by the logged design probabilities."""
    table = aipw_table(log.data, q_model, propensity="logged")
    cols = q_model.action_set.index_of(policy(log.data.x))
    return float(np.mean(table[np.arange(len(log)), cols]))


def bandit_erm(log: BanditLog, tau_range: tuple[float, float], q_model: NuisanceModel) -> ErmResult:
    """Exact threshold ERM on a design log, weighting by the logged probabilities."""
    lo, hi = tau_range
    if not hi > lo:
        raise ConfigurationError("degenerate threshold range", "tau_range")
    table = aipw_table(log.data, q_model, propensity="logged")
    obj = ThresholdObjective(table, log.data.x[:, 0], q_model.action_set)
    tau, best = obj.sweep(lo, hi)
    return ErmResult(Policy.threshold(tau), best, 0, 0.0)
