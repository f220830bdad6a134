"""Optimizer-form reference implementations.

For every neuronal dynamics in `neurons` there is an iteration here that the
spike trace must reproduce exactly:

  * rate-coded IF       <->  subgradient method, step 1/(t+1), on
                             ReLU(R x/theta - y) + y^2/2
  * EMA-coded LIF       <->  subgradient method, constant step 1/tau
  * sign-based neuron   <->  sign gradient descent with schedule eta(t) on
                             |y - f(x)|^2 / 2

plus the output transforms that map decoded neuron output into the oracle's
coordinate, and the convergence bound with its nondifferentiability and input
error terms.

Sign conventions mirror the neurons: H(0) = 1, hence sign(0) = +1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .codec import heaviside, sigmoid
from .schedules import Schedule

__all__ = [
    "reference_nonlinearity",
    "IfObjective",
    "LifObjective",
    "SqErrObjective",
    "subgradient_step",
    "gradient_sign",
    "signgd_oracle_step",
    "if_transform",
    "lif_transform",
    "convergence_bound",
    "BoundChecker",
    "IfRateOracle",
    "LifEmaOracle",
    "SubgradOracle",
    "SignGdOracle",
]


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu1(x):
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def gelu_sigmoid(x):
    """The sigmoid approximation x / (1 + exp(-1.702 x))."""
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(1.702 * x)


def reference_nonlinearity(kind: str, x, delta: float = 0.1):
    """Exact real-arithmetic target values for each firing mechanism.

    Two-operand kinds take x with a leading axis of length 2 (or a pair).
    """
    if kind in ("max2", "misr"):
        x = np.asarray(x, dtype=np.float64)
        x1, x2 = x[0], x[1]
        if kind == "max2":
            return np.maximum(x1, x2)
        if np.any(np.asarray(x2) <= 0):
            raise ValueError("mul-inverse-sqrt needs a positive second operand")
        return x1 / np.sqrt(x2)
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return relu(x)
    if kind == "relu1":
        return relu1(x)
    if kind == "leaky":
        return np.where(x >= 0, x, delta * x)
    if kind == "gelu":
        return gelu_sigmoid(x)
    if kind == "square":
        return x**2
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


# ---------------------------------------------------------------------------
# Objectives: evaluable value L(y; x) and subgradient g(y; x).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IfObjective:
    """ReLU(R x/theta - y) + y^2/2; minimizer ReLU1(R x/theta)."""

    theta: float = 1.0
    R: float = 1.0

    def value(self, y, x):
        z = (self.R / self.theta) * np.asarray(x, dtype=np.float64)
        return relu(z - y) + 0.5 * np.asarray(y) ** 2

    def grad(self, y, x):
        z = (self.R / self.theta) * np.asarray(x, dtype=np.float64)
        return np.asarray(y) - heaviside(z - y)

    def minimizer(self, x):
        return relu1((self.R / self.theta) * np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class LifObjective:
    """y^2/2 + u_rest y/(theta (tau-1)) + ReLU(R x/(theta (tau-1)) - 1/(tau-1) - y).

    For u_rest = 0 the minimizer is ReLU1(R x/(theta (tau-1)) - 1/(tau-1));
    no closed form is claimed otherwise.
    """

    theta: float = 1.0
    R: float = 1.0
    tau: float = 10.0
    u_rest: float = 0.0

    def _kink(self, x):
        d = self.theta * (self.tau - 1.0)
        return (self.R * np.asarray(x, dtype=np.float64) - self.theta) / d

    def value(self, y, x):
        y = np.asarray(y, dtype=np.float64)
        lin = self.u_rest / (self.theta * (self.tau - 1.0))
        return 0.5 * y**2 + lin * y + relu(self._kink(x) - y)

    def grad(self, y, x):
        lin = self.u_rest / (self.theta * (self.tau - 1.0))
        return np.asarray(y) + lin - heaviside(self._kink(x) - np.asarray(y))

    def minimizer(self, x):
        if self.u_rest != 0.0:
            raise ValueError("closed-form minimizer is only stated for u_rest = 0")
        return relu1(self._kink(x))


@dataclass(frozen=True)
class SqErrObjective:
    """|y - f(x)|^2 / 2 for a target nonlinearity f; smooth in y."""

    kind: str
    delta: float = 0.1

    def target(self, x):
        return reference_nonlinearity(self.kind, x, self.delta)

    def value(self, y, x):
        return 0.5 * (np.asarray(y) - self.target(x)) ** 2

    def grad(self, y, x):
        return np.asarray(y) - self.target(x)

    def minimizer(self, x):
        return self.target(x)


def subgradient_step(f, x, obj, eta_t: float):
    """One subgradient update f - eta_t * g(f; x)."""
    return np.asarray(f) - eta_t * obj.grad(f, x)


def _sign_plus(z):
    """sign with sign(0) = +1, mirroring H(0) = 1."""
    return 2.0 * heaviside(z) - 1.0


def gradient_sign(f, x, obj):
    """sign(g(f; x)) with sign(0) = +1.

    For the mul-inverse-sqrt target with a non-positive second operand the
    gradient is undefined; the sign falls back to the sign of f itself,
    matching the neuron's degeneracy contract.
    """
    f = np.asarray(f, dtype=np.float64)
    if getattr(obj, "kind", None) == "misr":
        x = np.asarray(x, dtype=np.float64)
        ok = x[1] > 0
        safe_x2 = np.where(ok, x[1], 1.0)
        g = f - x[0] / np.sqrt(safe_x2)
        return np.where(ok, _sign_plus(g), _sign_plus(f))
    return _sign_plus(obj.grad(f, x))


def signgd_oracle_step(f, x, obj, eta_t: float):
    """One sign-gradient update f - eta_t * sign(g(f; x))."""
    return np.asarray(f, dtype=np.float64) - eta_t * gradient_sign(f, x, obj)


# ---------------------------------------------------------------------------
# Output transforms into oracle coordinates.
# ---------------------------------------------------------------------------


def if_transform(y_t, t: int, u0: float = 0.0, theta: float = 1.0):
    """Map rate-decoded IF output y(t) into the subgradient iterate."""
    return (t / (t + 1.0)) * np.asarray(y_t) - (u0 - theta) / (theta * (t + 1.0))


def lif_transform(y_t, t: int, u0: float = 0.0, u_rest: float = 0.0,
                  theta: float = 1.0, tau: float = 10.0):
    """Map EMA-decoded LIF output y(t) into the constant-step iterate."""
    rho = (tau - 1.0) / tau
    geom = (1.0 - rho ** (t + 1)) * tau  # sum_{i=0..t} rho^(t-i)
    return (
        np.asarray(y_t)
        - (rho**t) * u0 / (tau * theta)
        - u_rest * geom / (theta * tau * (tau - 1.0))
    )


# ---------------------------------------------------------------------------
# Convergence bound.
# ---------------------------------------------------------------------------


def nondiff_weight(i):
    """h(i) = 1 - sqrt((i-1)/(i+1)); the per-step nondifferentiability error."""
    i = np.asarray(i, dtype=np.float64)
    return 1.0 - np.sqrt((i - 1.0) / (i + 1.0))


def convergence_bound(f0: float, f_star: float, M: float, x: float,
                      x_tilde_history, t: int) -> float:
    """Upper bound on (f_tilde(t) - f*)^2 for the rate-coded IF iterate.

        (f0 - f*)^2/(t+1) + (M+1)/(t+1) * sum_{i<=t} h(i)
                          + 4/(t+1) * sum_{i<=t} min(|x - x_tilde(i)|, 1)

    M must dominate max_i |f_tilde(i)| over the trace; the bound is only valid
    under that cap, so `BoundChecker.check_m` warns when a trace violates it
    instead of assuming it holds.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    xs = np.asarray(x_tilde_history, dtype=np.float64)[:t]
    if xs.shape[0] < t:
        raise ValueError(f"need {t} input estimates, got {xs.shape[0]}")
    i = np.arange(1, t + 1)
    nd = float(np.sum(nondiff_weight(i)))
    ie = float(np.sum(np.minimum(np.abs(x - xs), 1.0)))
    return ((f0 - f_star) ** 2 + (M + 1.0) * nd + 4.0 * ie) / (t + 1.0)


class BoundChecker:
    """Streaming form of the bound: push x_tilde(i) step by step, query bound(t).

    Vectorized over a batch of independent traces.
    """

    def __init__(self, f0, f_star, M, x):
        self.f0 = np.asarray(f0, dtype=np.float64)
        self.f_star = np.asarray(f_star, dtype=np.float64)
        self.M = np.asarray(M, dtype=np.float64)
        self.x = np.asarray(x, dtype=np.float64)
        self.t = 0
        self._nd = 0.0
        self._ie = np.zeros_like(self.x)

    def push(self, x_tilde):
        self.t += 1
        self._nd += float(nondiff_weight(self.t))
        self._ie = self._ie + np.minimum(np.abs(self.x - np.asarray(x_tilde)), 1.0)

    def bound(self):
        if self.t < 1:
            raise ValueError("push at least one step first")
        return (
            (self.f0 - self.f_star) ** 2 + (self.M + 1.0) * self._nd + 4.0 * self._ie
        ) / (self.t + 1.0)

    def check_m(self, f_trace_max):
        if np.any(np.asarray(f_trace_max) > self.M):
            warnings.warn(
                "trace exceeded the bound's norm cap M; the bound is not valid there",
                RuntimeWarning,
            )


# ---------------------------------------------------------------------------
# Trace oracles: run the optimizer form step-for-step next to a neuron.
# ---------------------------------------------------------------------------


class IfRateOracle:
    """Subgradient iterate equivalent to a rate-coded IF neuron.

    State is kept in exact summed form: the iterate is
    f(t) = (f(0) + #spikes) / (t+1) and the input estimate is the running
    mean of currents. Divisions happen at read time, so ties that are exact
    in real arithmetic stay exact in floats for representable inputs.
    """

    def __init__(self, theta: float = 1.0, R: float = 1.0, u0: float = 0.0, n: int = 1):
        self.theta = theta
        self.R = R
        self.f0 = (theta - u0) / theta
        self.n = n
        self.num = np.full(n, self.f0)  # f(0) + spike count
        self.cur_sum = np.zeros(n)
        self.t = 0

    @property
    def f(self):
        """Current iterate f(t)."""
        return self.num / (self.t + 1.0)

    def step(self, I) -> np.ndarray:
        """Consume the step-t current; spike = H(R x(t)/theta - f(t-1))."""
        self.t += 1
        self.cur_sum = self.cur_sum + np.asarray(I, dtype=np.float64)
        x_tilde = self.cur_sum / self.t
        f_prev = self.num / self.t
        s = heaviside((self.R / self.theta) * x_tilde - f_prev)
        self.num = self.num + s
        return s

    @property
    def x_tilde(self):
        return self.cur_sum / max(self.t, 1)


class LifEmaOracle:
    """Constant-step subgradient iterate equivalent to an EMA-coded LIF neuron."""

    def __init__(self, theta: float = 1.0, R: float = 1.0, tau: float = 10.0,
                 u_rest: float = 0.0, u0: float = 0.0, n: int = 1):
        self.theta = theta
        self.R = R
        self.tau = tau
        self.u_rest = u_rest
        self.f0 = -u0 / (tau * theta) - u_rest / (theta * tau * (tau - 1.0))
        self.n = n
        self.f = np.full(n, self.f0)
        self.x_tilde = np.zeros(n)
        self.t = 0

    def step(self, I) -> np.ndarray:
        tau, theta, R = self.tau, self.theta, self.R
        self.t += 1
        self.x_tilde = self.x_tilde * (tau - 1.0) / tau + np.asarray(I, dtype=np.float64) / tau
        # H-argument in pre-scaled form: R x - theta (tau-1) f - theta
        s = heaviside(R * self.x_tilde - theta * (tau - 1.0) * self.f - theta)
        lin = self.u_rest / (theta * (tau - 1.0))
        self.f = self.f - (1.0 / tau) * (self.f + lin - s)
        return s


class SubgradOracle:
    """Schedule-coded subgradient iterate equivalent to the generalized
    subgradient-based neuron (clipped-ReLU objective, any schedule with
    eta(t) < 1).

        x(t) = (1 - eta(t)) x(t-1) + eta(t) I(t)
        s(t) = H(x(t) - (1 - eta(t)) f(t-1))
        f(t) = (1 - eta(t)) f(t-1) + eta(t) s(t)

    The previous iterate enters the step decision after its decay half-step;
    for the inverse schedule this is the classic rate-coded decision
    H(x_rate(t) - f(t-1)) up to a positive rescale, so the two forms
    coincide exactly there.
    """

    def __init__(self, schedule: Schedule, n: int = 1):
        self.schedule = schedule
        self.n = n
        self.f = np.zeros(n)
        self.x_tilde = np.zeros(n)
        self.t = 0

    def step(self, I) -> np.ndarray:
        self.t += 1
        eta_t = float(self.schedule(self.t))
        self.x_tilde = (1.0 - eta_t) * self.x_tilde + eta_t * np.asarray(I, dtype=np.float64)
        s = heaviside(self.x_tilde - (1.0 - eta_t) * self.f)
        self.f = (1.0 - eta_t) * self.f + eta_t * s
        return s


class SignGdOracle:
    """Sign-gradient iterate equivalent to a sign-based neuron layer.

    Decodes the raw influx currents with the signed-schedule recurrence
    (x(t) = x(t-1) - eta(t) (2 (I - b) - W), x(0) = b) and applies
    f(t) = f(t-1) - eta(t) sign(grad L(f(t-1); x(t))).
    """

    def __init__(self, obj: SqErrObjective, schedule: Schedule, W, b, n: int = 1):
        arity = 2 if obj.kind in ("max2", "misr") else 1
        self.obj = obj
        self.schedule = schedule
        self.W = np.broadcast_to(np.asarray(W, dtype=np.float64), (arity, n)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=np.float64), (arity, n)).copy()
        self.arity = arity
        self.n = n
        self.f = np.zeros(n)
        self.x_tilde = self.b.copy()
        self.t = 0

    def step(self, I) -> np.ndarray:
        """Consume raw currents of shape (arity, n); return the spike vector."""
        self.t += 1
        eta_t = float(self.schedule(self.t))
        I = np.asarray(I, dtype=np.float64).reshape(self.arity, self.n)
        self.x_tilde = self.x_tilde - eta_t * (2.0 * (I - self.b) - self.W)
        x = self.x_tilde if self.arity == 2 else self.x_tilde[0]
        sgn = gradient_sign(self.f, x, self.obj)
        self.f = self.f - eta_t * sgn
        return heaviside(sgn)  # sign +1 <-> spike 1
