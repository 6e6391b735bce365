"""Seasonal ARIMA estimation and forecasting from first principles.

The model is cast in the standard ARMA state-space form after differencing,
the exact Gaussian likelihood is evaluated with a Kalman filter initialized
from the stationary covariance (discrete Lyapunov solve), and coefficients
are estimated by Nelder-Mead over a partial-autocorrelation
reparameterization that keeps every iterate stationary and invertible.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import minimize
from scipy.signal import lfilter


class SarimaError(Exception):
    """Base class for estimation and filtering failures."""


class ConstraintViolationError(SarimaError):
    """Coefficients describe a non-stationary or non-invertible process."""


class NumericalError(SarimaError):
    """The filter produced a non-finite prediction variance."""


class ConvergenceError(SarimaError):
    """Optimizer hit its iteration cap; carries the best iterate found."""

    def __init__(self, message: str, best_params):
        super().__init__(message)
        self.best_params = best_params


class InsufficientDataError(SarimaError):
    """Series too short for the requested orders."""


@dataclass(frozen=True)
class SarimaOrder:
    """Orders (p,d,q) x (P,D,Q,s). s=1 collapses the seasonal part."""

    p: int
    d: int
    q: int
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 1

    def __post_init__(self):
        for name in ("p", "d", "q", "P", "D", "Q"):
            value = getattr(self, name)
            if not 0 <= value <= 5:
                raise ValueError(f"order {name}={value} outside the supported range 0..5")
        if self.s < 1:
            raise ValueError("seasonal period s must be >= 1")
        if self.s == 1 and (self.P or self.D or self.Q):
            raise ValueError("seasonal orders require a period s > 1")

    @property
    def n_coefficients(self) -> int:
        return self.p + self.P + self.q + self.Q

    @property
    def diff_span(self) -> int:
        """Observations consumed by differencing."""
        return self.d + self.D * self.s


@dataclass(frozen=True)
class SarimaParams:
    """Coefficient vectors plus the innovation variance."""

    ar: np.ndarray
    seasonal_ar: np.ndarray
    ma: np.ndarray
    seasonal_ma: np.ndarray
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0 or not math.isfinite(self.sigma2):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")


@dataclass(frozen=True)
class StateSpace:
    """ARMA state-space system: alpha' = T alpha + R eps, y = alpha[0]."""

    transition: np.ndarray  # (r, r)
    innovation: np.ndarray  # (r,)
    sigma2: float

    @property
    def dim(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class SarimaModel:
    """A fitted model, immutable and shareable for forecasting."""

    order: SarimaOrder
    params: SarimaParams
    loglik: float
    training_series: np.ndarray = field(repr=False)

    def __post_init__(self):
        series = np.ascontiguousarray(self.training_series, dtype=float)
        series.flags.writeable = False
        object.__setattr__(self, "training_series", series)


def seasonal_difference(series, d: int, D: int, s: int) -> np.ndarray:
    """Apply (1-B)^d (1-B^s)^D; output shrinks by d + D*s observations."""
    values = np.asarray(series, dtype=float)
    if len(values) <= d + D * s:
        raise InsufficientDataError(
            f"series of length {len(values)} cannot absorb d={d}, D={D}, s={s}"
        )
    for _ in range(d):
        values = values[1:] - values[:-1]
    for _ in range(D):
        values = values[s:] - values[:-s]
    return values


def difference_polynomial(d: int, D: int, s: int) -> np.ndarray:
    """Coefficients of (1-B)^d (1-B^s)^D, ascending powers of the lag operator."""
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    seasonal = np.zeros(s + 1)
    seasonal[0], seasonal[s] = 1.0, -1.0
    for _ in range(D):
        poly = np.convolve(poly, seasonal)
    return poly


def _expand_ar(order: SarimaOrder, ar, seasonal_ar) -> np.ndarray:
    """Coefficients a_k of the product (1 - phi B)(1 - Phi B^s) = 1 - sum a_k B^k."""
    plain = np.concatenate(([1.0], -np.asarray(ar, dtype=float)))
    seasonal = np.zeros(order.P * order.s + 1)
    seasonal[0] = 1.0
    for i, coef in enumerate(np.asarray(seasonal_ar, dtype=float), start=1):
        seasonal[i * order.s] = -coef
    product = np.polynomial.polynomial.polymul(plain, seasonal)
    return -product[1:]


def _expand_ma(order: SarimaOrder, ma, seasonal_ma) -> np.ndarray:
    """Coefficients b_k of the product (1 + theta B)(1 + Theta B^s) = 1 + sum b_k B^k."""
    plain = np.concatenate(([1.0], np.asarray(ma, dtype=float)))
    seasonal = np.zeros(order.Q * order.s + 1)
    seasonal[0] = 1.0
    for i, coef in enumerate(np.asarray(seasonal_ma, dtype=float), start=1):
        seasonal[i * order.s] = coef
    product = np.polynomial.polynomial.polymul(plain, seasonal)
    return product[1:]


def _min_root_modulus(lag_poly: np.ndarray) -> float:
    """Smallest root modulus of a lag polynomial given ascending coefficients."""
    coeffs = np.trim_zeros(lag_poly, "b")
    if len(coeffs) <= 1:
        return math.inf
    roots = np.polynomial.polynomial.polyroots(coeffs)
    return float(np.abs(roots).min()) if len(roots) else math.inf


def to_state_space(order: SarimaOrder, params: SarimaParams, validate: bool = True) -> StateSpace:
    """Build the state-space system for the differenced (stationary) process.

    State dimension r = max(p + P*s, q + Q*s + 1); the transition carries the
    expanded AR coefficients in its first column with an identity shifted one
    to the right, and the innovation vector carries [1, expanded MA...].
    """
    ar_full = _expand_ar(order, params.ar, params.seasonal_ar)
    ma_full = _expand_ma(order, params.ma, params.seasonal_ma)

    if validate:
        if _min_root_modulus(np.concatenate(([1.0], -ar_full))) <= 1.0:
            raise ConstraintViolationError("AR polynomial has a root inside the unit circle")
        if _min_root_modulus(np.concatenate(([1.0], ma_full))) <= 1.0:
            raise ConstraintViolationError("MA polynomial has a root inside the unit circle")

    r = max(len(ar_full), len(ma_full) + 1)
    transition = np.zeros((r, r))
    transition[: len(ar_full), 0] = ar_full
    transition[:-1, 1:] = np.eye(r - 1)
    innovation = np.zeros(r)
    innovation[0] = 1.0
    innovation[1: len(ma_full) + 1] = ma_full
    return StateSpace(transition, innovation, params.sigma2)


_STEADY_TOL = 1e-13


def _kalman_filter(system: StateSpace, observations) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Run the filter; return (loglik, innovations, innovation variances, a_{n+1|n}).

    Initial state covariance is the stationary solution of P = T P T' + Q.
    Once P stops changing the gain is frozen, which cuts the per-step cost
    without altering the likelihood beyond roundoff.
    """
    y = np.asarray(observations, dtype=float)
    if not np.isfinite(y).all():
        raise NumericalError("observations contain non-finite values")
    n = len(y)
    T = system.transition
    Q = system.sigma2 * np.outer(system.innovation, system.innovation)
    try:
        P = solve_discrete_lyapunov(T, Q)
    except Exception as exc:  # singular/ill-conditioned transition
        raise NumericalError(f"stationary covariance solve failed: {exc}") from exc

    r = system.dim
    a = np.zeros(r)
    v = np.empty(n)
    F = np.empty(n)
    steady = False
    gain = np.zeros(r)
    f_cur = 0.0
    for t in range(n):
        if not steady:
            f_cur = P[0, 0]
            if not math.isfinite(f_cur) or f_cur <= 0.0:
                raise NumericalError(f"non-positive prediction variance at step {t}: {f_cur}")
            pz = P[:, 0]
            gain = T @ (pz / f_cur)
            P_next = T @ (P - np.outer(pz, pz) / f_cur) @ T.T + Q
            if np.abs(P_next - P).max() <= _STEADY_TOL * (1.0 + abs(f_cur)):
                steady = True
            P = P_next
        v[t] = y[t] - a[0]
        F[t] = f_cur
        a = T @ a + gain * v[t]

    loglik = -0.5 * (n * math.log(2.0 * math.pi) + np.log(F).sum() + (v * v / F).sum())
    if not math.isfinite(loglik):
        raise NumericalError("log-likelihood is not finite")
    return float(loglik), v, F, a


def kalman_loglik(system: StateSpace, observations) -> float:
    """Exact Gaussian log-likelihood of the differenced observations."""
    return _kalman_filter(system, observations)[0]


# --- stationarity-preserving reparameterization -----------------------------

def _pacf_to_coeffs(z: np.ndarray) -> np.ndarray:
    """Unconstrained reals -> AR coefficients of a stationary polynomial."""
    partials = z / np.sqrt(1.0 + z * z)
    phi = np.zeros(0)
    for rk in partials:
        phi = np.append(phi - rk * phi[::-1], rk)
    return phi


def _coeffs_to_pacf(phi: np.ndarray) -> np.ndarray:
    """Inverse of _pacf_to_coeffs; raises if the polynomial is not stationary."""
    cur = np.asarray(phi, dtype=float)
    partials = np.empty(len(cur))
    for k in reversed(range(len(cur))):
        rk = cur[-1]
        if abs(rk) >= 1.0:
            raise ConstraintViolationError("coefficients are outside the stationary region")
        partials[k] = rk
        cur = (cur[:-1] + rk * cur[:-1][::-1]) / (1.0 - rk * rk)
    return partials / np.sqrt(1.0 - partials * partials)


def _z_to_params(order: SarimaOrder, z: np.ndarray) -> SarimaParams:
    p, P, q, Q = order.p, order.P, order.q, order.Q
    ar = _pacf_to_coeffs(z[:p])
    sar = _pacf_to_coeffs(z[p: p + P])
    ma = -_pacf_to_coeffs(z[p + P: p + P + q])
    sma = -_pacf_to_coeffs(z[p + P + q: p + P + q + Q])
    sigma2 = math.exp(z[-1])
    return SarimaParams(ar, sar, ma, sma, sigma2)


def _params_to_z(order: SarimaOrder, params: SarimaParams) -> np.ndarray:
    return np.concatenate([
        _coeffs_to_pacf(params.ar),
        _coeffs_to_pacf(params.seasonal_ar),
        _coeffs_to_pacf(-params.ma),
        _coeffs_to_pacf(-params.seasonal_ma),
        [math.log(params.sigma2)],
    ])


# --- estimation --------------------------------------------------------------

_DEFAULT_START = 0.1


def _css_objective(order: SarimaOrder, z_coeffs: np.ndarray, w: np.ndarray) -> float:
    """Conditional sum of squares with zero pre-sample values."""
    p, P, q, Q = order.p, order.P, order.q, order.Q
    ar = _pacf_to_coeffs(z_coeffs[:p])
    sar = _pacf_to_coeffs(z_coeffs[p: p + P])
    ma = -_pacf_to_coeffs(z_coeffs[p + P: p + P + q])
    sma = -_pacf_to_coeffs(z_coeffs[p + P + q:])
    ar_poly = np.concatenate(([1.0], -_expand_ar(order, ar, sar)))
    ma_poly = np.concatenate(([1.0], _expand_ma(order, ma, sma)))
    resid = lfilter(ar_poly, ma_poly, w)
    skip = min(len(ar_poly) - 1, len(w) - 1)
    ssr = float(np.square(resid[skip:]).sum())
    return ssr if math.isfinite(ssr) else 1e300


def _start_parameters(order: SarimaOrder, w: np.ndarray) -> np.ndarray:
    """Deterministic optimizer start: a short CSS pass where the series allows it."""
    k = order.n_coefficients
    z_default = np.full(k, _DEFAULT_START / math.sqrt(1.0 - _DEFAULT_START**2))
    sample_var = max(float(np.var(w)), 1e-8)
    if k == 0:
        return np.array([math.log(sample_var)])

    max_lag = order.p + order.P * order.s + order.q + order.Q * order.s
    if len(w) < max_lag + 20:
        return np.concatenate([z_default, [math.log(sample_var)]])

    res = minimize(
        lambda z: _css_objective(order, z, w),
        z_default,
        method="Nelder-Mead",
        options={"xatol": 1e-5, "fatol": 1e-5, "maxiter": 500},
    )
    z_coeffs = res.x if np.isfinite(res.fun) else z_default
    ssr = _css_objective(order, z_coeffs, w)
    sigma2 = max(ssr / max(len(w) - max_lag, 1), 1e-8)
    return np.concatenate([z_coeffs, [math.log(sigma2)]])


def fit(order: SarimaOrder, series, maxiter: int = 2000, tol: float = 1e-8) -> SarimaModel:
    """Exact maximum-likelihood fit; deterministic for a given series.

    The series is differenced per the order, a CSS pass seeds the start, and
    Nelder-Mead maximizes the Kalman likelihood in the transformed space.
    """
    values = np.ascontiguousarray(series, dtype=float)
    adequacy = 10 * (order.diff_span + order.p + order.q + (order.P + order.Q) * order.s)
    if len(values) < adequacy:
        warnings.warn(
            f"series length {len(values)} is below the suggested minimum {adequacy} "
            f"for orders {order}",
            stacklevel=2,
        )
    w = seasonal_difference(values, order.d, order.D, order.s)
    if len(w) < order.n_coefficients + 2:
        raise InsufficientDataError(
            f"{len(w)} differenced observations cannot identify {order.n_coefficients} coefficients"
        )

    def neg_loglik(z: np.ndarray) -> float:
        if abs(z[-1]) > 60.0 or np.abs(z[:-1]).max(initial=0.0) > 1e8:
            return 1e12
        try:
            params = _z_to_params(order, z)
            system = to_state_space(order, params)
            return -kalman_loglik(system, w)
        except (ConstraintViolationError, NumericalError, ValueError):
            return 1e12

    z0 = _start_parameters(order, w)
    result = minimize(
        neg_loglik,
        z0,
        method="Nelder-Mead",
        options={"xatol": tol, "fatol": tol, "maxiter": maxiter, "maxfev": 4 * maxiter},
    )
    if not result.success:
        raise ConvergenceError(
            f"Nelder-Mead did not converge within {maxiter} iterations",
            _z_to_params(order, result.x),
        )
    params = _z_to_params(order, result.x)
    system = to_state_space(order, params)  # re-validate stationarity/invertibility
    loglik = kalman_loglik(system, w)
    return SarimaModel(order, params, loglik, values)


# --- prediction ---------------------------------------------------------------

def forecast(model: SarimaModel, horizon: int) -> np.ndarray:
    """Iterate the state prediction on the differenced scale and re-integrate."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return np.empty(0)
    order = model.order
    w = seasonal_difference(model.training_series, order.d, order.D, order.s)
    system = to_state_space(order, model.params)
    _, _, _, a = _kalman_filter(system, w)

    poly = difference_polynomial(order.d, order.D, order.s)
    span = len(poly) - 1
    extended = list(model.training_series[-span:]) if span else []
    T = system.transition
    predictions = np.empty(horizon)
    for h in range(horizon):
        w_hat = a[0]
        a = T @ a
        y_hat = w_hat - sum(poly[k] * extended[-k] for k in range(1, span + 1))
        predictions[h] = y_hat
        if span:
            extended.append(y_hat)
    return predictions


def in_sample_residuals(model: SarimaModel) -> np.ndarray:
    """One-step-ahead prediction errors on the original scale.

    The first d + D*s entries are 0: differencing leaves no prediction there.
    For later steps the one-step prediction re-uses actual lagged values, so
    the original-scale error equals the filter innovation.
    """
    order = model.order
    w = seasonal_difference(model.training_series, order.d, order.D, order.s)
    system = to_state_space(order, model.params)
    _, innovations, _, _ = _kalman_filter(system, w)
    return np.concatenate([np.zeros(order.diff_span), innovations])


# --- persistence --------------------------------------------------------------

def series_digest(series) -> str:
    data = np.ascontiguousarray(series, dtype=float)
    return hashlib.sha256(data.tobytes()).hexdigest()


def sarima_to_dict(model: SarimaModel) -> dict:
    return {
        "order": [model.order.p, model.order.d, model.order.q],
        "seasonal_order": [model.order.P, model.order.D, model.order.Q, model.order.s],
        "ar": [float(x) for x in model.params.ar],
        "seasonal_ar": [float(x) for x in model.params.seasonal_ar],
        "ma": [float(x) for x in model.params.ma],
        "seasonal_ma": [float(x) for x in model.params.seasonal_ma],
        "sigma2": float(model.params.sigma2),
        "loglik": float(model.loglik),
        "n_observations": int(len(model.training_series)),
        "training_digest": series_digest(model.training_series),
    }


def save_sarima(model: SarimaModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(sarima_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sarima(path, training_series) -> SarimaModel:
    """Rebuild a fitted model; the caller supplies the series it was fitted on."""
    with open(path) as fh:
        doc = json.load(fh)
    series = np.ascontiguousarray(training_series, dtype=float)
    if len(series) != doc["n_observations"]:
        raise ValueError(
            f"training series has {len(series)} observations, model expects {doc['n_observations']}"
        )
    if series_digest(series) != doc["training_digest"]:
        raise ValueError("training series does not match the digest stored with the model")
    order = SarimaOrder(*doc["order"], *doc["seasonal_order"])
    params = SarimaParams(
        np.array(doc["ar"]),
        np.array(doc["seasonal_ar"]),
        np.array(doc["ma"]),
        np.array(doc["seasonal_ma"]),
        doc["sigma2"],
    )
    return SarimaModel(order, params, doc["loglik"], series)
