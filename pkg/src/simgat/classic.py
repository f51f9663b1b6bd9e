"""Gravity and Huff spatial interaction models and their calibration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .domain import COST_FLOOR


@dataclass
class GravityParams:
    k: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not all(np.isfinite([self.k, self.alpha, self.beta, self.gamma])):
            raise ValueError("gravity parameters must be finite")


@dataclass
class HuffParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or not np.isfinite(self.beta):
            raise ValueError("Huff parameters must be finite")
        if self.beta < 0:
            raise ValueError("distance-decay exponent beta must be nonnegative")


@dataclass
class FitDiagnostics:
    deviance: float
    null_deviance: float
    pseudo_r2: float
    n_obs: int
    n_dropped_zeros: int = 0
    iterations: int = 0
    converged: bool = True
    log_likelihood: float = float("nan")


@dataclass
class FitResult:
    params: GravityParams | HuffParams
    diagnostics: FitDiagnostics
    extra: dict = field(default_factory=dict)

    def to_json(self, model: str) -> dict:
        return {"model": model, "params": asdict(self.params), "diagnostics": asdict(self.diagnostics)}


def gravity_flow(params: GravityParams, origin_mass, dest_mass, cost):
    """T = k * M_i**alpha * M_j**beta / c**gamma (broadcasts)."""
    mi, mj, c = (np.asarray(a, dtype=float) for a in (origin_mass, dest_mass, cost))
    if np.any(mi <= 0) or np.any(mj <= 0):
        raise ValueError("masses must be positive")
    if np.any(c <= 0):
        raise ValueError("costs must be positive")
    return params.k * mi**params.alpha * mj**params.beta / c**params.gamma


def huff_probability(params: HuffParams, attractiveness, costs) -> np.ndarray:
    """Choice probabilities over the last axis, normalized in log space."""
    a = np.asarray(attractiveness, dtype=float)
    c = np.asarray(costs, dtype=float)
    if a.shape[-1] < 1:
        raise ValueError("need at least one destination")
    if np.any(a <= 0):
        raise ValueError("attractiveness must be positive")
    if np.any(c <= 0):
        raise ValueError("costs must be positive")
    # dividing by the largest attractiveness first makes a common rescaling of
    # ``a`` cancel before any rounding happens
    a = a / a.max(axis=-1, keepdims=True)
    logu = params.alpha * np.log(a) - params.beta * np.log(c)
    logu = logu - logu.max(axis=-1, keepdims=True)
    u = np.exp(logu)
    return u / u.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# estimation


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    ratio = np.where(y > 0, y / mu, 1.0)
    return float(2.0 * np.sum(np.where(y > 0, y * np.log(ratio), 0.0) - (y - mu)))


def _poisson_loglik(y, eta) -> float:
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def collinear_columns(X: np.ndarray, names, tol: float = 1e-10) -> list[str]:
    """Columns that add no rank when appended left to right."""
    bad = []
    kept: list[int] = []
    scale = np.linalg.norm(X, axis=0)
    for j in range(X.shape[1]):
        trial = kept + [j]
        Z = X[:, trial] / np.where(scale[trial] > 0, scale[trial], 1.0)
        if scale[j] == 0 or np.linalg.matrix_rank(Z, tol=tol * max(1.0, np.sqrt(len(X)))) < len(trial):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def _require_full_rank(X, names):
    bad = collinear_columns(X, names)
    if bad:
        raise np.linalg.LinAlgError(f"rank-deficient design matrix; collinear columns: {', '.join(bad)}")


def irls_poisson(X, y, offset=None, tol: float = 1e-10, max_iter: int = 100, names=None):
    """Poisson log-link GLM by iteratively reweighted least squares.

    Each Newton step that lowers the log-likelihood is halved until it does
    not (at most 30 halvings).  Stops when the relative log-likelihood change
    falls below ``tol`` or after ``max_iter`` iterations.

    Returns ``(coef, eta, iterations, converged)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    off = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    if X.shape[1]:
        _require_full_rank(X, names)
    # start from a least-squares fit to log(y + 0.5)
    z0 = np.log(y + 0.5) - off
    coef = np.linalg.lstsq(X, z0, rcond=None)[0] if X.shape[1] else np.zeros(0)
    eta = X @ coef + off
    ll = _poisson_loglik(y, eta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        z = eta - off + (y - mu) / mu
        sw = np.sqrt(mu)
        new = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0] if X.shape[1] else coef
        step = new - coef
        for _ in range(30):
            cand = coef + step
            eta_c = X @ cand + off
            ll_c = _poisson_loglik(y, eta_c)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step = step / 2.0
        change = abs(ll_c - ll) / max(abs(ll), 1e-300)
        coef, eta, ll = cand, eta_c, ll_c
        if change < tol:
            converged = True
            break
    return coef, eta, it, converged


def _flatten_od(flows, origin_masses, dest_masses, costs):
    y = np.asarray(flows, dtype=float)
    c = np.asarray(costs, dtype=float)
    if y.shape != c.shape or y.ndim != 2:
        raise ValueError(f"flows {y.shape} and costs {c.shape} must be matching 2-D matrices")
    mi = np.asarray(origin_masses, dtype=float)
    mj = np.asarray(dest_masses, dtype=float)
    if mi.shape != (y.shape[0],) or mj.shape != (y.shape[1],):
        raise ValueError("mass vectors do not match the flow matrix")
    if np.any(y < 0):
        raise ValueError("flows must be nonnegative")
    if np.any(mi <= 0) or np.any(mj <= 0):
        raise ValueError("masses must be positive")
    if np.any(c < COST_FLOOR):
        raise ValueError(f"costs must be at least the cost floor {COST_FLOOR}")
    Mi = np.broadcast_to(mi[:, None], y.shape).ravel()
    Mj = np.broadcast_to(mj[None, :], y.shape).ravel()
    return y.ravel(), np.log(Mi), np.log(Mj), np.log(c.ravel())


_GRAVITY_TERMS = ("alpha", "beta", "gamma")


def fit_gravity(
    flows,
    origin_masses,
    dest_masses,
    costs,
    method: str = "poisson",
    fixed: dict | None = None,
    exposure: float = 1.0,
) -> FitResult:
    """Calibrate k, alpha, beta, gamma on an (origins x destinations) flow matrix.

    ``method="log-ols"`` regresses ln T on the log masses and log cost using
    positive flows only; ``method="poisson"`` maximizes the Poisson likelihood
    with IRLS on all flows.  ``fixed`` pins any of alpha/beta/gamma (they move
    into the offset).  ``exposure`` divides the fitted k, e.g. the number of
    days summed into ``flows``.
    """
    y, lmi, lmj, lc = _flatten_od(flows, origin_masses, dest_masses, costs)
    fixed = dict(fixed or {})
    columns = {"alpha": lmi, "beta": lmj, "gamma": -lc}
    free = [t for t in _GRAVITY_TERMS if t not in fixed]
    names = ["log_k"] + free
    offset = sum((fixed[t] * columns[t] for t in fixed), np.zeros_like(y)) + np.log(exposure)
    X = np.column_stack([np.ones_like(y)] + [columns[t] for t in free])
    dropped = 0
    if method == "log-ols":
        pos = y > 0
        dropped = int((~pos).sum())
        if pos.sum() < X.shape[1]:
            raise ValueError("not enough positive flows for log-ols")
        _require_full_rank(X[pos], names)
        coef = np.linalg.lstsq(X[pos], np.log(y[pos]) - offset[pos], rcond=None)[0]
        iterations, converged = 1, True
    elif method == "poisson":
        coef, _, iterations, converged = irls_poisson(X, y, offset, names=names)
    else:
        raise ValueError(f"unknown method {method!r}")
    values = dict(zip(free, coef[1:]))
    values.update(fixed)
    params = GravityParams(k=float(np.exp(coef[0])), **{t: float(values[t]) for t in _GRAVITY_TERMS})
    eta = X @ coef + offset
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    null = poisson_deviance(y, np.full_like(y, y.mean()))
    diag = FitDiagnostics(
        deviance=dev,
        null_deviance=null,
        pseudo_r2=1.0 - dev / null if null > 0 else 0.0,
        n_obs=int(len(y) - dropped),
        n_dropped_zeros=dropped,
        iterations=iterations,
        converged=converged,
        log_likelihood=_poisson_loglik(y, eta),
    )
    return FitResult(params, diag, {"fitted": mu.reshape(np.shape(flows))})


def fit_huff(flows, attractiveness, costs) -> FitResult:
    """Calibrate Huff's alpha and beta from origin-by-destination flows.

    Poisson regression with one fixed effect per origin reproduces the
    multinomial (choice-share) likelihood of the Huff model, so the origin
    effects absorb each origin's total and only alpha and beta remain.
    """
    y = np.asarray(flows, dtype=float)
    c = np.asarray(costs, dtype=float)
    a = np.asarray(attractiveness, dtype=float)
    if y.shape != c.shape or a.shape != (y.shape[1],):
        raise ValueError(f"shape mismatch: flows {y.shape}, costs {c.shape}, attractiveness {a.shape}")
    if np.any(y < 0) or np.any(a <= 0) or np.any(c <= 0):
        raise ValueError("flows must be nonnegative; attractiveness and costs must be positive")
    keep = y.sum(axis=1) > 0
    yk, ck = y[keep], c[keep]
    m, n = yk.shape
    dummies = np.kron(np.eye(m), np.ones((n, 1)))
    la = np.broadcast_to(np.log(a)[None, :], yk.shape).ravel()
    X = np.column_stack([dummies, la, -np.log(ck.ravel())])
    names = [f"origin{j}" for j in range(m)] + ["alpha", "beta"]
    coef, eta, iterations, converged = irls_poisson(X, yk.ravel(), names=names)
    alpha, beta = coef[-2], coef[-1]
    mu = np.exp(eta)
    dev = poisson_deviance(yk.ravel(), mu)
    shares = yk.sum(axis=1, keepdims=True) / n
    null = poisson_deviance(yk.ravel(), np.broadcast_to(shares, yk.shape).ravel())
    diag = FitDiagnostics(
        deviance=dev,
        null_deviance=null,
        pseudo_r2=1.0 - dev / null if null > 0 else 0.0,
        n_obs=int(yk.size),
        iterations=iterations,
        converged=converged,
        log_likelihood=_poisson_loglik(yk.ravel(), eta),
    )
    if beta < 0:
        raise ValueError(f"fitted distance-decay exponent is negative ({beta:.4g}); Huff requires beta >= 0")
    return FitResult(HuffParams(float(alpha), float(beta)), diag)
