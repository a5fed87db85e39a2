"""Over-dispersed Poisson fitting by IRLS with a log link.

Quasi-likelihood: Var[y] = phi * mu with prior cell weights. The dispersion
phi is estimated from the Pearson chi-square over residual degrees of
freedom; zero-weight rows are excluded from the score, the Pearson sum, and
the effective sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

MAX_ITERATIONS = 100
DEVIANCE_RTOL = 1e-10
PIVOT_RTOL = 1e-10


class RankDeficientError(ValueError):
    """Design columns linearly dependent on the weighted rows."""

    def __init__(self, column: int, name: str | None = None):
        self.column = column
        label = name if name is not None else f"column {column}"
        super().__init__(f"design is rank deficient: {label} is linearly dependent on earlier columns")


class FitError(ValueError):
    """Unusable fitting inputs (too few rows, bad shapes, bad weights)."""


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    covariance: np.ndarray
    dispersion: float
    fitted_means: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    effective_n: int
    p: int
    term_names: tuple[str, ...] | None = None

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _poisson_deviance(y: np.ndarray, mu: np.ndarray, w: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(w * (ylogy - (y - mu))))


def _check_rank(xw: np.ndarray, names: tuple[str, ...] | None) -> None:
    # rank-revealing QR on the weighted design; a collapsed pivot names the
    # first column expressible from those before it
    _, r, piv = scipy.linalg.qr(xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise RankDeficientError(int(piv[0]), names[piv[0]] if names else None)
    bad = np.nonzero(diag < PIVOT_RTOL * diag[0])[0]
    if bad.size:
        col = int(piv[bad[0]])
        raise RankDeficientError(col, names[col] if names else None)


def fit_odp(
    design: np.ndarray,
    response: np.ndarray,
    weights: np.ndarray | None = None,
    term_names: tuple[str, ...] | None = None,
    max_iterations: int = MAX_ITERATIONS,
    tol: float = DEVIANCE_RTOL,
) -> FitResult:
    """Maximise the Poisson quasi-likelihood with prior weights.

    Returns a result flagged `converged=False` after `max_iterations` rather
    than raising; rank deficiency and effective_n <= p raise.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y) or len(w) != len(y):
        raise FitError(f"shape mismatch: X {X.shape}, y {y.shape}, w {w.shape}")
    if np.any(y < 0):
        raise FitError("response must be nonnegative counts")
    if np.any(w < 0):
        raise FitError("weights must be nonnegative")

    n, p = X.shape
    active = w > 0
    n_eff = int(active.sum())
    if n_eff <= p:
        raise FitError(f"need more weighted rows than columns: effective n {n_eff} <= p {p}")
    _check_rank(X[active], term_names)

    # safe count-GLM start, then Fisher scoring on the working response
    mu = np.where(active, y + 0.5, 1.0)
    eta = np.log(mu)
    deviance = _poisson_deviance(y[active], mu[active], w[active])
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        wls = w * mu  # canonical log link: working weight = prior weight * mu
        z = eta + (y - mu) / mu
        sw = np.sqrt(wls[active])
        beta, *_ = np.linalg.lstsq(X[active] * sw[:, None], z[active] * sw, rcond=None)
        eta = X @ beta
        eta = np.clip(eta, -700, 700)
        mu = np.exp(eta)
        new_deviance = _poisson_deviance(y[active], mu[active], w[active])
        if abs(new_deviance - deviance) <= tol * (abs(deviance) + 0.1):
            deviance = new_deviance
            converged = True
            break
        deviance = new_deviance

    pearson = float(np.sum(w[active] * (y[active] - mu[active]) ** 2 / mu[active]))
    dof = n_eff - p
    dispersion = pearson / dof
    xtwx = (X[active] * (w * mu)[active, None]).T @ X[active]
    covariance = dispersion * np.linalg.pinv(xtwx)

    return FitResult(
        coefficients=beta,
        covariance=covariance,
        dispersion=dispersion,
        fitted_means=mu,
        deviance=deviance,
        iterations=iterations,
        converged=converged,
        effective_n=n_eff,
        p=p,
        term_names=term_names,
    )


def predict(coefficients: np.ndarray, design_rows: np.ndarray) -> np.ndarray:
    """exp of the linear predictor, row-wise."""
    X = np.atleast_2d(np.asarray(design_rows, dtype=float))
    beta = np.asarray(coefficients, dtype=float)
    if X.shape[1] != len(beta):
        raise FitError(f"design has {X.shape[1]} columns but {len(beta)} coefficients given")
    return np.exp(np.clip(X @ beta, -700, 700))


def deviance_residuals(response: np.ndarray, fitted_means: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Signed square-root deviance contributions; zero-weight rows give 0."""
    y = np.asarray(response, dtype=float)
    mu = np.asarray(fitted_means, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(y / mu), 0.0)
    dev = 2.0 * w * (ylogy - (y - mu))
    return np.sign(y - mu) * np.sqrt(np.clip(dev, 0.0, None))


def simulate_counts(mu: np.ndarray, dispersion: float, seed: int) -> np.ndarray:
    """Draw counts with mean mu and variance dispersion * mu.

    dispersion 1 gives Poisson draws; above 1, negative binomial with the
    matching first two moments. Deterministic for a fixed seed.
    """
    if dispersion < 1.0:
        raise FitError(f"dispersion must be >= 1, got {dispersion}")
    mu = np.asarray(mu, dtype=float)
    rng = np.random.default_rng(seed)
    if dispersion == 1.0:
        return rng.poisson(mu).astype(float)
    # NB parameterisation: size r = mu/(phi-1), success prob p = 1/phi
    r = mu / (dispersion - 1.0)
    out = np.zeros_like(mu)
    positive = mu > 0
    out[positive] = rng.negative_binomial(r[positive], 1.0 / dispersion)
    return out.astype(float)


def simulate_from_model(coefficients: np.ndarray, design_rows: np.ndarray, dispersion: float, seed: int) -> np.ndarray:
    """Synthetic counts for the design rows under the fitted model."""
    return simulate_counts(predict(coefficients, design_rows), dispersion, seed)


def export_fit(fit: FitResult) -> str:
    """Delimited coefficient table with a header line of fit metadata."""
    lines = [
        f"# dispersion={fit.dispersion:.6f} deviance={fit.deviance:.6f} "
        f"iterations={fit.iterations} converged={fit.converged} "
        f"effective_n={fit.effective_n} p={fit.p}",
        "term,estimate,std_error",
    ]
    names = fit.term_names or tuple(f"b{k}" for k in range(fit.p))
    for name, est, se in zip(names, fit.coefficients, fit.std_errors):
        lines.append(f"{name},{est:.6f},{se:.6f}")
    return "\n".join(lines) + "\n"
