"""Privacy calculus: trade-off curves, Gaussian-DP composition, and the
classical (epsilon, delta) composition theorems.

A trade-off curve f(alpha) is the minimal Type II error of any test that
distinguishes a mechanism's outputs on neighboring datasets at Type I error
alpha.  G_mu(alpha) = Phi(Phi^-1(1-alpha) - mu) is the curve for testing
N(0,1) against N(mu,1); mu-GDP compositions add in quadrature and layerwise
noise costs a sqrt(L) factor.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError

GRID_POINTS = 1001  # uniform alpha grid on [0, 1]

# Largest x with exp(x) finite in float64; guards h(sigma) below.
_EXP_OVERFLOW = math.log(np.finfo(np.float64).max)


def phi(x):
    """Standard normal CDF."""
    return norm.cdf(x)


def phi_inv(p):
    """Standard normal quantile function."""
    return norm.ppf(p)


@dataclass(frozen=True)
class TradeoffCurve:
    """A discretized trade-off function on a uniform alpha grid.

    Construction validates the trade-off axioms: values in [0, 1],
    non-increasing, convex (discrete second differences >= -1e-9), and
    f(alpha) <= 1 - alpha.
    """

    alphas: np.ndarray
    values: np.ndarray
    label: str | None = None

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "values", values)
        if alphas.ndim != 1 or alphas.size < 2 or alphas.shape != values.shape:
            raise ConfigurationError("curve needs matching 1-D alpha and value grids")
        if alphas[0] != 0.0 or alphas[-1] != 1.0 or np.any(np.diff(alphas) <= 0):
            raise ConfigurationError("alpha grid must increase from 0 to 1")
        if values[0] > 1.0 + 1e-12 or np.any(values < -1e-12):
            raise ConfigurationError("trade-off values must lie in [0, 1]")
        if np.any(np.diff(values) > 1e-12):
            raise ConfigurationError("trade-off function must be non-increasing")
        if np.any(values > 1.0 - alphas + 1e-12):
            raise ConfigurationError("trade-off function must satisfy f(alpha) <= 1 - alpha")
        second = values[2:] - 2.0 * values[1:-1] + values[:-2]
        if np.any(second < -1e-9):
            raise ConfigurationError("trade-off function must be convex")

    def at(self, alpha):
        """Linear interpolation of f at the given alpha value(s)."""
        return np.interp(alpha, self.alphas, self.values)


def _grid(k=GRID_POINTS):
    return np.linspace(0.0, 1.0, k)


def gaussian_tradeoff(mu, grid_points=GRID_POINTS):
    """G_mu on the grid: Phi(Phi^-1(1 - alpha) - mu).

    Endpoint values are set by limit analysis (G_mu(0) = 1, G_mu(1) = 0) to
    avoid evaluating Phi^-1 at 0 or 1.
    """
    if mu < 0:
        raise ConfigurationError(f"mu must be >= 0, got {mu}")
    alphas = _grid(grid_points)
    values = np.empty_like(alphas)
    values[0] = 1.0
    values[-1] = 0.0
    inner = alphas[1:-1]
    values[1:-1] = phi(phi_inv(1.0 - inner) - mu)
    return TradeoffCurve(alphas=alphas, values=values, label=f"gaussian(mu={float(mu)})")


def perfect_tradeoff(grid_points=GRID_POINTS):
    """The trade-off 1 - alpha of fully indistinguishable hypotheses."""
    alphas = _grid(grid_points)
    return TradeoffCurve(alphas=alphas, values=1.0 - alphas, label="perfect")


@dataclass(frozen=True)
class CurveComparison:
    sup_distance: float
    dominates: bool
    tol: float


def curve_compare(f, g, tol=1e-12):
    """Sup distance between two curves on a shared grid, and whether f
    stays above g - tol pointwise."""
    if f.alphas.shape != g.alphas.shape or not np.array_equal(f.alphas, g.alphas):
        raise ConfigurationError("curve comparison requires identical alpha grids")
    diff = f.values - g.values
    return CurveComparison(
        sup_distance=float(np.abs(diff).max()),
        dominates=bool(np.all(diff >= -tol)),
        tol=tol,
    )


def compose_gaussian(mus):
    """mu of the composition of mu_i-GDP mechanisms: root-sum-square."""
    mus = np.asarray(list(mus), dtype=np.float64)
    if mus.size and mus.min() < 0:
        raise ConfigurationError("all mu values must be >= 0")
    return float(np.sqrt((mus ** 2).sum()))


def layerwise_effective_sigma(sigma, layers):
    """sigma / sqrt(L): the noise multiplier giving a full-clip run the same
    guarantee as a layerwise run with L clip groups at multiplier sigma."""
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    if layers < 1:
        raise ConfigurationError(f"layer count must be >= 1, got {layers}")
    return sigma / math.sqrt(layers)


def group_privacy_gdp(mu, group_size):
    """mu-GDP for single-sample neighbors becomes (g*mu)-GDP for groups of g."""
    if mu < 0:
        raise ConfigurationError(f"mu must be >= 0, got {mu}")
    if int(group_size) != group_size or group_size < 1:
        raise ConfigurationError(f"group size must be an integer >= 1, got {group_size}")
    return float(group_size) * float(mu)


@dataclass(frozen=True)
class GuaranteeReport:
    """A Gaussian-DP guarantee with its provenance and inputs."""

    mu: float
    formula: str
    inputs: dict = field(default_factory=dict)
    eps_delta: tuple = ()
    no_privacy: bool = False

    def to_json(self):
        payload = {"mu": self.mu, "formula": self.formula, "inputs": self.inputs}
        if self.eps_delta:
            payload["eps_delta"] = [{"eps": e, "delta": d} for e, d in self.eps_delta]
        if self.no_privacy:
            payload["no_privacy"] = True
        return json.dumps(payload, sort_keys=True, default=float)


def framework_guarantee(g, epochs, sigma, layers=1, layerwise=False):
    """The run-level guarantee: mu = sqrt(g*E)/sigma, or sqrt(g*E*L)/sigma
    when each of L clip groups receives its own noise.

    sigma = 0 yields an explicit infinite-mu (no privacy) report.
    """
    for name, v in (("g", g), ("epochs", epochs), ("layers", layers)):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"{name} must be an integer >= 1, got {v}")
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    inputs = {"g": int(g), "epochs": int(epochs), "sigma": float(sigma),
              "layers": int(layers), "layerwise": bool(layerwise)}
    if sigma == 0:
        return GuaranteeReport(
            mu=float("inf"),
            formula="no privacy: sigma = 0",
            inputs=inputs,
            no_privacy=True,
        )
    if layerwise:
        mu = math.sqrt(g * epochs * layers) / sigma
        formula = "mu = sqrt(g*E*L)/sigma"
    else:
        mu = math.sqrt(g * epochs) / sigma
        formula = "mu = sqrt(g*E)/sigma"
    return GuaranteeReport(mu=mu, formula=formula, inputs=inputs)


def clt_h(sigma):
    """h(sigma) = sqrt(exp(sigma^-2) * Phi(1.5/sigma) + 3*Phi(-0.5/sigma) - 2)."""
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    inv2 = sigma ** -2.0
    if inv2 > _EXP_OVERFLOW:
        raise OverflowError(
            f"exp(sigma^-2) overflows float64 for sigma = {sigma} (sigma^-2 = {inv2:.1f})"
        )
    return math.sqrt(
        math.exp(inv2) * float(phi(1.5 / sigma)) + 3.0 * float(phi(-0.5 / sigma)) - 2.0
    )


def clt_mu(n, m, epochs, sigma):
    """Asymptotic composed guarantee mu = sqrt(2) * sqrt(E*m/N) * h(sigma).

    ``sigma`` must already include any layerwise adjustment (pass
    sigma/sqrt(L) for a layerwise run).
    """
    for name, v in (("n", n), ("m", m), ("epochs", epochs)):
        if v <= 0:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    c = math.sqrt(epochs * m / n)
    return math.sqrt(2.0) * c * clt_h(sigma)


def gaussian_mechanism_sigma(eps, delta, sensitivity):
    """Minimal admissible noise std c * sensitivity / eps with
    c = sqrt(2 * ln(1.25/delta)), valid for eps in (0, 1)."""
    if not 0.0 < eps < 1.0:
        raise ConfigurationError(f"eps must be in (0, 1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must be in (0, 1), got {delta}")
    if sensitivity < 0:
        raise ConfigurationError(f"sensitivity must be >= 0, got {sensitivity}")
    c = math.sqrt(2.0 * math.log(1.25 / delta))
    return c * sensitivity / eps


@dataclass(frozen=True)
class EpsDelta:
    eps: float
    delta: float

    def __post_init__(self):
        if self.eps < 0:
            raise ConfigurationError(f"eps must be >= 0, got {self.eps}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must be in [0, 1], got {self.delta}")


def privacy_loss(p_num, p_den):
    """ln(p_num / p_den), the privacy loss of observing an output with these
    likelihoods under the two neighboring datasets."""
    if not p_num > 0 or not p_den > 0:
        raise ConfigurationError("privacy loss needs strictly positive probabilities")
    return math.log(p_num / p_den)


def basic_composition(pairs):
    """Sequential composition: epsilons and deltas both add."""
    eps = 0.0
    delta = 0.0
    for e, d in pairs:
        eps += e
        delta += d
    return EpsDelta(eps=eps, delta=delta)


def advanced_composition(eps, delta, k, delta_prime):
    """k-fold adaptive composition of one (eps, delta)-DP mechanism:
    eps' = eps*sqrt(2k*ln(1/delta')) + k*eps*(e^eps - 1), delta' added on top
    of the k accumulated deltas."""
    if eps < 0:
        raise ConfigurationError(f"eps must be >= 0, got {eps}")
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError(f"delta must be in [0, 1], got {delta}")
    if int(k) != k or k < 1:
        raise ConfigurationError(f"k must be an integer >= 1, got {k}")
    if not 0.0 < delta_prime < 1.0:
        raise ConfigurationError(f"delta_prime must be in (0, 1), got {delta_prime}")
    eps_total = eps * math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) + k * eps * (
        math.exp(eps) - 1.0
    )
    return EpsDelta(eps=eps_total, delta=min(1.0, k * delta + delta_prime))


def group_privacy_epsdelta(eps, delta, k):
    """(eps, delta)-DP for single neighbors gives (k*eps, k*e^(k-1)*delta)-DP
    for groups of size k."""
    if eps < 0:
        raise ConfigurationError(f"eps must be >= 0, got {eps}")
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError(f"delta must be in [0, 1], got {delta}")
    if int(k) != k or k < 1:
        raise ConfigurationError(f"k must be an integer >= 1, got {k}")
    return EpsDelta(eps=k * eps, delta=min(1.0, k * math.exp(k - 1) * delta))
