"""Exact small-instance divergences: Hellinger, KL, total variation, the
squared-difference ratio divergence (LSD) and the mixture-KL bound.

All finite computations enumerate atoms directly.  The scalar Gaussian LSD is
computed by adaptive Simpson quadrature.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DomainError, QuadratureError, ShapeError
from .expfam import ScaledParam

__all__ = [
    "FiniteDist",
    "ProductBernoulliPM1",
    "ScalarGaussianTriple",
    "hellinger_sq",
    "kl_div",
    "tv_dist",
    "lsd",
    "lsd_gaussian",
    "mixture_kl_pair",
    "lsd_upper_bound",
    "alpha_floor",
    "max_pairwise_distance",
    "adaptive_simpson",
]

MAX_SUPPORT = 4096
SUM_TOL = 1e-12


@dataclass(frozen=True)
class FiniteDist:
    """Probability vector over ``support_size`` atoms."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or not 1 <= p.size <= MAX_SUPPORT:
            raise ShapeError(f"probs must be a vector with 1..{MAX_SUPPORT} entries, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"probabilities sum to {p.sum():.17g}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return self.probs.size

    @classmethod
    def from_weights(cls, weights) -> "FiniteDist":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())


@dataclass(frozen=True)
class ProductBernoulliPM1:
    """Independent {-1,+1} coordinates with P(+1) = 1 / (1 + exp(-2 theta_j))."""

    theta_alpha: np.ndarray

    def __post_init__(self) -> None:
        th = np.atleast_1d(np.asarray(self.theta_alpha, dtype=float))
        if th.ndim != 1 or not 1 <= th.size <= 12:
            raise ShapeError("ProductBernoulliPM1 supports dimension 1..12")
        object.__setattr__(self, "theta_alpha", th)

    @property
    def dim(self) -> int:
        return self.theta_alpha.size

    def atoms(self) -> np.ndarray:
        """All 2**p sign vectors, in lexicographic order with -1 before +1."""
        return np.array(list(itertools.product((-1.0, 1.0), repeat=self.dim)))

    def to_finite(self) -> FiniteDist:
        xi = self.atoms()
        th = self.theta_alpha
        # log p(xi) = sum_j [xi_j th_j - log(e^-th_j + e^th_j)]
        a = np.abs(th)
        log_z = a + np.log1p(np.exp(-2.0 * a))
        logp = xi @ th - log_z.sum()
        p = np.exp(logp)
        return FiniteDist(p / p.sum())


@dataclass(frozen=True)
class ScalarGaussianTriple:
    """Three unit-shape Gaussians N(mu, alpha**2) sharing one scale."""

    mu_b: float
    mu_b_prime: float
    mu_a: float
    alpha: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be > 0, got {self.alpha!r}")
        for v in (self.mu_b, self.mu_b_prime, self.mu_a):
            if not math.isfinite(v):
                raise DomainError("means must be finite")


def _pair(p: FiniteDist, q: FiniteDist) -> tuple[np.ndarray, np.ndarray]:
    if p.support_size != q.support_size:
        raise ShapeError(f"support sizes differ: {p.support_size} vs {q.support_size}")
    return p.probs, q.probs


def hellinger_sq(p: FiniteDist, q: FiniteDist) -> float:
    """Squared Hellinger distance with the 1/2 convention, in [0, 1]."""
    a, b = _pair(p, q)
    d = np.sqrt(a) - np.sqrt(b)
    return float(min(0.5 * np.dot(d, d), 1.0))


def _xlogx_gap(r: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
    """(1 + r) log(1 + r) - r, accurate for small |r|; ``u`` is ``1 + r`` computed directly when known."""
    u = 1.0 + r if u is None else u
    out = np.empty_like(r)
    small = np.abs(r) < 1e-2
    rs = r[small]
    acc = np.zeros_like(rs)
    power = rs * rs
    for k in range(2, 12):
        acc += ((-1) ** k) * power / (k * (k - 1))
        power = power * rs
    out[small] = acc
    rb, ub = r[~small], u[~small]
    out[~small] = ub * np.log(ub) - rb
    return out


def _kl_arrays(a: np.ndarray, b: np.ndarray) -> float:
    bad = (a > 0) & (b <= 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"first distribution is not absolutely continuous w.r.t. the second (atom {i})")
    pos = a > 0
    # Sum of nonnegative terms q*[(1+r)log(1+r) - r] with r = p/q - 1, plus q on atoms where p = 0.
    qa = b[pos]
    r = (a[pos] - qa) / qa
    total = np.sum(qa * _xlogx_gap(r, a[pos] / qa)) + np.sum(b[~pos])
    return float(total)


def kl_div(p: FiniteDist, q: FiniteDist) -> float:
    """KL(p || q) with 0 log 0 = 0; raises if p puts mass where q has none."""
    a, b = _pair(p, q)
    return _kl_arrays(a, b)


def tv_dist(p: FiniteDist, q: FiniteDist) -> float:
    """Total variation with the 1/2 convention."""
    a, b = _pair(p, q)
    return float(0.5 * np.sum(np.abs(a - b)))


def _lsd_arrays(pb: np.ndarray, pbp: np.ndarray, pa: np.ndarray) -> float:
    diff = pb - pbp
    zero = pa <= 0
    if np.any(zero & (diff != 0)):
        i = int(np.flatnonzero(zero & (diff != 0))[0])
        raise DomainError(f"reference distribution has zero mass on atom {i} where the pair differs")
    live = ~zero
    return float(np.sum(diff[live] ** 2 / pa[live]))


def lsd(p_b: FiniteDist, p_b_prime: FiniteDist, p_a: FiniteDist) -> float:
    """sum_i (p_i - p'_i)^2 / a_i."""
    a, b = _pair(p_b, p_b_prime)
    _, c = _pair(p_b, p_a)
    return _lsd_arrays(a, b, c)


def adaptive_simpson(f, lo: float, hi: float, tol: float, max_depth: int = 50, initial_panels: int = 64,
                     max_evals: int = 2_000_000) -> float:
    """Adaptive Simpson quadrature of a vectorised integrand over [lo, hi].

    All unresolved panels of one refinement level are processed together.
    Each panel is accepted once the Richardson estimate of its error is below
    its share of ``tol`` (proportional to panel width).
    """
    if not hi > lo:
        raise DomainError("integration bounds must satisfy hi > lo")
    edges = np.linspace(lo, hi, initial_panels + 1)
    a, b = edges[:-1], edges[1:]
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    width = hi - lo
    total = 0.0
    evals = 3 * initial_panels
    for _ in range(max_depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        evals += 2 * a.size
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        ok = np.abs(err) <= 15.0 * tol * (b - a) / width
        total += float(np.sum((left + right + err / 15.0)[ok]))
        keep = ~ok
        if not np.any(keep):
            return total
        if evals > max_evals:
            break
        a, m, b = a[keep], m[keep], b[keep]
        fa, fm, fb = fa[keep], fm[keep], fb[keep]
        flm, frm = flm[keep], frm[keep]
        left, right = left[keep], right[keep]
        # Split each unresolved panel into its two halves.
        a, m, b = np.concatenate([a, m]), np.concatenate([lm[keep], rm[keep]]), np.concatenate([m, b])
        fa, fm, fb = np.concatenate([fa, fm]), np.concatenate([flm, frm]), np.concatenate([fm, fb])
        whole = np.concatenate([left, right])
    raise QuadratureError(f"adaptive Simpson did not converge ({a.size} unresolved panels)")


def _gaussian_lsd_integrand(t: ScalarGaussianTriple):
    s2 = t.alpha * t.alpha
    norm = 1.0 / math.sqrt(2.0 * math.pi * s2)

    def f(x: np.ndarray) -> np.ndarray:
        # phi_b / sqrt(phi_a) in log form avoids dividing two underflowing densities.
        qa = (x - t.mu_a) ** 2 / (4.0 * s2)
        u = np.exp(qa - (x - t.mu_b) ** 2 / (2.0 * s2))
        v = np.exp(qa - (x - t.mu_b_prime) ** 2 / (2.0 * s2))
        return norm * (u - v) ** 2

    return f


def lsd_gaussian(t: ScalarGaussianTriple, c2: float = 1.0) -> float:
    """Integral of (phi_b - phi_b')^2 / phi_a over the real line.

    Integration runs over ``[min(mu) - 12 alpha, max(mu) + 12 alpha]``.  When the
    means are spread so far relative to ``alpha`` that the integrand carries
    mass outside that window, a :class:`QuadratureError` names the alpha floor.
    """
    if t.mu_b == t.mu_b_prime:
        return 0.0
    mus = (t.mu_b, t.mu_b_prime, t.mu_a)
    lo = min(mus) - 12.0 * t.alpha
    hi = max(mus) + 12.0 * t.alpha
    f = _gaussian_lsd_integrand(t)
    delta = max(abs(x - y) for x, y in itertools.combinations(mus, 2))
    floor = alpha_floor(delta, c2)

    def fail(reason: str) -> QuadratureError:
        return QuadratureError(
            f"{reason}; alpha={t.alpha:.6g} while the admissible floor sqrt(8*c2)*Delta is {floor:.6g} "
            f"(Delta={delta:.6g}, c2={c2:g})"
        )

    grid = np.linspace(lo, hi, 4097)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = f(grid)
    if not np.all(np.isfinite(vals)):
        raise fail("integrand overflows")
    coarse = float(np.trapezoid(vals, grid))
    peak = float(vals.max())
    if coarse <= 0.0:
        return 0.0
    # Mass leaking past the window shows up as a non-negligible edge value.
    edge = max(vals[0], vals[-1])
    if edge * t.alpha > 1e-12 * coarse or peak > 1e300:
        raise fail("integrand mass extends beyond the quadrature window")
    tol = min(1e-9, 1e-8 * coarse)
    try:
        return adaptive_simpson(f, lo, hi, tol)
    except QuadratureError as exc:
        raise fail(str(exc)) from exc


def mixture_kl_pair(q: FiniteDist, q_prime: FiniteDist, r: FiniteDist, s: float) -> tuple[float, float]:
    """Exact KL between two s-mixtures with a shared component and the matching bound.

    Returns ``(KL(sQ + (1-s)R || sQ' + (1-s)R), s**2 / (1 - s) * lsd(Q, Q', R))``.
    """
    if not 0.0 < s < 1.0:
        raise DomainError(f"mixture weight must lie in (0, 1), got {s!r}")
    a, b = _pair(q, q_prime)
    _, c = _pair(q, r)
    for name, arr in (("Q", a), ("Q'", b)):
        if np.any((arr > 0) & (c <= 0)):
            raise DomainError(f"{name} is not absolutely continuous w.r.t. R")
    m1 = s * a + (1.0 - s) * c
    m2 = s * b + (1.0 - s) * c
    # Both mixtures share (1-s)R, so the ratio is 1 + s(q - q')/m2; form it directly.
    pos = m1 > 0
    ratio_minus_one = s * (a[pos] - b[pos]) / m2[pos]
    exact = float(np.sum(m2[pos] * _xlogx_gap(ratio_minus_one, m1[pos] / m2[pos])) + np.sum(m2[~pos]))
    bound = s * s / (1.0 - s) * _lsd_arrays(a, b, c)
    return exact, bound


def lsd_upper_bound(theta_b: ScaledParam, theta_b_prime: ScaledParam, c2: float) -> float:
    """5 * c2 * ||theta_b / alpha - theta_b' / alpha||^2 for a shared alpha."""
    if theta_b.alpha != theta_b_prime.alpha:
        raise DomainError(f"scalings differ: {theta_b.alpha!r} vs {theta_b_prime.alpha!r}")
    if theta_b.theta.shape != theta_b_prime.theta.shape:
        raise ShapeError("parameter shapes differ")
    d = theta_b.scaled - theta_b_prime.scaled
    return float(5.0 * c2 * np.dot(d, d))


def alpha_floor(delta: float, c2: float) -> float:
    """Smallest admissible scaling sqrt(8 c2) * delta."""
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    return math.sqrt(8.0 * c2) * delta


def max_pairwise_distance(points: np.ndarray) -> float:
    """Largest Euclidean distance between any two rows."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DomainError("need at least two points")
    return float(pdist(pts).max())
