"""Seeded sampling primitives and log densities used by every conditional update.

All samplers draw from an :class:`RngStream` (or a bare numpy Generator) so
that a run is a pure function of its seed.  Densities return ``-inf`` for
arguments outside the support and raise ``ValueError`` for invalid parameters.

Conventions (fixed, see README):
  * Wishart(df, scale) has mean ``df * scale``.
  * Inverse-gamma(shape, rate) has density ``x**(-shape-1) * exp(-rate/x)``
    and mean ``rate / (shape - 1)`` for shape > 1.
  * Truncated-normal sampling uses inverse-CDF while the standardized lower
    bound is below ``TAIL_SWITCH`` and a translated-exponential
    accept-reject scheme beyond it (robust past 8 standard deviations).
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import special

__all__ = [
    "RngStream",
    "sample_truncated_normal",
    "sample_mvn",
    "sample_wishart",
    "sample_inverse_gamma",
    "sample_gamma",
    "sample_beta",
    "sample_bernoulli",
    "log_normal_pdf",
    "log_mvn_pdf",
    "log_truncnorm_pdf",
    "log_wishart_pdf",
    "log_inverse_gamma_pdf",
    "log_beta_pdf",
    "log_bernoulli_pmf",
]

# Standardized lower bound beyond which inverse-CDF sampling switches to the
# accept-reject tail scheme.
TAIL_SWITCH = 5.0


def _key_to_ints(key):
    """Hash arbitrary key elements into uint32 words for SeedSequence."""
    words = []
    for part in key:
        if isinstance(part, (int, np.integer)):
            digest = hashlib.sha256(b"i" + str(int(part)).encode()).digest()
        else:
            digest = hashlib.sha256(b"s" + str(part).encode()).digest()
        words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return words


class RngStream:
    """Seedable random stream with deterministic keyed substreams.

    ``stream.substream("sweep", 12, "beta")`` derives an independent stream
    from the root seed and the key alone, so the draw sequence of one block
    never depends on how many draws another block consumed.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(_key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_key_to_ints(self.key))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, Generator, or int seed; return a Generator."""
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    raise TypeError(f"not a usable random source: {rng!r}")


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def _truncated_standard_normal(a, b, gen):
    """Standard normal truncated to (a, b), vectorized over equal shapes.

    Regions with a <= TAIL_SWITCH use inverse-CDF between Phi(a) and Phi(b).
    Far-tail regions use the translated-exponential proposal of the classic
    one-sided accept-reject scheme, with draws above b rejected.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(a.shape, dtype=float)

    # flip so the finite/most-binding bound is on the left
    flip = b < -a
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)

    central = lo <= TAIL_SWITCH
    if np.any(central):
        cl, ch = lo[central], hi[central]
        pl = special.ndtr(cl)
        ph = special.ndtr(ch)
        u = gen.uniform(size=cl.shape)
        # guard against pl == ph underflow in nearly-degenerate intervals
        p = pl + u * (ph - pl)
        p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        x = special.ndtri(p)
        out[central] = np.clip(x, cl, ch)

    tail = ~central
    if np.any(tail):
        tl, th = lo[tail], hi[tail]
        x = np.empty(tl.shape, dtype=float)
        todo = np.ones(tl.shape, dtype=bool)
        alpha = 0.5 * (tl + np.sqrt(tl * tl + 4.0))
        while np.any(todo):
            n = int(todo.sum())
            prop = tl[todo] - np.log1p(-gen.uniform(size=n)) / alpha[todo]
            accept = gen.uniform(size=n) <= np.exp(-0.5 * (prop - alpha[todo]) ** 2)
            accept &= prop <= th[todo]
            idx = np.flatnonzero(todo)[accept]
            x.flat[idx] = prop[accept]
            todo[idx] = False
        out[tail] = x

    out[flip] = -out[flip]
    return out


def sample_truncated_normal(mean, var, lower, upper, rng):
    """Draw from N(mean, var) restricted to (lower, upper).

    Scalar or broadcastable-array arguments; +-inf bounds allowed.
    """
    gen = as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower >= upper):
        raise ValueError("lower bound must be below upper bound")
    sd = np.sqrt(var)
    mean, sd, lower, upper = np.broadcast_arrays(mean, sd, lower, upper)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    z = _truncated_standard_normal(a, b, gen)
    x = mean + sd * z
    # open-interval contract; clip any boundary hit from rounding
    x = np.where(x <= lower, np.nextafter(lower, np.inf), x)
    x = np.where(x >= upper, np.nextafter(upper, -np.inf), x)
    if x.ndim == 0:
        return float(x)
    return x


def sample_mvn(mean, cov, rng):
    """Multivariate normal draw via Cholesky; raises on non-SPD covariance."""
    gen = as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    k = mean.shape[0]
    if k == 0:
        return np.empty(0)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not symmetric positive definite") from exc
    return mean + chol @ gen.standard_normal(k)


def sample_wishart(df, scale, rng):
    """Wishart draw with mean df * scale, via the Bartlett decomposition."""
    gen = as_generator(rng)
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df < p:
        raise ValueError(f"degrees of freedom {df} below dimension {p}")
    chol = np.linalg.cholesky(scale)
    a = np.zeros((p, p))
    for i in range(p):
        a[i, i] = np.sqrt(gen.chisquare(df - i))
    idx = np.tril_indices(p, -1)
    a[idx] = gen.standard_normal(len(idx[0]))
    la = chol @ a
    return la @ la.T


def sample_inverse_gamma(shape, rate, rng, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("shape and rate must be positive")
    gen = as_generator(rng)
    return rate / gen.gamma(shape, 1.0, size=size)


def sample_gamma(shape, rate, rng, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("shape and rate must be positive")
    gen = as_generator(rng)
    return gen.gamma(shape, 1.0 / rate, size=size)


def sample_beta(a, b, rng, size=None):
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    gen = as_generator(rng)
    return gen.beta(a, b, size=size)


def sample_bernoulli(p, rng):
    """Bernoulli draw(s); p may be scalar or array."""
    gen = as_generator(rng)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability outside [0, 1]")
    draw = gen.uniform(size=p.shape) < p
    if draw.ndim == 0:
        return int(draw)
    return draw.astype(np.uint8)


# ---------------------------------------------------------------------------
# log densities
# ---------------------------------------------------------------------------

_LOG_2PI = np.log(2.0 * np.pi)


def log_normal_pdf(x, mean, var):
    if np.any(np.asarray(var) <= 0):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def log_mvn_pdf(x, mean, cov):
    """Log density of N(mean, cov) at x; cov must be SPD."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    k = x.shape[-1]
    if k == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not symmetric positive definite") from exc
    diff = x - mean
    sol = np.linalg.solve(chol, diff.T if diff.ndim > 1 else diff)
    quad = np.sum(sol**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (k * _LOG_2PI + logdet + quad)


def _log_gauss_mass(a, b):
    """log(Phi(b) - Phi(a)) computed stably for any tail location."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # work on the side where both bounds are <= 0 (Phi is tiny, log_ndtr exact)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lcdf_hi = special.log_ndtr(hi)
    lcdf_lo = special.log_ndtr(lo)
    with np.errstate(invalid="ignore"):
        out = lcdf_hi + np.log1p(-np.exp(lcdf_lo - lcdf_hi))
    out = np.where(np.isneginf(lcdf_lo), lcdf_hi, out)
    return out


def log_truncnorm_pdf(x, mean, var, lower, upper):
    """Log density of N(mean, var) truncated to (lower, upper)."""
    if np.any(np.asarray(var) <= 0):
        raise ValueError("variance must be positive")
    if np.any(np.asarray(lower) >= np.asarray(upper)):
        raise ValueError("lower bound must be below upper bound")
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(var)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    core = log_normal_pdf(x, mean, var) - _log_gauss_mass(a, b)
    return np.where((x > lower) & (x < upper), core, -np.inf)


def log_wishart_pdf(x, df, scale):
    """Log Wishart density (mean df * scale convention); -inf off the SPD cone."""
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError("degrees of freedom must exceed dimension - 1")
    sign_x, logdet_x = np.linalg.slogdet(x)
    if sign_x <= 0:
        return -np.inf
    try:
        np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return -np.inf
    sign_s, logdet_s = np.linalg.slogdet(scale)
    if sign_s <= 0:
        raise ValueError("scale matrix must be SPD")
    tr = np.trace(np.linalg.solve(scale, x))
    return (
        0.5 * (df - p - 1) * logdet_x
        - 0.5 * tr
        - 0.5 * df * p * np.log(2.0)
        - 0.5 * df * logdet_s
        - special.multigammaln(0.5 * df, p)
    )


def log_inverse_gamma_pdf(x, shape, rate):
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        core = shape * np.log(rate) - special.gammaln(shape) - (shape + 1) * np.log(x) - rate / x
    return np.where(x > 0, core, -np.inf)


def log_beta_pdf(x, a, b):
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        core = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)
    return np.where((x > 0) & (x < 1), core, -np.inf)


def log_bernoulli_pmf(x, p):
    if np.any((np.asarray(p) < 0) | (np.asarray(p) > 1)):
        raise ValueError("probability outside [0, 1]")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x == 1, np.log(p), np.where(x == 0, np.log1p(-p), -np.inf))
