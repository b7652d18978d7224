"""Monte Carlo evaluation of the use-and-then-forget SE bound.

For user ``k`` of cell ``j`` with combiner ``v`` the bound is::

    SE = prelog * log2(1 + A / (B + C + D + E + F + G))

with ``A = p|E{v^H h_hat}|^2``, ``B = p E{|v^H h_hat|^2} - A``, ``C``/``D``
the intra/inter-cell interference through the estimates, ``E`` the
interference through the estimation errors, ``F = sigma2 E{|v|^2}`` and
``G = E{v^H Sigma^-1 R_q Sigma^-1 v}`` with the instantaneous quantization
noise covariance.  Expectations run over small-scale fading and noise at a
fixed drop; drops are averaged outside.

The data-phase quantization noise enters only through ``G``.  Given the
channels its contribution is known in closed form, so ``G`` is accumulated
from the conditional expectation rather than from sampled noise.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import draw_channels, sqrt_psd
from .combining import CombinerBuilder, canonical_scheme, is_unaware
from .correlation import CorrelationSet, build_correlation_set
from .estimation import EstimationStats, estimate_all, estimation_statistics, synthesize_pilots
from .quantization import BitAllocation
from .scenario import NetworkConfig, PilotBook, UserDrop, build_grid, build_pilot_book, drop_users

# feature columns kept per (trial, j, k)
RE_G, IM_G, ABS2_G, C_T, D_T, E_T, NORM2_V, G_T, X_AGG = range(9)
N_FEATURES = 9

#: trials per independently seeded stream; fixed so results do not depend on the worker count
CHUNK = 200


@dataclass
class SeTerms:
    """UatF terms per user, each ``(L, K)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    prelog: float
    stderr: dict = field(default_factory=dict)
    interference_total: np.ndarray | None = None  # sum p E|v^H h|^2 - A, if known

    @property
    def interference(self) -> np.ndarray:
        """``B + C + D + E``."""
        return self.B + self.C + self.D + self.E

    @property
    def denominator(self) -> np.ndarray:
        return self.B + self.C + self.D + self.E + self.F + self.G

    def se(self) -> np.ndarray:
        return se_from_terms(self, prelog=self.prelog)

    def sum_se(self) -> float:
        return float(np.sum(self.se()))


def se_from_terms(terms: SeTerms | None = None, tau_u: int | None = None, tau_c: int | None = None,
                  *, prelog: float | None = None, A=None, denominator=None):
    """``prelog * log2(1 + A/den)``.

    A zero denominator with ``A > 0`` yields ``inf`` and a warning.
    """
    if prelog is None:
        if tau_u is None or tau_c is None:
            prelog = terms.prelog
        else:
            if tau_c <= 0 or tau_u < 0:
                raise ValueError("need tau_c > 0 and tau_u >= 0")
            prelog = tau_u / tau_c
    if A is None:
        A, denominator = terms.A, terms.denominator
    A = np.asarray(A, dtype=float)
    den = np.asarray(denominator, dtype=float)
    if np.any(den < 0) or np.any(A < 0):
        raise ValueError("UatF terms must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(A > 0, A / den, 0.0)
    if np.any(np.isinf(sinr)):
        warnings.warn("zero interference-plus-noise with positive signal: infinite SINR",
                      RuntimeWarning, stacklevel=2)
    out = prelog * np.log2(1.0 + sinr) if prelog > 0 else np.zeros_like(sinr)
    return float(out) if out.ndim == 0 else out


class TermAccumulator:
    """Streaming first and second moments of the per-user features.

    Accumulators merge associatively, so chunked or parallel runs give the
    same result as one pass (up to floating-point summation order, which
    is fixed by merging chunks in index order).
    """

    def __init__(self, L: int, K: int):
        self.n = 0
        self.s1 = np.zeros((L, K, N_FEATURES))
        self.s2 = np.zeros((L, K, N_FEATURES, N_FEATURES))

    def add(self, feats: np.ndarray) -> "TermAccumulator":
        """Add a batch of features, shape ``(N, L, K, N_FEATURES)``."""
        self.n += feats.shape[0]
        self.s1 += feats.sum(axis=0)
        self.s2 += np.einsum("nlkf,nlkg->lkfg", feats, feats)
        return self

    def merge(self, other: "TermAccumulator") -> "TermAccumulator":
        out = TermAccumulator(*self.s1.shape[:2])
        out.n = self.n + other.n
        out.s1 = self.s1 + other.s1
        out.s2 = self.s2 + other.s2
        return out

    @property
    def mean(self) -> np.ndarray:
        return self.s1 / self.n

    def mean_cov(self) -> np.ndarray:
        """Covariance of the feature means, ``(L, K, F, F)``."""
        if self.n < 2:
            raise ValueError("need at least two trials for variance terms")
        mu = self.mean
        cov = (self.s2 - self.n * mu[..., :, None] * mu[..., None, :]) / (self.n - 1)
        return cov / self.n

    def terms(self, powers, sigma2: float, prelog: float) -> SeTerms:
        mu = self.mean
        cov = self.mean_cov()
        p = np.asarray(powers, dtype=float)
        A = p * (mu[..., RE_G] ** 2 + mu[..., IM_G] ** 2)
        B = np.maximum(p * mu[..., ABS2_G] - A, 0.0)
        C, D, E = mu[..., C_T], mu[..., D_T], mu[..., E_T]
        F = sigma2 * mu[..., NORM2_V]
        G = mu[..., G_T]

        def grad(*pairs):
            g = np.zeros(mu.shape)
            for col, val in pairs:
                g[..., col] = val
            return g

        def se_of(g):
            return np.sqrt(np.maximum(np.einsum("lkf,lkfg,lkg->lk", g, cov, g), 0.0))

        gA = grad((RE_G, 2 * p * mu[..., RE_G]), (IM_G, 2 * p * mu[..., IM_G]))
        g_int = grad((RE_G, -2 * p * mu[..., RE_G]), (IM_G, -2 * p * mu[..., IM_G]), (ABS2_G, p),
                     (C_T, 1.0), (D_T, 1.0), (E_T, 1.0))
        g_den = g_int + grad((NORM2_V, sigma2), (G_T, 1.0))
        g_psi = grad((RE_G, -2 * p * mu[..., RE_G]), (IM_G, -2 * p * mu[..., IM_G]), (X_AGG, 1.0))
        den = B + C + D + E + F + G
        with np.errstate(divide="ignore", invalid="ignore"):
            sinr = np.where(den > 0, A / den, 0.0)
            g_se = prelog / math.log(2.0) / (1.0 + sinr)[..., None] * (
                gA / den[..., None] - (A / den**2)[..., None] * g_den)
        g_se = np.nan_to_num(g_se)
        stderr = {
            "A": se_of(gA),
            "interference": se_of(g_int),
            "interference_total": se_of(g_psi),
            "F": se_of(grad((NORM2_V, sigma2))),
            "G": se_of(grad((G_T, 1.0))),
            "se": se_of(g_se),
        }
        return SeTerms(A=A, B=B, C=C, D=D, E=E, F=F, G=G, prelog=prelog, stderr=stderr,
                       interference_total=mu[..., X_AGG] - A)


def trial_features(v: np.ndarray, h_hat: np.ndarray, h: np.ndarray, alpha: np.ndarray,
                   powers: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-trial features for all users.

    ``v`` is ``(N, L, K, M)`` (combiners of BS j's users), ``h_hat`` and ``h``
    are ``(N, L, L, K, M)``.
    """
    N, L, K, M = v.shape
    p = np.asarray(powers, dtype=float)
    vc = v.conj()
    proj_hat = np.einsum("njkm,njilm->njkil", vc, h_hat)  # v^H h_hat_{j,il}
    err = h - h_hat
    proj_err = np.einsum("njkm,njilm->njkil", vc, err)
    proj_true = proj_hat + proj_err
    own = np.eye(L, dtype=bool)  # own[j, i]
    jj = np.arange(L)
    kk = np.arange(K)
    g = proj_hat[:, jj[:, None], kk[None, :], jj[:, None], kk[None, :]]  # (N, L, K)
    w_hat = p[None, None, None] * np.abs(proj_hat) ** 2  # (N, L, K, L, K)
    own_cell = np.einsum("njkil,ji->njkl", w_hat, own.astype(float)).sum(-1)
    C_term = own_cell - p[None, :, :] * np.abs(g) ** 2
    D_term = w_hat.sum(axis=(-2, -1)) - own_cell
    E_term = (p[None, None, None] * np.abs(proj_err) ** 2).sum(axis=(-2, -1))
    X_term = (p[None, None, None] * np.abs(proj_true) ** 2).sum(axis=(-2, -1))
    norm2 = np.sum(np.abs(v) ** 2, axis=-1)
    rx = np.einsum("ik,njikm->njm", p, np.abs(h) ** 2) + sigma2  # (N, L, M)
    qweight = (1.0 - alpha) / alpha  # (L, M)
    G_term = np.einsum("njm,njkm->njk", qweight[None] * rx, np.abs(v) ** 2)
    feats = np.empty((N, L, K, N_FEATURES))
    feats[..., RE_G] = g.real
    feats[..., IM_G] = g.imag
    feats[..., ABS2_G] = np.abs(g) ** 2
    feats[..., C_T] = C_term
    feats[..., D_T] = D_term
    feats[..., E_T] = E_term
    feats[..., NORM2_V] = norm2
    feats[..., G_T] = G_term
    feats[..., X_AGG] = X_term
    return feats


def accumulate_terms(v, h_hat, h, alpha, powers, sigma2, acc: TermAccumulator | None = None) -> TermAccumulator:
    """Add one batch of trials to ``acc`` (a new accumulator if None)."""
    v = np.asarray(v)
    if acc is None:
        acc = TermAccumulator(v.shape[1], v.shape[2])
    return acc.add(trial_features(v, h_hat, h, np.asarray(alpha, dtype=float), powers, sigma2))


@dataclass
class DropContext:
    """Everything that is fixed within one drop."""

    config: NetworkConfig
    drop_id: int
    drop: UserDrop
    correlation: CorrelationSet
    pilots: PilotBook
    bits: BitAllocation
    powers: np.ndarray
    sqrt_R: np.ndarray
    stats: EstimationStats
    stats_unaware: EstimationStats | None = None

    def ensure_unaware(self) -> EstimationStats:
        if self.stats_unaware is None:
            self.stats_unaware = estimation_statistics(self.correlation, self.pilots, self.bits,
                                                       self.powers, self.config.sigma2, aware=False)
        return self.stats_unaware


def geometry_rng(seed: int, drop_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, drop_id)))


def trial_rng(seed: int, drop_id: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, drop_id, chunk)))


def make_drop(config: NetworkConfig, seed: int, drop_id: int):
    """Geometry and correlation of one drop, reproducible from ``(seed, drop_id)``."""
    grid = build_grid(config)
    drop = drop_users(config, grid, geometry_rng(seed, drop_id))
    corr = build_correlation_set(config, drop)
    return grid, drop, corr


def prepare_drop(config: NetworkConfig, bits, seed: int, drop_id: int, powers=None,
                 unaware: bool = False, geometry=None) -> DropContext:
    """Statistics for one drop.  ``geometry`` reuses a ``make_drop`` result."""
    grid, drop, corr = geometry if geometry is not None else make_drop(config, seed, drop_id)
    pilots = build_pilot_book(config, grid)
    alloc = bits if isinstance(bits, BitAllocation) else BitAllocation.from_spec(bits, config.L, config.M)
    P = config.powers() if powers is None else np.asarray(powers, dtype=float)
    stats = estimation_statistics(corr, pilots, alloc, P, config.sigma2, aware=True)
    ctx = DropContext(config=config, drop_id=drop_id, drop=drop, correlation=corr, pilots=pilots,
                      bits=alloc, powers=P, sqrt_R=sqrt_psd(corr.R), stats=stats)
    if unaware:
        ctx.ensure_unaware()
    return ctx


def simulate_drop(ctx: DropContext, schemes, n_trials: int, seed: int, chunk: int = CHUNK,
                  pilot_quant_noise: str = "exact") -> dict:
    """Accumulate the UatF features of every scheme over ``n_trials`` trials.

    All schemes see the same channel, noise and pilot realizations.
    ``pilot_quant_noise="avg"`` draws the pilot-phase quantization noise
    from the averaged covariance, which keeps the estimates Gaussian.
    Returns ``{scheme: TermAccumulator}``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    schemes = [canonical_scheme(s) for s in schemes]
    need_unaware = any(is_unaware(s) for s in schemes)
    st_u = ctx.ensure_unaware() if need_unaware else None
    builders = {s: CombinerBuilder(s, st_u if is_unaware(s) else ctx.stats) for s in schemes}
    L, K = ctx.config.L, ctx.config.K
    accs = {s: TermAccumulator(L, K) for s in schemes}
    alpha = ctx.stats.alpha
    n_chunks = math.ceil(n_trials / chunk)
    for c in range(n_chunks):
        n = min(chunk, n_trials - c * chunk)
        rng = trial_rng(seed, ctx.drop_id, c)
        h = draw_channels(None, rng, n, sqrt_factors=ctx.sqrt_R)
        y = synthesize_pilots(h, ctx.stats, rng, quant_noise=pilot_quant_noise)
        hat = estimate_all(y, ctx.stats)
        hat_u = estimate_all(y, st_u) if need_unaware else None
        for s in schemes:
            est = hat_u if is_unaware(s) else hat
            v = builders[s].build(est).v
            accumulate_terms(v, est, h, alpha, ctx.powers, ctx.config.sigma2, accs[s])
    return accs


@dataclass
class McResult:
    """Per-drop UatF terms and SE of every scheme."""

    config: NetworkConfig
    schemes: list
    terms: dict  # scheme -> list of SeTerms (one per drop)

    def se(self, scheme: str) -> np.ndarray:
        """``(n_drops, L, K)`` per-user SE."""
        return np.stack([t.se() for t in self.terms[canonical_scheme(scheme)]])

    def se_stderr(self, scheme: str) -> np.ndarray:
        return np.stack([t.stderr["se"] for t in self.terms[canonical_scheme(scheme)]])

    def sum_se(self, scheme: str) -> tuple[float, float]:
        """Mean sum SE over drops and its standard error.

        With one drop the error comes from the trial-level delta method,
        otherwise from the spread across drops.
        """
        per_drop = self.se(scheme).sum(axis=(1, 2))
        if len(per_drop) > 1:
            return float(per_drop.mean()), float(per_drop.std(ddof=1) / math.sqrt(len(per_drop)))
        se_err = self.se_stderr(scheme)[0]
        return float(per_drop[0]), float(np.sqrt(np.sum(se_err**2)))


def run_mc_experiment(config: NetworkConfig, schemes, n_smallscale: int, n_drops: int, seed: int | None = None,
                      bits=math.inf, powers=None, threads: int = 1) -> McResult:
    """Monte Carlo SE over ``n_drops`` user drops and ``n_smallscale`` trials each."""
    config.validate()
    if n_drops < 1:
        raise ValueError("n_drops must be >= 1")
    seed = config.rng_seed if seed is None else seed
    schemes = [canonical_scheme(s) for s in schemes]

    def one(d):
        ctx = prepare_drop(config, bits, seed, d, powers=powers)
        accs = simulate_drop(ctx, schemes, n_smallscale, seed)
        return {s: accs[s].terms(ctx.powers, config.sigma2, config.prelog) for s in schemes}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_drops)))
    else:
        results = [one(d) for d in range(n_drops)]
    terms = {s: [r[s] for r in results] for s in schemes}
    return McResult(config=config, schemes=schemes, terms=terms)
