"""Monte Carlo studies of stopping times and error rates.

Every replication draws from its own generator keyed by ``(seed,
replication, stream)``, so results do not depend on how replications are
batched or how many threads process them. Tests compared head to head see
the same observations.

Normal streams are advanced in synchronous blocks: all live replications
share the current per-group count ``n``, which lets the safe t-test be
decided against one precomputed critical curve per block.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from . import classical, numerics
from .errors import DomainError
from .msprt import DEFAULT_WARMUP, log_lambda
from .safe_t import critical_curve
from .safe_prop import srm_log_evalue

NORMAL_TESTS = ("safe_t", "msprt")
STREAM_X, STREAM_Y = 0, 1
DEFAULT_BLOCK = 2048


def rep_generator(seed: int, rep: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(rep), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimulationSpec:
    test_kind: str
    alpha: float = 0.05
    beta: float = 0.2
    effect: float = 0.0
    n_sims: int = 1000
    seed: int = 0
    horizon_policy: str = "classical_n"
    fixed_n: Optional[int] = None
    peek_schedule: Optional[Sequence[int]] = None
    delta: Optional[float] = None

    KINDS = ("classical_t", "safe_t", "msprt", "chi2", "safe_prop", "srm")
    POLICIES = ("classical_n", "power_quantile", "fixed")

    def __post_init__(self):
        if self.test_kind not in self.KINDS:
            raise DomainError(f"unknown test kind {self.test_kind!r}")
        if self.horizon_policy not in self.POLICIES:
            raise DomainError(f"unknown horizon policy {self.horizon_policy!r}")
        if self.horizon_policy == "fixed" and not (self.fixed_n and self.fixed_n >= 2):
            raise DomainError("fixed horizon needs fixed_n >= 2")
        if self.n_sims < 1:
            raise DomainError("n_sims must be >= 1")
        if not 0 < self.alpha < 1 or not 0 < self.beta < 1:
            raise DomainError("alpha and beta must lie in (0, 1)")


# -- normal stream engine ------------------------------------------------------

@dataclass
class _Chunk:
    """Running per-replication statistics for one slice of replications."""

    reps: np.ndarray
    gens: list
    mx: np.ndarray
    my: np.ndarray
    m2x: np.ndarray
    m2y: np.ndarray
    gamma2: np.ndarray


@dataclass
class NormalRun:
    """Per-replication outcomes of a shared-stream normal simulation.

    ``crossing[test]`` holds first-crossing counts (``inf`` if none by
    ``n_simulated``); ``t_at[n]`` holds the pooled t statistic at recorded counts.
    """

    crossing: Dict[str, np.ndarray]
    t_at: Dict[int, np.ndarray]
    n_simulated: int
    gamma2: Optional[np.ndarray] = None


def _draw(gens, size, effect):
    x = np.empty((len(gens), size))
    y = np.empty((len(gens), size))
    for i, (gx, gy) in enumerate(gens):
        x[i] = gx.standard_normal(size)
        y[i] = gy.standard_normal(size)
    if effect:
        x += effect
    return x, y


def simulate_normal(delta: float, effect: float, alpha: float, n_sims: int, seed: int,
                    tests: Sequence[str] = NORMAL_TESTS, horizon=None, record_at=(),
                    n_cap: Optional[int] = None, block: int = DEFAULT_BLOCK,
                    workers: int = 1, warmup_n: int = DEFAULT_WARMUP,
                    msprt_sigma2: Optional[float] = None, msprt_gamma2: Optional[float] = None,
                    default_gamma2: float = 1.0, msprt_gamma2_mode: str = "frozen") -> NormalRun:
    """Stream unit-variance normal pairs with mean difference ``effect``.

    Each replication is simulated until it has crossed for every test in
    ``tests`` and passed every count in ``record_at``, or until the run
    ends. The run ends at ``n_cap``; at a fixed ``horizon`` if one is given;
    or, with ``horizon=("quantile", q)``, once at least ``ceil(q * n_sims)``
    replications have crossed for every test.

    ``msprt_gamma2_mode="running"`` recomputes the mSPRT mixing variance
    ``|d| s_p^2`` at every count after the warmup instead of freezing it.
    That is not a martingale; it exists for comparison with simulations
    that recompute the variance.
    """
    if msprt_gamma2_mode not in ("frozen", "running"):
        raise DomainError(f"unknown gamma2 mode {msprt_gamma2_mode!r}")
    for t in tests:
        if t not in NORMAL_TESTS:
            raise DomainError(f"unknown sequential test {t!r}")
    record_at = sorted({int(r) for r in record_at})
    if n_cap is None:
        n_cap = 4 * classical.fixed_horizon_sample_size(alpha, 0.2, delta)
    n_cap = max([n_cap] + record_at + ([horizon] if isinstance(horizon, int) else []))
    need = None
    if isinstance(horizon, tuple):
        need = math.ceil(horizon[1] * n_sims)
    elif isinstance(horizon, int):
        n_cap = max(horizon, max(record_at, default=0))
    target = -math.log(alpha)
    curve = critical_curve(float(delta), float(alpha), int(n_cap)) if "safe_t" in tests else None

    crossing = {t: np.full(n_sims, np.inf) for t in tests}
    t_at = {r: np.full(n_sims, np.nan) for r in record_at}
    gamma2_all = np.full(n_sims, np.nan)
    last_record = record_at[-1] if record_at else 0

    reps = np.arange(n_sims)
    chunk_edges = np.linspace(0, n_sims, max(1, min(workers, n_sims)) + 1).astype(int)
    chunks = []
    for lo, hi in zip(chunk_edges[:-1], chunk_edges[1:]):
        r = reps[lo:hi]
        gens = [(rep_generator(seed, i, STREAM_X), rep_generator(seed, i, STREAM_Y)) for i in r]
        z = np.zeros(r.size)
        chunks.append(_Chunk(r, gens, z.copy(), z.copy(), z.copy(), z.copy(),
                             np.full(r.size, msprt_gamma2 if msprt_gamma2 else np.nan)))

    def step(chunk: _Chunk, n_prev: int, size: int, a_crit: Optional[np.ndarray]):
        if chunk.reps.size == 0:
            return None
        x, y = _draw(chunk.gens, size, effect)
        k = n_prev + np.arange(1, size + 1, dtype=float)
        if n_prev == 0:
            chunk.mx = x[:, 0].copy()
            chunk.my = y[:, 0].copy()
        dx = x - chunk.mx[:, None]
        dy = y - chunk.my[:, None]
        cx = np.cumsum(dx, axis=1)
        cy = np.cumsum(dy, axis=1)
        m2x = chunk.m2x[:, None] + np.cumsum(dx * dx, axis=1) - cx * cx / k
        m2y = chunk.m2y[:, None] + np.cumsum(dy * dy, axis=1) - cy * cy / k
        mx = chunk.mx[:, None] + cx / k
        my = chunk.my[:, None] + cy / k
        nu = 2.0 * k - 2.0
        with np.errstate(invalid="ignore", divide="ignore"):
            sp2 = np.maximum(m2x + m2y, 0.0) / nu
            diff = mx - my
            t2 = diff * diff * k / (2.0 * sp2)
        out = {}
        if curve is not None:
            with np.errstate(invalid="ignore"):
                a = t2 / (nu + t2)
            hit = a >= a_crit
            near = np.isfinite(a_crit) & (np.abs(a - a_crit) <= curve.band * a_crit)
            for i, j in zip(*np.nonzero(near)):
                hit[i, j] = curve.crosses([int(k[j])], [a[i, j]])[0]
            out["safe_t"] = hit
        if "msprt" in tests:
            if n_prev < warmup_n <= n_prev + size and msprt_gamma2 is None:
                j = warmup_n - n_prev - 1
                sp = sp2[:, j]
                d = np.where(sp > 0, diff[:, j] / np.sqrt(np.where(sp > 0, sp, 1.0)), 0.0)
                g2 = np.abs(d) * sp
                chunk.gamma2 = np.where(g2 > 0, g2, default_gamma2)
            lam_ok = k >= (1 if msprt_gamma2 is not None else warmup_n)
            if msprt_gamma2 is None and n_prev + size < warmup_n:
                out["msprt"] = np.zeros_like(t2, dtype=bool)
            else:
                s2 = msprt_sigma2 if msprt_sigma2 is not None else sp2
                g2 = chunk.gamma2[:, None]
                if msprt_gamma2_mode == "running" and msprt_gamma2 is None:
                    with np.errstate(invalid="ignore"):
                        g2 = np.abs(diff) * np.sqrt(sp2)
                    g2 = np.where(g2 > 0, g2, default_gamma2)
                with np.errstate(invalid="ignore", divide="ignore"):
                    ll = log_lambda(k, -diff, s2, g2)
                out["msprt"] = (ll >= target) & lam_ok
        recorded = {}
        for r in record_at:
            if n_prev < r <= n_prev + size:
                with np.errstate(invalid="ignore", divide="ignore"):
                    recorded[r] = diff[:, r - n_prev - 1] / np.sqrt(sp2[:, r - n_prev - 1] * 2.0 / r)
        chunk.mx, chunk.my = mx[:, -1].copy(), my[:, -1].copy()
        chunk.m2x, chunk.m2y = m2x[:, -1].copy(), m2y[:, -1].copy()
        first = {}
        for t, hit in out.items():
            any_hit = hit.any(axis=1)
            first[t] = np.where(any_hit, n_prev + 1 + hit.argmax(axis=1), np.inf)
        return chunk, first, recorded

    n = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while n < n_cap:
            size = min(block, n_cap - n)
            a_crit = curve.a_crit(np.arange(n + 1, n + size + 1)) if curve is not None else None
            if pool is None:
                results = [step(c, n, size, a_crit) for c in chunks]
            else:
                results = list(pool.map(lambda c: step(c, n, size, a_crit), chunks))
            for c, res in zip(chunks, results):
                if c.reps.size == 0:
                    continue
                _, first, recorded = res
                for t, f in first.items():
                    new = np.isinf(crossing[t][c.reps]) & np.isfinite(f)
                    crossing[t][c.reps[new]] = f[new]
                for r, v in recorded.items():
                    t_at[r][c.reps] = v
                if "msprt" in tests:
                    gamma2_all[c.reps] = c.gamma2
            n += size
            # Drop replications with nothing left to learn.
            for c in chunks:
                if c.reps.size == 0:
                    continue
                done = np.ones(c.reps.size, dtype=bool)
                for t in tests:
                    done &= np.isfinite(crossing[t][c.reps])
                if n < last_record:
                    done[:] = False
                if done.any():
                    keep = ~done
                    c.reps = c.reps[keep]
                    c.gens = [g for g, kp in zip(c.gens, keep) if kp]
                    for name in ("mx", "my", "m2x", "m2y", "gamma2"):
                        setattr(c, name, getattr(c, name)[keep])
            if all(c.reps.size == 0 for c in chunks):
                break
            if need is not None and n >= last_record and all(
                    np.count_nonzero(np.isfinite(crossing[t])) >= need for t in tests):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return NormalRun(crossing, t_at, n, gamma2_all if "msprt" in tests else None)


# -- stopping-time summaries ---------------------------------------------------

@dataclass(frozen=True)
class StoppingSummary:
    """Stopping behaviour of one test with stop = min(crossing, horizon).

    Ratios divide by ``classical_n``, the fixed-horizon per-group size.
    """

    test: str
    n_sims: int
    classical_n: int
    horizon: float
    mean_stop: float
    power_quantile_stop: float
    reject_fraction: float
    mean_stop_reject: float
    mean_stop_accept: float
    hist_edges: tuple = ()
    hist_counts: tuple = ()

    @property
    def ratios(self) -> Dict[str, float]:
        return {
            "reject": self.mean_stop_reject / self.classical_n,
            "accept": self.mean_stop_accept / self.classical_n,
            "either": self.mean_stop / self.classical_n,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = self.ratios
        return d


def power_quantile(crossing: np.ndarray, beta: float) -> float:
    """Count by which a fraction ``1 - beta`` of replications has crossed."""
    k = math.ceil((1.0 - beta) * crossing.size)
    return float(np.sort(crossing)[k - 1])


def summarize_stops(test: str, crossing: np.ndarray, horizon: float, classical_n: int,
                    beta: float, bins: int = 30) -> StoppingSummary:
    rejected = crossing <= horizon
    stop = np.minimum(crossing, horizon)
    n = crossing.size
    frac = float(np.count_nonzero(rejected)) / n
    mean_rej = float(stop[rejected].mean()) if rejected.any() else math.nan
    mean_acc = float(horizon) if (~rejected).any() else math.nan
    finite = stop[np.isfinite(stop)]
    if finite.size:
        counts, edges = np.histogram(finite, bins=bins)
    else:
        counts, edges = np.zeros(0, dtype=int), np.zeros(0)
    return StoppingSummary(
        test=test, n_sims=n, classical_n=int(classical_n), horizon=float(horizon),
        mean_stop=float(stop.mean()), power_quantile_stop=power_quantile(crossing, beta),
        reject_fraction=frac, mean_stop_reject=mean_rej, mean_stop_accept=mean_acc,
        hist_edges=tuple(float(e) for e in edges), hist_counts=tuple(int(c) for c in counts))


@dataclass
class StoppingStudy:
    delta: float
    true_effect: float
    classical_n: int
    summaries: Dict[str, StoppingSummary]
    run: NormalRun = field(repr=False, default=None)


def stopping_study(delta: float, true_effect: float, alpha: float = 0.05, beta: float = 0.2,
                   n_sims: int = 500, seed: int = 0, tests: Sequence[str] = NORMAL_TESTS,
                   horizon_policy: str = "power_quantile", fixed_n: Optional[int] = None,
                   workers: int = 1, bins: int = 30, **engine) -> StoppingStudy:
    """Stopping times of sequential tests on shared normal streams.

    ``horizon_policy`` picks where a test that has not crossed stops and
    accepts: its own ``power_quantile``, the ``classical_n`` or ``fixed`` n.
    """
    nc = classical.fixed_horizon_sample_size(alpha, beta, delta)
    if horizon_policy == "power_quantile":
        horizon = ("quantile", 1.0 - beta)
    elif horizon_policy == "classical_n":
        horizon = nc
    elif horizon_policy == "fixed":
        if not fixed_n:
            raise DomainError("fixed horizon needs fixed_n")
        horizon = int(fixed_n)
    else:
        raise DomainError(f"unknown horizon policy {horizon_policy!r}")
    run = simulate_normal(delta, true_effect, alpha, n_sims, seed, tests=tests, horizon=horizon,
                          workers=workers, **engine)
    summaries = {}
    for t in tests:
        c = run.crossing[t]
        if horizon_policy == "power_quantile":
            h = min(power_quantile(c, beta), run.n_simulated)
        else:
            h = horizon
        summaries[t] = summarize_stops(t, c, h, nc, beta, bins)
    return StoppingStudy(delta, true_effect, nc, summaries, run)


# -- peeking -------------------------------------------------------------------------

def peek_points(horizon: int, peeks: int) -> np.ndarray:
    """``peeks`` evenly spaced looks ending at ``horizon`` (each at least 2)."""
    pts = np.ceil(np.arange(1, peeks + 1) * horizon / peeks).astype(int)
    return np.unique(np.maximum(pts, 2))


PEEKING_COLUMNS = ("peeks", "alpha", "test", "fp_rate", "se")


def peeking_fp_curve(spec: SimulationSpec, peek_counts: Sequence[int] = (1, 5, 20, 100),
                     alphas: Optional[Sequence[float]] = None, horizon: int = 1000,
                     delta: float = 0.1, workers: int = 1) -> list:
    """False-positive rate against the number of evenly spaced looks.

    Data follow ``spec.effect`` (normally 0). ``classical_t`` rejects
    at a look when its two-sided p-value is below alpha; ``safe_t`` when its
    e-value reaches ``1/alpha`` with design effect ``delta``.
    """
    if spec.test_kind not in ("classical_t", "safe_t"):
        raise DomainError("peeking curves cover classical_t and safe_t")
    horizon = spec.fixed_n or horizon
    if spec.peek_schedule:
        peek_counts = spec.peek_schedule
    alphas = tuple(alphas) if alphas else (spec.alpha,)
    looks = {p: peek_points(horizon, p) for p in peek_counts}
    record = sorted(set(np.concatenate(list(looks.values())).tolist()))
    run = simulate_normal(spec.delta or delta, spec.effect, spec.alpha, spec.n_sims, spec.seed,
                          tests=(), record_at=record, n_cap=horizon, workers=workers)
    rows = []
    for alpha in alphas:
        for p in peek_counts:
            pts = looks[p]
            t = np.stack([run.t_at[int(n)] for n in pts], axis=1)
            if spec.test_kind == "classical_t":
                df = 2.0 * pts - 2.0
                pv = 2.0 * numerics.student_t_sf(np.abs(t), df[None, :])
                hit = (pv < alpha).any(axis=1)
            else:
                curve = critical_curve(float(spec.delta or delta), float(alpha), int(horizon))
                nu = 2.0 * pts - 2.0
                a = t * t / (nu[None, :] + t * t)
                hit = np.zeros(spec.n_sims, dtype=bool)
                for j, n in enumerate(pts):
                    hit |= curve.crosses(np.full(spec.n_sims, n), a[:, j])
            fp = float(hit.mean())
            rows.append({"peeks": int(p), "alpha": float(alpha), "test": spec.test_kind,
                         "fp_rate": fp, "se": math.sqrt(fp * (1 - fp) / spec.n_sims)})
    return rows


# -- error rates and combined decisions ----------------------------------------------

ERROR_COLUMNS = ("test", "type_i", "type_i_se", "power", "type_ii")


def _decisions_at(delta, effect, alpha, beta, n_sims, seed, workers, **engine):
    """Safe t and classical t decisions on shared streams, both stopping at classical n."""
    nc = classical.fixed_horizon_sample_size(alpha, beta, delta)
    run = simulate_normal(delta, effect, alpha, n_sims, seed, tests=("safe_t",),
                          horizon=nc, record_at=(nc,), workers=workers, **engine)
    t = run.t_at[nc]
    p = 2.0 * numerics.student_t_sf(np.abs(t), 2.0 * nc - 2.0)
    return {"safe_t": run.crossing["safe_t"] <= nc, "classical_t": p < alpha}


def error_rate_study(delta: float, alpha: float = 0.05, beta: float = 0.2, n_sims: int = 2000,
                     seed: int = 0, workers: int = 1, **engine) -> list:
    """Type I and II rates of the safe and classical t-tests, plus the "either rejects" rule.

    Null and alternative streams use disjoint seeds derived from ``seed``.
    """
    null = _decisions_at(delta, 0.0, alpha, beta, n_sims, seed, workers, **engine)
    alt = _decisions_at(delta, delta, alpha, beta, n_sims, seed + 1, workers, **engine)
    null["combined"] = null["safe_t"] | null["classical_t"]
    alt["combined"] = alt["safe_t"] | alt["classical_t"]
    rows = []
    for name in ("safe_t", "classical_t", "combined"):
        t1 = float(null[name].mean())
        power = float(alt[name].mean())
        rows.append({"test": name, "type_i": t1, "type_i_se": math.sqrt(alpha * (1 - alpha) / n_sims),
                     "power": power, "type_ii": 1.0 - power})
    return rows


# -- delta grids -------------------------------------------------------------------

GRID_COLUMNS = ("delta", "test", "decision", "mean_stop", "ratio", "horizon", "horizon_ratio",
                "reject_fraction")


def reference_delta_grid(lo: float = 0.01, hi: float = 0.3, count: int = 30) -> np.ndarray:
    return np.round(np.linspace(lo, hi, count), 10)


def delta_grid_study(delta_grid: Iterable[float], tests: Sequence[str] = NORMAL_TESTS,
                     alpha: float = 0.05, beta: float = 0.2, n_sims: int = 500, seed: int = 0,
                     workers: int = 1, **engine) -> list:
    """Mean stops and power horizons relative to the classical n, per delta.

    Streams carry a true effect equal to the design effect. Replication
    seeds are offset per grid point so grid points are independent.
    """
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise DomainError("delta grid is empty")
    rows = []
    for i, d in enumerate(grid):
        study = stopping_study(d, d, alpha, beta, n_sims, seed + 7919 * i, tests=tests,
                               horizon_policy="power_quantile", workers=workers, **engine)
        nc = study.classical_n
        rows.extend(_grid_rows(d, "classical_t", {"reject": nc, "accept": nc, "either": nc},
                               nc, nc, 1.0 - beta))
        for t in tests:
            s = study.summaries[t]
            means = {"reject": s.mean_stop_reject, "accept": s.mean_stop_accept,
                     "either": s.mean_stop}
            rows.extend(_grid_rows(d, t, means, s.horizon, nc, s.reject_fraction))
    return rows


def _grid_rows(delta, test, means, horizon, nc, reject_fraction):
    return [{"delta": delta, "test": test, "decision": k, "mean_stop": float(v),
             "ratio": float(v) / nc, "horizon": float(horizon),
             "horizon_ratio": float(horizon) / nc, "reject_fraction": float(reject_fraction)}
            for k, v in means.items()]


def aggregate_grid(rows: Sequence[dict]) -> Dict[str, Dict[str, float]]:
    """Average ratios over the grid, laid out as test -> decision -> ratio.

    The extra key ``horizon`` holds the mean power-horizon ratio.
    """
    out: Dict[str, Dict[str, list]] = {}
    for r in rows:
        cell = out.setdefault(r["test"], {})
        cell.setdefault(r["decision"], []).append(r["ratio"])
        if r["decision"] == "either":
            cell.setdefault("horizon", []).append(r["horizon_ratio"])
    return {t: {k: float(np.mean(v)) for k, v in cells.items()} for t, cells in out.items()}


# -- agreement ---------------------------------------------------------------------

@dataclass(frozen=True)
class AgreementMatrix:
    """``counts[i][j]``: test A decision i against test B decision j (1 = reject)."""

    counts: tuple
    phi: float

    @property
    def total(self) -> int:
        return sum(sum(r) for r in self.counts)


def phi_coefficient(n11: int, n10: int, n01: int, n00: int) -> float:
    denom = (n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)
    if denom == 0:
        return 0.0
    return (n11 * n00 - n10 * n01) / math.sqrt(denom)


def agreement_study(decisions_a: Sequence[bool], decisions_b: Sequence[bool]) -> AgreementMatrix:
    a = np.asarray(decisions_a, dtype=bool)
    b = np.asarray(decisions_b, dtype=bool)
    if a.shape != b.shape:
        raise DomainError("decision sequences differ in length")
    n11 = int(np.count_nonzero(a & b))
    n10 = int(np.count_nonzero(a & ~b))
    n01 = int(np.count_nonzero(~a & b))
    n00 = int(np.count_nonzero(~a & ~b))
    return AgreementMatrix(((n11, n10), (n01, n00)), phi_coefficient(n11, n10, n01, n00))


# -- Bernoulli engines ---------------------------------------------------------------

STREAM_A, STREAM_B = 2, 3


def _bernoulli(seed, rep, stream, p, n):
    return (rep_generator(seed, rep, stream).random(n) < p).astype(np.int64)


def srm_paths(theta: float, theta0: float, alpha1: float, beta1: float, n_max: int,
              n_sims: int, seed: int) -> np.ndarray:
    """Log e-value paths (``n_sims`` x ``n_max``) of the SRM monitor fed one assignment at a time."""
    out = np.empty((n_sims, n_max))
    n = np.arange(1, n_max + 1)
    for r in range(n_sims):
        s = np.cumsum(_bernoulli(seed, r, STREAM_A, theta, n_max))
        out[r] = srm_log_evalue(s, n, alpha1, beta1, theta0)
    return out


def srm_first_crossings(theta: float, theta0: float, alpha1: float, beta1: float, alpha: float,
                        n_max: int, n_sims: int, seed: int, chunk: int = 8192) -> np.ndarray:
    """First crossing counts of the SRM monitor, ``inf`` if none by ``n_max``.

    Draws each replication's stream in chunks and stops at the crossing, so
    the values match :func:`srm_paths` on the same seed.
    """
    target = -math.log(alpha)
    out = np.full(n_sims, math.inf)
    for r in range(n_sims):
        gen = rep_generator(seed, r, STREAM_A)
        done, s0 = 0, 0
        while done < n_max:
            m = min(chunk, n_max - done)
            s = s0 + np.cumsum(gen.random(m) < theta)
            n = np.arange(done + 1, done + m + 1)
            hit = np.flatnonzero(srm_log_evalue(s, n, alpha1, beta1, theta0) >= target)
            if hit.size:
                out[r] = done + hit[0] + 1
                break
            done, s0 = done + m, int(s[-1])
    return out


def two_sample_prop_paths(theta_a: float, theta_b: float, alpha1: float, beta1: float,
                          n_max: int, n_sims: int, seed: int, rep_offset: int = 0) -> np.ndarray:
    """Log e-value paths of the two-sample test with one pair per batch.

    Row ``i`` is replication ``rep_offset + i``, so large studies can be
    generated in slices.
    """
    from .safe_prop import two_sample_log_evalue

    out = np.empty((n_sims, n_max))
    prior_n = np.arange(n_max, dtype=float)
    for i in range(n_sims):
        r = rep_offset + i
        ya = _bernoulli(seed, r, STREAM_A, theta_a, n_max)
        yb = _bernoulli(seed, r, STREAM_B, theta_b, n_max)
        # Posterior means from strictly earlier pairs.
        sa = np.concatenate(([0], np.cumsum(ya)[:-1]))
        sb = np.concatenate(([0], np.cumsum(yb)[:-1]))
        ta = (alpha1 + sa) / (alpha1 + beta1 + prior_n)
        tb = (alpha1 + sb) / (alpha1 + beta1 + prior_n)
        out[i] = np.cumsum(two_sample_log_evalue(1, ya, 1, yb, ta, tb))
    return out


def crossing_fraction(paths: np.ndarray, alpha: float) -> float:
    return float((paths >= -math.log(alpha)).any(axis=1).mean())


def first_crossings(paths: np.ndarray, alpha: float) -> np.ndarray:
    hit = paths >= -math.log(alpha)
    return np.where(hit.any(axis=1), hit.argmax(axis=1) + 1.0, np.inf)


# -- fixed-n e-value means -------------------------------------------------------------

def mean_evalue_at_n(kind: str, n: int, n_sims: int, seed: int, delta: float = 0.5,
                     epsilon: float = 0.1, gamma2: float = 0.25) -> tuple:
    """Empirical mean and standard error of the e-value at fixed ``n`` under the null."""
    if kind == "safe_t":
        from .classical import SummaryStats
        from .safe_t import SafeTConfig, safe_t_from_summaries

        cfg = SafeTConfig(delta)
        vals = np.empty(n_sims)
        for r in range(n_sims):
            x = rep_generator(seed, r, STREAM_X).standard_normal(n)
            y = rep_generator(seed, r, STREAM_Y).standard_normal(n)
            vals[r] = safe_t_from_summaries(SummaryStats.from_values(x),
                                            SummaryStats.from_values(y), cfg).value
    elif kind == "msprt":
        vals = np.empty(n_sims)
        for r in range(n_sims):
            x = rep_generator(seed, r, STREAM_X).standard_normal(n)
            y = rep_generator(seed, r, STREAM_Y).standard_normal(n)
            vals[r] = math.exp(float(log_lambda(n, y.mean() - x.mean(), 1.0, gamma2)))
    elif kind == "safe_prop":
        c = 1.0 / (10.0 * epsilon * epsilon)
        vals = np.exp(two_sample_prop_paths(0.5, 0.5, c, c, n, n_sims, seed)[:, -1])
    elif kind == "srm":
        c = 1.0 / (10.0 * epsilon * epsilon)
        vals = np.exp(srm_paths(0.5, 0.5, c, c, n, n_sims, seed)[:, -1])
    else:
        raise DomainError(f"unknown kind {kind!r}")
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_sims))


# -- output --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Sequence[dict], columns: Sequence[str], fh) -> None:
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


HIST_COLUMNS = ("test", "bin_lo", "bin_hi", "count")


def histogram_rows(summaries: Dict[str, StoppingSummary]) -> list:
    rows = []
    for name in sorted(summaries):
        s = summaries[name]
        for lo, hi, c in zip(s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts):
            rows.append({"test": name, "bin_lo": lo, "bin_hi": hi, "count": c})
    return rows
