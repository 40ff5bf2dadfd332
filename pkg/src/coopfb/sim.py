"""Monte Carlo harness for the feedback and CSI-exchange schemes.

Schemes
-------
``csi-feedback-zf`` / ``csi-feedback-mmse``
    Every user quantizes its channel direction with ``b_f`` bits; the BS
    precodes with ZF on the quantized directions, or regularized inversion
    on the quantized channels.
``precoder-rvq``
    Users exchange RVQ-quantized directions (``b_c`` bits, explicit or
    emulated codebook) and pick the minimum-leakage codeword.
``precoder-naive``
    Each user describes its channel in its own eigenbasis with
    ``b_tot / K`` bits and broadcasts it; every user picks the max-SLNR
    codeword.
``precoder-adaptive``
    Each ordered pair exchanges the channel projected on the receiver's
    dominant subspace, with the optimal bit partition; max-SLNR selection.

Randomness is derived from ``master_seed`` by ``SeedSequence`` spawn keys
so that every trial is reproducible and independent of the worker count.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from coopfb.bitpartition import PartitionSolution, build_problem, solve_partition
from coopfb.channel import (
    OneRingGeometry,
    UserStatistics,
    crandn,
    dominant_subspace,
    gen_channel,
    gen_iid_statistics,
    one_ring_covariance,
)
from coopfb.codebooks import (
    MAX_EXPLICIT_BITS,
    build_rvq,
    build_shaped,
    emulate_rvq_error,
    quantize_direction,
)
from coopfb.errors import ConfigError, SingularityError
from coopfb.exchange import Backend, exchange_csi, klt_basis
from coopfb.precoding import mmse_precoder, select_max_slnr, select_min_leakage, zf_precoder

__all__ = [
    "SCHEMES",
    "ScenarioConfig",
    "TrialMetrics",
    "AggregateResult",
    "D2DQuantizerSpec",
    "Scenario",
    "build_scenario",
    "scheme_adaptive_exchange",
    "scheme_naive_exchange",
    "link_metrics",
    "run_trial",
    "run_experiment",
    "trial_rng",
    "sample_rvq_error",
    "sample_min_codeword_leakage",
    "sample_min_leakage",
    "PARALLEL_ENV",
]

SCHEMES = ("csi-feedback-zf", "csi-feedback-mmse", "precoder-rvq",
           "precoder-naive", "precoder-adaptive")
PARALLEL_ENV = "COOPFB_PARALLEL"
SKIP_WARNING_FRACTION = 0.01

# spawn-key namespaces
_CHANNEL, _CODEBOOK, _SCHEME = 0, 1, 2
_PURPOSE_PRECODER, _PURPOSE_FEEDBACK, _PURPOSE_EXCHANGE = 0, 1, 2


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce an experiment.

    ``power_total`` is linear.  Angles are in degrees.  ``codebook_reuse``
    is the number of consecutive trials that share one codebook draw
    (1 draws fresh codebooks every trial).
    """

    n_t: int
    k_users: int
    power_total: float
    b_f: int
    b_tot: float = 80.0
    b_c: float = math.inf
    channel_model: str = "iid"
    mean_azimuths_deg: tuple = ()
    angular_spread_deg: float = 15.0
    antenna_spacing: float = 0.5
    path_losses: tuple = ()
    schemes: tuple = ("csi-feedback-mmse", "precoder-naive", "precoder-adaptive")
    backend: str = "ideal-dr"
    trials: int = 1000
    master_seed: int = 0
    energy_fraction: float = 0.995
    eig_floor: float = 1e-6
    codebook_reuse: int = 1
    emulate_exchange: bool = True

    def __post_init__(self):
        def fail(key, msg):
            raise ConfigError(msg, key=key)

        if int(self.n_t) != self.n_t or self.n_t < 2:
            fail("n_t", "must be an integer >= 2")
        if int(self.k_users) != self.k_users or self.k_users < 1:
            fail("k_users", "must be an integer >= 1")
        if not self.power_total > 0:
            fail("power_total", "must be > 0")
        if int(self.b_f) != self.b_f or self.b_f < 1:
            fail("b_f", "must be an integer >= 1")
        if self.b_f > MAX_EXPLICIT_BITS:
            fail("b_f", f"must be <= {MAX_EXPLICIT_BITS} (explicit codebook)")
        if not self.b_tot >= 0:
            fail("b_tot", "must be >= 0")
        if not self.b_c >= 1:
            fail("b_c", "must be >= 1 (inf for perfect exchange)")
        if self.channel_model not in ("iid", "one-ring"):
            fail("channel_model", "must be 'iid' or 'one-ring'")
        if self.channel_model == "one-ring" and len(self.mean_azimuths_deg) != self.k_users:
            fail("mean_azimuths_deg", "needs one azimuth per user for the one-ring model")
        if not self.angular_spread_deg > 0:
            fail("angular_spread_deg", "must be > 0")
        if not self.antenna_spacing > 0:
            fail("antenna_spacing", "must be > 0")
        if self.path_losses and len(self.path_losses) != self.k_users:
            fail("path_losses", "needs one value per user")
        if any(not l > 0 for l in self.path_losses):
            fail("path_losses", "must all be > 0")
        if not self.schemes:
            fail("schemes", "must be nonempty")
        for s in self.schemes:
            if s not in SCHEMES:
                fail("schemes", f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
        if len(set(self.schemes)) != len(self.schemes):
            fail("schemes", "must not repeat")
        if {"precoder-naive", "precoder-adaptive"} & set(self.schemes) and not self.b_tot > 0:
            fail("b_tot", "must be > 0 for CSI-exchange schemes")
        if self.backend not in {b.value for b in Backend}:
            fail("backend", "must be 'ideal-dr' or 'ecsq-uniform'")
        if int(self.trials) != self.trials or self.trials < 1:
            fail("trials", "must be an integer >= 1")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            fail("master_seed", "must be a non-negative integer")
        if not 0 < self.energy_fraction <= 1:
            fail("energy_fraction", "must lie in (0, 1]")
        if not 0 <= self.eig_floor < 1:
            fail("eig_floor", "must lie in [0, 1)")
        if int(self.codebook_reuse) != self.codebook_reuse or self.codebook_reuse < 1:
            fail("codebook_reuse", "must be an integer >= 1")
        if not self.emulate_exchange and "precoder-rvq" in self.schemes and self.b_c > MAX_EXPLICIT_BITS:
            fail("b_c", f"explicit exchange codebooks need b_c <= {MAX_EXPLICIT_BITS}")
        object.__setattr__(self, "mean_azimuths_deg", tuple(float(a) for a in self.mean_azimuths_deg))
        object.__setattr__(self, "path_losses", tuple(float(l) for l in self.path_losses))
        object.__setattr__(self, "schemes", tuple(self.schemes))

    @property
    def rho(self) -> float:
        return self.power_total / self.k_users

    @property
    def alpha(self) -> float:
        return self.k_users / self.power_total

    def replace(self, **changes) -> "ScenarioConfig":
        d = asdict(self)
        d.update(changes)
        return ScenarioConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, float) and math.isinf(v):
                d[k] = "inf"
        return d


@dataclass(frozen=True, eq=False)
class D2DQuantizerSpec:
    """Per-link exchange plan.

    ``bits[j, k]`` and ``bases[j][k]`` describe how user ``j`` sends its
    channel to user ``k``.  With ``broadcast`` set, every sender produces a
    single description that all receivers share.
    """

    bits: np.ndarray
    bases: list
    backend: Backend
    broadcast: bool = False
    partition: PartitionSolution | None = None


@dataclass(frozen=True, eq=False)
class TrialMetrics:
    """Per-scheme metrics of one channel draw."""

    trial_index: int
    leakage: dict
    sinr: dict
    sum_rate: dict


@dataclass
class AggregateResult:
    """Means and 95% confidence half-widths (``1.96 * stderr``) per scheme."""

    config: ScenarioConfig
    trials: int
    skipped: int
    mean: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        conv = lambda d: {s: {m: np.asarray(v).tolist() for m, v in mv.items()} for s, mv in d.items()}
        return {"config": self.config.to_dict(), "trials": self.trials, "skipped": self.skipped,
                "mean": conv(self.mean), "ci95": conv(self.ci), "warnings": list(self.warnings)}


@dataclass(frozen=True, eq=False)
class Scenario:
    """Trial-invariant quantities derived from a config."""

    config: ScenarioConfig
    stats: list
    subspaces: list
    adaptive: D2DQuantizerSpec | None
    naive: D2DQuantizerSpec | None


def _user_statistics(cfg: ScenarioConfig) -> list[UserStatistics]:
    losses = cfg.path_losses or (1.0,) * cfg.k_users
    if cfg.channel_model == "iid":
        base = gen_iid_statistics(cfg.n_t)
        return [base.with_path_loss(l) for l in losses]
    out = []
    cache = {}
    for az, l in zip(cfg.mean_azimuths_deg, losses):
        if az not in cache:
            geom = OneRingGeometry.from_degrees(az, cfg.angular_spread_deg, cfg.n_t,
                                                cfg.antenna_spacing)
            cache[az] = one_ring_covariance(geom)
        out.append(cache[az].with_path_loss(l))
    return out


def scheme_adaptive_exchange(cfg: ScenarioConfig, stats, subspaces=None) -> D2DQuantizerSpec:
    """Project-on-receiver KLT bases for all ordered pairs plus the optimal partition."""
    K = len(stats)
    if subspaces is None:
        subspaces = [dominant_subspace(s, cfg.energy_fraction)[0] for s in stats]
    bases = [[None if j == k else klt_basis(stats[j], subspaces[k], cfg.eig_floor)
              for k in range(K)] for j in range(K)]
    bits = np.zeros((K, K))
    solution = None
    if K > 1:
        problem = build_problem(stats, bases, cfg.alpha, cfg.b_tot)
        if problem.links.any():
            solution = solve_partition(problem)
            bits = np.where(problem.links, solution.bits, 0.0)
    return D2DQuantizerSpec(bits, bases, Backend(cfg.backend), False, solution)


def scheme_naive_exchange(cfg: ScenarioConfig, stats, subspaces=None) -> D2DQuantizerSpec:
    """Every user spends ``b_tot / K`` bits in its own eigenbasis, broadcast to all."""
    K = len(stats)
    if subspaces is None:
        subspaces = [dominant_subspace(s, cfg.energy_fraction)[0] for s in stats]
    own = [klt_basis(stats[j], subspaces[j], cfg.eig_floor) for j in range(K)]
    bases = [[None if j == k else own[j] for k in range(K)] for j in range(K)]
    bits = np.full((K, K), cfg.b_tot / K)
    np.fill_diagonal(bits, 0.0)
    return D2DQuantizerSpec(bits, bases, Backend(cfg.backend), True)


@lru_cache(maxsize=8)
def build_scenario(cfg: ScenarioConfig) -> Scenario:
    stats = _user_statistics(cfg)
    subspaces = [dominant_subspace(s, cfg.energy_fraction)[0] for s in stats]
    adaptive = scheme_adaptive_exchange(cfg, stats, subspaces) \
        if "precoder-adaptive" in cfg.schemes else None
    naive = scheme_naive_exchange(cfg, stats, subspaces) \
        if "precoder-naive" in cfg.schemes else None
    return Scenario(cfg, stats, subspaces, adaptive, naive)


def trial_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


@lru_cache(maxsize=2)
def _codebooks(cfg: ScenarioConfig, block: int):
    """Codebooks shared by the trials of one reuse block."""
    sc = build_scenario(cfg)
    shaped = cfg.channel_model == "one-ring"
    precoder, feedback, exchange = [], [], []
    need_fb = any(s.startswith("csi-feedback") for s in cfg.schemes)
    need_ex = "precoder-rvq" in cfg.schemes and not cfg.emulate_exchange
    for k, st in enumerate(sc.stats):
        rng = trial_rng(cfg.master_seed, _CODEBOOK, block, k, _PURPOSE_PRECODER)
        precoder.append(build_shaped(st, cfg.b_f, rng) if shaped else build_rvq(cfg.n_t, cfg.b_f, rng))
        if need_fb:
            rng = trial_rng(cfg.master_seed, _CODEBOOK, block, k, _PURPOSE_FEEDBACK)
            feedback.append(build_shaped(st, cfg.b_f, rng) if shaped
                            else build_rvq(cfg.n_t, cfg.b_f, rng))
        if need_ex:
            rng = trial_rng(cfg.master_seed, _CODEBOOK, block, k, _PURPOSE_EXCHANGE)
            exchange.append(build_rvq(cfg.n_t, int(cfg.b_c), rng))
    return precoder, feedback, exchange


def link_metrics(H: np.ndarray, W: np.ndarray, rho: float):
    """Leakage, SINR and sum rate for channels ``H`` and unit precoders ``W`` (columns)."""
    G = np.abs(H.conj().T @ W) ** 2  # G[j, k] = |h_j^H w_k|^2
    own = np.diag(G).copy()
    off = G.copy()
    np.fill_diagonal(off, 0.0)
    leakage = rho * off.sum(axis=0)
    sinr = rho * own / (1.0 + rho * off.sum(axis=1))
    return leakage, sinr, float(np.log2(1.0 + sinr).sum())


def _exchange(spec: D2DQuantizerSpec, H, stats, rng):
    """``received[k][j]``: user ``j``'s channel as reconstructed at user ``k``."""
    K = H.shape[1]
    received = [[None] * K for _ in range(K)]
    for j in range(K):
        shared = None
        for k in range(K):
            if j == k:
                continue
            if spec.broadcast and shared is not None:
                received[k][j] = shared
                continue
            csi = exchange_csi(H[:, j], stats[j].path_loss, spec.bases[j][k],
                               float(spec.bits[j, k]), spec.backend, rng).reconstructed
            received[k][j] = csi
            if spec.broadcast:
                shared = csi
    return received


def _precoder_exchange(spec, H, stats, codebooks, alpha, rng):
    K = H.shape[1]
    received = _exchange(spec, H, stats, rng)
    W = np.empty_like(H)
    for k in range(K):
        others = [received[k][j] for j in range(K) if j != k]
        W[:, k] = select_max_slnr(codebooks[k], H[:, k], others, alpha)
    return W


def _precoder_rvq(cfg, H, codebooks, exchange_cbs, rng):
    K = H.shape[1]
    shared = []
    for j in range(K):
        h = H[:, j]
        if math.isinf(cfg.b_c) or cfg.emulate_exchange:
            qd = emulate_rvq_error(cfg.n_t, cfg.b_c, h, rng, magnitude=np.linalg.norm(h))
        else:
            qd = quantize_direction(h, exchange_cbs[j])
        shared.append(qd.csi)
    W = np.empty_like(H)
    for k in range(K):
        W[:, k] = select_min_leakage(codebooks[k], [shared[j] for j in range(K) if j != k])
    return W


def _csi_feedback(H, feedback, alpha, zf: bool):
    K = H.shape[1]
    q = [quantize_direction(H[:, k], feedback[k]) for k in range(K)]
    if zf:
        return zf_precoder(np.column_stack([x.direction for x in q])).vectors
    Hq = np.column_stack([x.csi for x in q])
    return np.column_stack([mmse_precoder(Hq, k, alpha) for k in range(K)])


def run_trial(cfg: ScenarioConfig, trial_index: int) -> TrialMetrics:
    """One channel draw evaluated under every configured scheme.

    Raises :class:`SingularityError` (with ``trial_index`` set) when a ZF
    inversion is ill-conditioned.
    """
    sc = build_scenario(cfg)
    H = gen_channel(sc.stats, trial_rng(cfg.master_seed, _CHANNEL, trial_index),
                    trial_index).channels
    precoder_cbs, feedback_cbs, exchange_cbs = _codebooks(cfg, trial_index // cfg.codebook_reuse)
    leak, sinr, rate = {}, {}, {}
    for s_idx, scheme in enumerate(SCHEMES):
        if scheme not in cfg.schemes:
            continue
        rng = trial_rng(cfg.master_seed, _SCHEME, trial_index, s_idx)
        try:
            if scheme == "csi-feedback-zf":
                W = _csi_feedback(H, feedback_cbs, cfg.alpha, zf=True)
            elif scheme == "csi-feedback-mmse":
                W = _csi_feedback(H, feedback_cbs, cfg.alpha, zf=False)
            elif scheme == "precoder-rvq":
                W = _precoder_rvq(cfg, H, precoder_cbs, exchange_cbs, rng)
            elif scheme == "precoder-naive":
                W = _precoder_exchange(sc.naive, H, sc.stats, precoder_cbs, cfg.alpha, rng)
            else:
                W = _precoder_exchange(sc.adaptive, H, sc.stats, precoder_cbs, cfg.alpha, rng)
        except SingularityError as exc:
            exc.trial_index = trial_index
            exc.scheme = scheme
            raise
        leak[scheme], sinr[scheme], rate[scheme] = link_metrics(H, W, cfg.rho)
    return TrialMetrics(trial_index, leak, sinr, rate)


def _run_range(cfg: ScenarioConfig, start: int, stop: int):
    out = []
    for t in range(start, stop):
        try:
            out.append(run_trial(cfg, t))
        except SingularityError:
            out.append(None)
    return out


def _chunks(cfg: ScenarioConfig, workers: int):
    """Contiguous trial ranges aligned to codebook-reuse blocks."""
    block = cfg.codebook_reuse
    n_blocks = -(-cfg.trials // block)
    per = max(1, -(-n_blocks // (4 * workers)))
    edges = list(range(0, n_blocks, per)) + [n_blocks]
    return [(a * block, min(b * block, cfg.trials)) for a, b in zip(edges[:-1], edges[1:])]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(PARALLEL_ENV, "1")))
    except ValueError:
        return 1


def _aggregate(cfg, results):
    kept = [r for r in results if r is not None]
    skipped = len(results) - len(kept)
    agg = AggregateResult(cfg, len(kept), skipped)
    if skipped > SKIP_WARNING_FRACTION * len(results):
        msg = f"{skipped} of {len(results)} trials skipped (ill-conditioned ZF)"
        agg.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    if not kept:
        return agg

    def stat(samples):
        a = np.asarray(samples, dtype=float)
        m = a.mean(axis=0)
        if a.shape[0] < 2:
            return m, np.zeros_like(m)
        return m, 1.96 * a.std(axis=0, ddof=1) / math.sqrt(a.shape[0])

    for s in cfg.schemes:
        leak = np.array([r.leakage[s] for r in kept])
        metrics = {
            "sum_rate": [r.sum_rate[s] for r in kept],
            "leakage": leak.mean(axis=1),
            "leakage_per_user": leak,
            "sinr_per_user": [r.sinr[s] for r in kept],
        }
        agg.mean[s], agg.ci[s] = {}, {}
        for name, samples in metrics.items():
            agg.mean[s][name], agg.ci[s][name] = stat(samples)
    return agg


def run_experiment(cfg: ScenarioConfig, workers: int | None = None) -> AggregateResult:
    """Run ``cfg.trials`` trials and aggregate; the output does not depend on ``workers``."""
    workers = workers or default_workers()
    if workers <= 1:
        results = _run_range(cfg, 0, cfg.trials)
    else:
        chunks = _chunks(cfg, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_range, [cfg] * len(chunks), *zip(*chunks))
            results = [r for part in parts for r in part]
    return _aggregate(cfg, results)


# -- sampling helpers for the closed-form checks ----------------------------

def sample_rvq_error(n_t: int, bits: int, trials: int, seed: int = 0) -> np.ndarray:
    """Quantization errors ``Z`` of isotropic channels under fresh RVQ codebooks."""
    out = np.empty(trials)
    for t in range(trials):
        rng = trial_rng(seed, t)
        cb = build_rvq(n_t, bits, rng)
        out[t] = quantize_direction(crandn(rng, n_t), cb).error_z
    return out


def sample_min_codeword_leakage(n_t: int, b_f: int, trials: int, seed: int = 0) -> np.ndarray:
    """``min_i |g^H w_i|^2`` over ``2^b_f`` isotropic codewords, ``g`` isotropic."""
    out = np.empty(trials)
    for t in range(trials):
        rng = trial_rng(seed, t)
        cb = build_rvq(n_t, b_f, rng)
        g = crandn(rng, n_t)
        g = g / np.linalg.norm(g)
        out[t] = float((np.abs(cb.inner(g)) ** 2).min())
    return out


def sample_min_leakage(n_t: int, k_users: int, n_codewords: int, trials: int,
                       seed: int = 0) -> np.ndarray:
    """``min_i sum_j |h_j^H w_i|^2`` with ``K - 1`` i.i.d. CN(0, I) interferers known exactly."""
    bits = int(round(math.log2(n_codewords)))
    out = np.empty(trials)
    for t in range(trials):
        rng = trial_rng(seed, t)
        cb = build_rvq(n_t, bits, rng)
        Hi = crandn(rng, n_t, k_users - 1)
        out[t] = float((np.abs(cb.vectors.conj() @ Hi) ** 2).sum(axis=1).min())
    return out
