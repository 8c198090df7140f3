"""Joint estimation of the initial aberration state and the latent map.

Candidates for x0 are weighted by their GP marginal likelihoods (E-step);
the latent map is the weight-mixture of per-candidate GP posteriors
(M-step). The online loop adds candidate refinement and variance-driven
input selection between acquisitions.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import gp
from .errors import ConfigError, DegenerateWeightsError, RonchiError, StepError
from .latent import LatentDataset, Trajectory

log = logging.getLogger(__name__)

__all__ = [
    "CandidateSet", "EMConfig", "CalibrationTrace", "LatentDataset", "Trajectory",
    "e_step", "m_step", "em_iterate", "hard_em_iterate", "refine_candidates",
    "select_input", "point_estimate", "initial_candidates", "run_calibration",
]


@dataclass
class CandidateSet:
    candidates: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,)
    loglik: np.ndarray = None

    def __post_init__(self):
        self.candidates = np.atleast_2d(np.asarray(self.candidates, dtype=float))
        N = self.candidates.shape[0]
        if N < 1:
            raise ConfigError("candidate set must be non-empty")
        w = np.full(N, 1.0 / N) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (N,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("candidate weights must lie on the simplex")
        self.weights = w

    @classmethod
    def uniform(cls, candidates):
        return cls(candidates, None)

    def __len__(self):
        return self.candidates.shape[0]

    @property
    def map_index(self):
        # np.argmax returns the first maximum: ties go to the lowest index
        return int(np.argmax(self.weights))


@dataclass
class EMConfig:
    n_candidates: int = 128
    box: float = 200.0
    keep_fraction: float = 0.3
    perturb_fraction: float = 0.5
    uniform_fraction: float = 0.2
    perturb_sigma: float = 10.0
    # children cycle through geometric scales from perturb_sigma down to perturb_sigma_min
    perturb_levels: int = 4
    perturb_sigma_min: float = 0.3
    input_bound: float = 100.0
    input_samples: int = 256
    em_iterations: int = 1
    tolerance: float = 2.0
    patience: int = 3
    horizon: int = 30
    hard: bool = False
    update_model: bool = True
    select_inputs: bool = True
    stop_on_convergence: bool = True
    mirror_mass_threshold: float = 0.1

    def __post_init__(self):
        fr = (self.keep_fraction, self.perturb_fraction, self.uniform_fraction)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("refinement fractions must be non-negative and sum to 1")
        if self.perturb_sigma < 0 or self.perturb_levels < 1:
            raise ConfigError("perturbation scale must be non-negative with at least one level")
        if self.perturb_levels > 1 and self.perturb_sigma > 0 and not 0 < self.perturb_sigma_min <= self.perturb_sigma:
            raise ConfigError("perturb_sigma_min must lie in (0, perturb_sigma]")
        if self.n_candidates < 1 or self.horizon < 0 or self.input_samples < 1:
            raise ConfigError("candidate count, horizon and input samples must be positive")


def _normalize(loglik):
    ll = np.asarray(loglik, dtype=float)
    if not np.any(np.isfinite(ll)):
        raise DegenerateWeightsError("all candidate likelihoods are -inf or NaN")
    ll = np.where(np.isnan(ll), -np.inf, ll)
    w = np.exp(ll - logsumexp(ll))
    return w / w.sum()


def candidate_log_likelihoods(model, dataset, candidates, update_model=True):
    if update_model:
        return gp.candidate_log_likelihoods(model, dataset, candidates)
    return gp.fixed_prior_log_likelihoods(model, dataset, candidates)


def e_step(model, dataset, cands, update_model=True):
    """Posterior weights over candidates under a uniform prior."""
    ll = candidate_log_likelihoods(model, dataset, cands.candidates, update_model)
    return CandidateSet(cands.candidates, _normalize(ll), ll)


def m_step(model, dataset, cands):
    """Mixture of per-candidate GP posteriors, weighted by the candidate weights."""
    return gp.CandidatePosterior(model, dataset, cands.candidates, cands.weights)


def elbo(weights, loglik):
    """sum_i w_i log p(Z | x0_i) - KL(w || uniform)."""
    w = np.asarray(weights)
    N = w.size
    nz = w > 0
    kl = float(np.sum(w[nz] * np.log(w[nz] * N)))
    return float(np.sum(w[nz] * np.asarray(loglik)[nz])) - kl


def em_iterate(model, dataset, cands, config=None):
    """One E-step then one M-step; returns (weighted candidates, mixture, ELBO)."""
    update = True if config is None else config.update_model
    new = e_step(model, dataset, cands, update)
    post = m_step(model, dataset, new) if update else _PriorOnly(model, new)
    return new, post, elbo(new.weights, new.loglik)


def hard_em_iterate(model, dataset, cands, config=None):
    """E-step followed by commitment to the single most likely candidate."""
    update = True if config is None else config.update_model
    soft = e_step(model, dataset, cands, update)
    i_star = soft.map_index
    w = np.zeros(len(soft))
    w[i_star] = 1.0
    hard = CandidateSet(soft.candidates, w, soft.loglik)
    single = CandidateSet(soft.candidates[i_star:i_star + 1], np.ones(1))
    post = m_step(model, dataset, single) if update else _PriorOnly(model, single)
    return hard, post, elbo(hard.weights, hard.loglik)


class _PriorOnly:
    """Stand-in posterior when model updates are disabled: f is the prior mean."""

    def __init__(self, model, cands):
        self.model = model
        self.weights = cands.weights

    def mean(self, Q):
        return self.model.mean(np.atleast_2d(Q))


def perturb_scales(count, config):
    """Per-child perturbation scale, cycling coarse to fine."""
    if config.perturb_levels == 1 or config.perturb_sigma == 0:
        return np.full(count, config.perturb_sigma)
    levels = np.geomspace(config.perturb_sigma, config.perturb_sigma_min, config.perturb_levels)
    return levels[np.arange(count) % config.perturb_levels]


def refine_candidates(cands, config, rng):
    """Keep the top fraction, perturb weight-sampled parents, add uniform draws."""
    N, n = cands.candidates.shape
    n_keep = int(round(config.keep_fraction * N))
    n_perturb = int(round(config.perturb_fraction * N))
    n_keep = min(n_keep, N)
    n_perturb = min(n_perturb, N - n_keep)
    n_uniform = N - n_keep - n_perturb
    order = np.argsort(-cands.weights, kind="stable")
    kept = cands.candidates[order[:n_keep]]
    parents = rng.choice(N, size=n_perturb, p=cands.weights)
    sigma = perturb_scales(n_perturb, config)[:, None]
    children = cands.candidates[parents] + sigma * rng.standard_normal((n_perturb, n))
    fresh = rng.uniform(-config.box, config.box, size=(n_uniform, n))
    return CandidateSet.uniform(np.vstack([kept, children, fresh]))


def select_input(model, dataset, cands, config, rng):
    """Input maximizing posterior variance at the MAP candidate's next state."""
    n = cands.candidates.shape[1]
    x_star = cands.candidates[cands.map_index]
    here = x_star + dataset.last_s
    # admissible inputs: |u_d| <= input_bound and predicted state inside the box
    lo = np.maximum(-config.input_bound, -config.box - here)
    hi = np.minimum(config.input_bound, config.box - here)
    hi = np.maximum(hi, lo)
    U = lo + (hi - lo) * rng.random((config.input_samples, n))
    Q = here + U
    var = gp.CandidatePosterior(model, dataset, x_star[None, :]).variance(Q)[0]
    return U[int(np.argmax(np.sum(var, axis=1)))]


def point_estimate(cands, mirror_threshold=0.1):
    """Weighted candidate mean, or the MAP candidate if weight sits on both mirror modes."""
    w, C = cands.weights, cands.candidates
    x_map = C[cands.map_index]
    near_mirror = np.linalg.norm(C + x_map, axis=1) < np.linalg.norm(C - x_map, axis=1)
    if np.sum(w[near_mirror]) > mirror_threshold:
        return x_map.copy()
    return w @ C


def initial_candidates(config, n, rng):
    return CandidateSet.uniform(rng.uniform(-config.box, config.box, size=(config.n_candidates, n)))


@dataclass
class CalibrationTrace:
    estimates: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    elbos: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    max_weights: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    converged_at: int = None
    final: CandidateSet = None
    posterior: object = None
    dataset: LatentDataset = None

    def __len__(self):
        return len(self.estimates)

    def as_arrays(self):
        return {
            "estimates": np.array(self.estimates),
            "errors": np.array(self.errors, dtype=float),
            "elbos": np.array(self.elbos),
            "inputs": np.array(self.inputs),
        }


def run_calibration(source, model, config, rng, x0_true=None, initial=None):
    """Online acquire/encode/EM/refine/select loop.

    ``source.observe(s)`` must return the latent observation at cumulative
    input ``s``. One estimate is recorded per acquired observation; the
    input recorded at step t is the one applied after it (NaN at the end).
    """
    n = model.n
    if x0_true is None:
        x0_true = getattr(source, "x0", None)
    iterate = hard_em_iterate if config.hard else em_iterate
    cands = initial if initial is not None else initial_candidates(config, n, rng)
    trace = CalibrationTrace()
    s = np.zeros(n)
    step = 0
    try:
        z = np.asarray(source.observe(s), dtype=float)
    except RonchiError as exc:
        raise StepError(0, exc) from exc
    dataset = LatentDataset(z[None, :], s[None, :])
    calm = 0
    while True:
        t0 = time.perf_counter()
        try:
            for _ in range(max(1, config.em_iterations)):
                weighted, post, value = iterate(model, dataset, cands, config)
                cands = weighted
            est = point_estimate(weighted, config.mirror_mass_threshold)
        except RonchiError as exc:
            raise StepError(step, exc) from exc
        if trace.estimates:
            calm = calm + 1 if np.linalg.norm(est - trace.estimates[-1]) < config.tolerance else 0
        trace.estimates.append(est)
        trace.errors.append(float(np.linalg.norm(est - x0_true)) if x0_true is not None else np.nan)
        trace.elbos.append(value)
        trace.max_weights.append(float(weighted.weights.max()))
        done = step >= config.horizon or (config.stop_on_convergence and calm >= config.patience)
        if done:
            trace.inputs.append(np.full(n, np.nan))
            trace.step_seconds.append(time.perf_counter() - t0)
            if calm >= config.patience:
                trace.converged_at = step
            break
        try:
            if config.select_inputs:
                u = select_input(model, dataset, weighted, config, rng)
            else:
                u = np.zeros(n)
            cands = refine_candidates(weighted, config, rng)
            s = s + u
            z = np.asarray(source.observe(s), dtype=float)
        except RonchiError as exc:
            raise StepError(step + 1, exc) from exc
        trace.inputs.append(u)
        trace.step_seconds.append(time.perf_counter() - t0)
        dataset = dataset.append(z, s)
        step += 1
        log.debug("step %d  est=%s  maxw=%.3f", step, np.round(est, 2), trace.max_weights[-1])
    trace.final = weighted
    trace.posterior = post
    trace.dataset = dataset
    return trace
