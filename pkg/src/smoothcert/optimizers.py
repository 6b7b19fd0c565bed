"""Per-input noise optimisers: scalar (DDRS), diagonal (ANCER) and full SPD (RDDRS).

All three ascend a Monte-Carlo estimate of a certified-region objective
built from soft class probabilities ``G = E[F(x + S z)]``. Gradients are
pathwise: the noise draws are held fixed and differentiated through
``x + S z``.

Draw schedule (the determinism contract):

* DDRS and RDDRS redraw ``z`` every iteration from substream
  ``(seed, stream, t)``; the draws never depend on the step size, so grid
  entries share random numbers.
* ANCER keeps a single batch fixed for the whole run.
* Final scoring and the enclosure check use a separate evaluation batch from
  ``eval_seed``. Passing the same ``eval_seed`` to all three optimisers makes
  their checks use common random numbers.

An optional orthogonal ``noise_basis`` ``Q`` maps every draw ``z -> Q z``.
The draws stay standard normal; a problem rotated by ``Q`` then sees exactly
the rotated noise of the original one.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spd
from .errors import DomainError, EigenvalueDegeneracy, NonFinite
from .smoothing import SmoothingSpec, standard_normal_draws
from .stats import PROB_EPS, clamp_probability, std_normal_pdf, std_normal_quantile

STREAM_DDRS = 11
STREAM_ANCER = 12
STREAM_RDDRS = 13
STREAM_EVAL = 14
SIGMA_MIN = 1e-4
DEGENERACY_TOL = 1e-8
# absorbs round-off between the DDRS score and the same quantity recomputed at sigma* I
ENCLOSURE_TOL = 1e-9


@dataclass
class DdrsConfig:
    lr: float = 1e-4
    n_samples: int = 100
    iter_grid: tuple[int, ...] = tuple(range(100, 1501, 100))
    sigma_init: float = 0.25
    n_eval: int = 1000
    # runner-up probability in the scored radius: "complement" (1 - p_A) or "runner_up"
    p_b: str = "complement"


@dataclass
class AncerConfig:
    lr_grid: tuple[float, ...] = (0.04, 0.4)
    kappa: float = 2.0
    iterations: int = 100
    n_samples: int = 100
    n_eval: int = 1000
    eval_every: int = 10
    p_b: str = "complement"


@dataclass
class RddrsConfig:
    lr_grid: tuple[float, ...] = (0.5, 1.25)
    kappa: float = 1e-6
    iterations: int = 100
    n_samples: int = 2000
    n_eval: int = 2000
    eval_every: int = 10
    p_b: str = "complement"
    # "floor": start at sigma* I; "ancer": start at the ANCER diagonal
    init: str = "floor"


@dataclass
class NoiseOptResult:
    spec: SmoothingSpec
    objective_trace: list[float]
    r_iso_star: float
    sigma_star: float
    converged_flag: bool
    fallback: bool = False
    enclosure: float = float("nan")
    step_size: float = float("nan")
    selected_iter: int = -1
    # class the smoothed classifier favours at the returned noise; -1 when unknown
    top_class: int = -1
    records: list[dict] = field(default_factory=list, repr=False)


@dataclass
class ObjectiveValue:
    H: float
    R: float
    P: float
    Kmin: float
    c_a: int
    c_b: int
    p_a: float
    p_b: float


def _draws(seed: int, n: int, d: int, stream: int, index: int, basis) -> np.ndarray:
    z = standard_normal_draws(seed, n, d, stream, index)
    return z if basis is None else z @ np.asarray(basis).T


def _top2(p_mean: np.ndarray) -> tuple[int, int]:
    order = np.argsort(-p_mean, kind="stable")
    return int(order[0]), int(order[1])


def _gap(p_a: float, p_b: float) -> float:
    return std_normal_quantile(clamp_probability(p_a)) - std_normal_quantile(clamp_probability(p_b))


def _runner_up(p_all: np.ndarray, c_a: int, c_b: int, mode: str) -> float:
    """Probability used for the runner-up: ``1 - p_A`` or the second-best class."""
    if mode == "complement":
        return 1.0 - float(p_all[c_a])
    if mode == "runner_up":
        return float(p_all[c_b])
    raise DomainError(f"unknown p_b mode {mode!r}")


def _gap_and_slopes(p_all: np.ndarray, mode: str):
    """Gap ``R`` plus the weights of ``grad G_cA`` and ``grad G_cB`` in ``grad R``."""
    _finite(p_all)
    c_a, c_b = _top2(p_all)
    p_b = _runner_up(p_all, c_a, c_b, mode)
    r = _gap(p_all[c_a], p_b)
    if mode == "complement":
        # p_B = 1 - p_A, so grad p_B = -grad p_A
        w_a, w_b = _quantile_slope(p_all[c_a]) + _quantile_slope(p_b), 0.0
    else:
        w_a, w_b = _quantile_slope(p_all[c_a]), _quantile_slope(p_b)
    return r, c_a, c_b, p_b, w_a, w_b


def _quantile_slope(p: float) -> float:
    """d Phi^-1(clamp(p)) / dp; zero where the clamp is active."""
    if not PROB_EPS < p < 1.0 - PROB_EPS:
        return 0.0
    return 1.0 / std_normal_pdf(std_normal_quantile(p))


def _finite(*vals) -> None:
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise NonFinite("objective or iterate became non-finite")


def soft_gap(model, x, noisy: np.ndarray, mode: str = "complement") -> tuple[float, int]:
    """Quantile gap ``R`` of the soft estimate over ``noisy``, and the top class."""
    p = model.forward(noisy).mean(axis=0)
    r, c_a, *_ = _gap_and_slopes(p, mode)
    return r, c_a


# ---------------------------------------------------------------- DDRS


def ddrs_optimize(model, x, cfg: DdrsConfig, seed: int, *, eval_seed: int | None = None,
                  noise_basis=None) -> NoiseOptResult:
    """Gradient ascent on ``sigma * Phi^-1(p_A(sigma))``.

    Every budget in ``cfg.iter_grid`` starts from ``sigma_init`` with the
    same per-iteration draws, so one run of ``max(iter_grid)`` steps visits
    all of them as checkpoints. The starting sigma is scored too. The best
    checkpoint by evaluated radius wins.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    eval_seed = seed if eval_seed is None else eval_seed
    z_eval = _draws(eval_seed, cfg.n_eval, d, STREAM_EVAL, 0, noise_basis)

    def score(sigma):
        r, c_a = soft_gap(model, x, x + sigma * z_eval, cfg.p_b)
        return sigma * r, c_a

    sigma = float(cfg.sigma_init)
    best_r, target = score(sigma)
    best_sigma = sigma
    checkpoints = set(cfg.iter_grid)
    trace, records = [], []
    completed = True
    for t in range(1, max(cfg.iter_grid) + 1):
        z = _draws(seed, cfg.n_samples, d, STREAM_DDRS, t, noise_basis)
        p_all = model.forward(x + sigma * z).mean(axis=0)
        c_a = _top2(p_all)[0]
        probs, grads = model.probs_and_grads(x + sigma * z, [c_a])
        p_a = float(probs[:, c_a].mean())
        dp = float(np.mean(np.sum(grads[0] * z, axis=1)))
        q = std_normal_quantile(clamp_probability(p_a))
        obj = sigma * q
        step = q + sigma * _quantile_slope(p_a) * dp
        try:
            _finite(obj, step)
        except NonFinite:
            completed = False
            break
        trace.append(obj)
        records.append({"iter": t, "H": obj, "sigma": sigma, "step_size": cfg.lr})
        sigma = max(sigma + cfg.lr * step, SIGMA_MIN)
        if t in checkpoints:
            r, c_a = score(sigma)
            if r > best_r and c_a == target:
                best_sigma, best_r = sigma, r
    return NoiseOptResult(
        spec=SmoothingSpec.isotropic(best_sigma),
        objective_trace=trace,
        r_iso_star=best_r,
        sigma_star=best_sigma,
        converged_flag=completed,
        step_size=cfg.lr,
        top_class=target,
        records=records,
    )


# ---------------------------------------------------------------- ANCER


def ancer_optimize(model, x, cfg: AncerConfig, ddrs_out: NoiseOptResult, seed: int, *,
                   eval_seed: int | None = None, noise_basis=None) -> NoiseOptResult:
    """Diagonal anisotropic ascent on ``r(theta) * gm(theta) + kappa * min(theta) * r(theta)``.

    ``theta`` starts at ``sigma*`` and is floored there after every step.
    Every ``cfg.eval_every`` steps the iterate is scored on the evaluation
    batch; among scored iterates of all step sizes that keep
    ``min(theta) * r >= r_iso*`` the one with the largest ``r * gm(theta)``
    is returned. With no such iterate the DDRS solution comes back with
    ``fallback`` set.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    floor = ddrs_out.sigma_star
    eval_seed = seed if eval_seed is None else eval_seed
    z = _draws(seed, cfg.n_samples, d, STREAM_ANCER, 0, noise_basis)
    z_eval = _draws(eval_seed, cfg.n_eval, d, STREAM_EVAL, 0, noise_basis)
    pick = _Selection(ddrs_out)

    def check(theta, lr, t, run):
        r, c_a = soft_gap(model, x, x + z_eval * theta, cfg.p_b)
        pick.offer(r * _geo_mean(theta), theta.min() * r, c_a, theta.copy(), lr, t, run)

    theta0 = np.full(d, floor)
    for lr in cfg.lr_grid:
        theta = theta0.copy()
        run = {"trace": [], "records": []}
        try:
            for t in range(cfg.iterations):
                if t % cfg.eval_every == 0:
                    check(theta, lr, t, run)
                p_all = model.forward(x + z * theta).mean(axis=0)
                r, c_a, c_b, _, w_a, w_b = _gap_and_slopes(p_all, cfg.p_b)
                _, grads = model.probs_and_grads(x + z * theta, [c_a, c_b])
                dr = np.mean((w_a * grads[0] - w_b * grads[1]) * z, axis=0)
                gm = _geo_mean(theta)
                k_idx = int(np.argmin(theta))
                kmin = float(theta[k_idx])
                h = r * gm + cfg.kappa * kmin * r
                dk = np.zeros(d)
                dk[k_idx] = 1.0
                grad = dr * (gm + cfg.kappa * kmin) + r * (gm / (d * theta) + cfg.kappa * dk)
                _finite(h, grad)
                run["trace"].append(h)
                run["records"].append({"iter": t, "H": h, "R": r, "P": gm, "Kmin": kmin,
                                       "lambda_min": kmin, "step_size": lr})
                theta = np.maximum(theta + lr * grad, floor)
            check(theta, lr, cfg.iterations, run)
        except NonFinite:
            pick.discard(run)
    return pick.result(ddrs_out, SmoothingSpec.diagonal, SmoothingSpec.diagonal(theta0))


def _geo_mean(v: np.ndarray) -> float:
    return float(np.exp(np.mean(np.log(v))))


class _Selection:
    """Feasible checkpoints from all step-size runs; the best ``R * P`` wins.

    A checkpoint is feasible when it encloses the DDRS ball
    (``Kmin R >= r_iso*``) for the class DDRS predicted.
    """

    def __init__(self, ddrs_out: NoiseOptResult):
        self.r_iso_star = ddrs_out.r_iso_star
        self.target = ddrs_out.top_class
        self.candidates = []
        self.runs = []

    def offer(self, score, enclosure, top_class, param, step, t, run):
        if not any(r is run for r in self.runs):
            self.runs.append(run)
        same_class = self.target < 0 or top_class == self.target
        if same_class and np.isfinite(score) and enclosure >= self.r_iso_star - ENCLOSURE_TOL:
            self.candidates.append((score, enclosure, param, step, t, run))

    def discard(self, run):
        """Drop a run that hit a non-finite value."""
        self.runs = [r for r in self.runs if r is not run]
        self.candidates = [c for c in self.candidates if c[5] is not run]

    def result(self, ddrs_out, make_spec, fallback_spec) -> NoiseOptResult:
        if not self.candidates:
            run = self.runs[0] if self.runs else {"trace": [], "records": []}
            return _fallback(ddrs_out, fallback_spec, run["trace"], float("nan"), records=run["records"])
        # first maximum wins, so ties keep the earliest checkpoint
        best = max(self.candidates, key=lambda c: c[0])
        _, enclosure, param, step, t, run = best
        return NoiseOptResult(make_spec(param), list(run["trace"]), ddrs_out.r_iso_star,
                              ddrs_out.sigma_star, True, enclosure=float(enclosure), step_size=step,
                              records=list(run["records"]), selected_iter=t, top_class=self.target)


def _fallback(ddrs_out, spec, trace, enclosure, lr=float("nan"), records=()):
    return NoiseOptResult(spec, list(trace), ddrs_out.r_iso_star, ddrs_out.sigma_star, False,
                          fallback=True, enclosure=enclosure, step_size=lr, records=list(records),
                          top_class=ddrs_out.top_class)


# ---------------------------------------------------------------- RDDRS


def _lambda_min_vector(lam: np.ndarray, vec: np.ndarray) -> np.ndarray:
    if len(lam) > 1 and lam[1] - lam[0] <= DEGENERACY_TOL * max(1.0, abs(lam[0])):
        warnings.warn("smallest eigenvalue is repeated; using a subgradient", EigenvalueDegeneracy,
                      stacklevel=3)
    return vec[:, 0]


def _objective_terms(model, x, c, eig, kappa, z, with_grad: bool, mode: str = "complement"):
    lam, vec = eig
    noisy = x + z @ c
    p_all = model.forward(noisy).mean(axis=0)
    r, c_a, c_b, p_b, w_a, w_b = _gap_and_slopes(p_all, mode)
    d = len(lam)
    p = float(np.exp(np.mean(np.log(lam))))
    kmin = float(lam[0])
    value = ObjectiveValue(r * p + kappa * kmin * r, r, p, kmin, c_a, c_b, float(p_all[c_a]), p_b)
    if not with_grad:
        return value, None

    _, grads = model.probs_and_grads(noisy, [c_a, c_b])
    n = len(z)
    # Euclidean gradient of R w.r.t. symmetric C: sym(E[grad F z^T]) per class
    m = (w_a * grads[0] - w_b * grads[1]).T @ z / n
    grad_r = c @ spd.sym(m) @ c
    v = _lambda_min_vector(lam, vec)
    grad_p = (p / d) * c
    grad_k = kmin * kmin * np.outer(v, v)
    grad_h = grad_r * (p + kappa * kmin) + r * (grad_p + kappa * grad_k)
    return value, spd.sym(grad_h)


def rddrs_objective(model, x, c, kappa: float, n: int, seed: int, *, z=None,
                    p_b: str = "complement") -> ObjectiveValue:
    """``H = R P + kappa Kmin R`` at ``C`` from a soft estimate over ``n`` draws.

    ``R`` is the quantile gap between the two top classes, ``P = det(C)^(1/d)``
    and ``Kmin`` the smallest eigenvalue of ``C``.
    """
    x = np.asarray(x, dtype=float)
    c = spd.check_spd(c, "C")
    if z is None:
        z = standard_normal_draws(seed, n, x.shape[0], STREAM_RDDRS)
    value, _ = _objective_terms(model, x, c, spd.sym_eig(c), kappa, z, False, p_b)
    return value


def rddrs_gradient(model, x, c, kappa: float, n: int, seed: int, *, z=None,
                   p_b: str = "complement") -> np.ndarray:
    """Affine-invariant gradient of ``H`` at ``C``.

    The quantile-gap part uses the pathwise estimate
    ``C E[sym(grad F(y) z^T)] C`` with ``y = x + C z``; the volume and
    smallest-eigenvalue parts use their closed forms ``(P/d) C`` and
    ``Kmin^2 v v^T``.
    """
    x = np.asarray(x, dtype=float)
    c = spd.check_spd(c, "C")
    if z is None:
        z = standard_normal_draws(seed, n, x.shape[0], STREAM_RDDRS)
    _, grad = _objective_terms(model, x, c, spd.sym_eig(c), kappa, z, True, p_b)
    return grad


def rddrs_optimize(model, x, cfg: RddrsConfig, ddrs_out: NoiseOptResult, seed: int, *,
                   eval_seed: int | None = None, noise_basis=None, init=None,
                   on_iterate=None) -> NoiseOptResult:
    """Riemannian ascent ``C <- floor(Exp_C(gamma grad H(C)))`` on SPD matrices.

    Starts at ``sigma* I`` unless ``init`` is given (it is floored first).
    One run per step size in ``cfg.lr_grid``. Every ``cfg.eval_every``
    iterations, and after the last one, the iterate is scored on the
    evaluation batch; the best ``R P`` among iterates with
    ``Kmin R >= r_iso*`` is returned. With no such iterate the result falls
    back to ``sigma* I``. ``on_iterate(step_size, t, C)`` sees every iterate.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    floor = ddrs_out.sigma_star
    eval_seed = seed if eval_seed is None else eval_seed
    z_eval = _draws(eval_seed, cfg.n_eval, d, STREAM_EVAL, 0, noise_basis)
    c0 = floor * np.eye(d) if init is None else spd.project_eigen_floor(spd.check_spd(init, "init"), floor)
    pick = _Selection(ddrs_out)

    def check(c, eig, gamma, t, run):
        value, _ = _objective_terms(model, x, c, eig, cfg.kappa, z_eval, False, cfg.p_b)
        pick.offer(value.R * value.P, value.Kmin * value.R, value.c_a, c, gamma, t, run)

    for gamma in cfg.lr_grid:
        run = {"trace": [], "records": []}
        try:
            _rddrs_run(model, x, cfg, c0, floor, gamma, seed, noise_basis, run, check, on_iterate)
        except (NonFinite, DomainError, np.linalg.LinAlgError):
            pick.discard(run)
    return pick.result(ddrs_out, SmoothingSpec.full, SmoothingSpec.full(floor * np.eye(d)))


def _rddrs_run(model, x, cfg, c0, floor, gamma, seed, basis, run, check, on_iterate):
    d = x.shape[0]
    c = c0
    eig = spd.sym_eig(c)
    for t in range(cfg.iterations):
        if t % cfg.eval_every == 0:
            check(c, eig, gamma, t, run)
        z = _draws(seed, cfg.n_samples, d, STREAM_RDDRS, t, basis)
        value, grad = _objective_terms(model, x, c, eig, cfg.kappa, z, True, cfg.p_b)
        _finite(value.H, grad)
        run["trace"].append(value.H)
        run["records"].append({"iter": t, "H": value.H, "R": value.R, "P": value.P, "Kmin": value.Kmin,
                               "lambda_min": float(eig[0][0]), "step_size": gamma})
        with np.errstate(over="raise", invalid="raise"):
            try:
                c_next = spd.exp_map(c, gamma * grad, y_eig=eig)
            except FloatingPointError as exc:
                raise NonFinite(str(exc)) from exc
        _finite(c_next)
        lam, vec = spd.sym_eig(c_next)
        if lam[0] < floor:
            lam = np.maximum(lam, floor)
            c_next = spd.from_eig(lam, vec)
        c, eig = c_next, (lam, vec)
        if on_iterate is not None:
            on_iterate(gamma, t, c)
    check(c, eig, gamma, cfg.iterations, run)


def dump_trace(result: NoiseOptResult, path) -> None:
    """Write optimiser records as JSON lines."""
    with Path(path).open("w") as fh:
        for rec in result.records:
            fh.write(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                                 for k, v in rec.items()}) + "\n")
