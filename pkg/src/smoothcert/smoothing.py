"""Gaussian smoothing of a base classifier and the certificates it yields.

Every noise model is stored as a sqrt-covariance ``S``: a noisy copy of ``x``
is ``x + S z`` with ``z ~ N(0, I)``, so the covariance is ``S^2``.

The certified region for a non-abstaining prediction is the ellipsoid
``{x + delta : ||S^-1 delta||_2 < gap / 2}`` where ``gap`` is
``Phi^-1(p_A) - Phi^-1(p_B)``. For ``S = sigma I`` it is the familiar ball of
radius ``sigma/2 * gap``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import spd
from .errors import DimMismatch, DomainError
from .stats import ConfidenceParams, clopper_pearson_lower, std_normal_quantile

ABSTAIN = -1
CHUNK = 4096

# fixed stream ids so selection, estimation and optimisation never share draws
STREAM_SELECT = 1
STREAM_ESTIMATE = 2
STREAM_MC = 3


@dataclass(frozen=True)
class SmoothingSpec:
    kind: Literal["isotropic", "diagonal", "full"]
    param: np.ndarray | float = field(compare=False)

    def __post_init__(self):
        if self.kind == "isotropic":
            if not float(self.param) > 0:
                raise DomainError("sigma must be positive")
        elif self.kind == "diagonal":
            theta = np.asarray(self.param, dtype=float)
            if theta.ndim != 1 or not np.all(theta > 0):
                raise DomainError("diagonal scales must be a positive vector")
        elif self.kind == "full":
            spd.check_spd(self.param, "sqrt-covariance")
        else:
            raise DomainError(f"unknown smoothing kind {self.kind!r}")

    @classmethod
    def isotropic(cls, sigma: float) -> "SmoothingSpec":
        return cls("isotropic", float(sigma))

    @classmethod
    def diagonal(cls, theta) -> "SmoothingSpec":
        return cls("diagonal", np.array(theta, dtype=float))

    @classmethod
    def full(cls, c) -> "SmoothingSpec":
        return cls("full", spd.sym(np.array(c, dtype=float)))

    def matrix(self, d: int) -> np.ndarray:
        if self.kind == "isotropic":
            return self.param * np.eye(d)
        if self.kind == "diagonal":
            return np.diag(self.param)
        return np.array(self.param)

    def eigenvalues(self, d: int) -> np.ndarray:
        if self.kind == "isotropic":
            return np.full(d, self.param)
        if self.kind == "diagonal":
            return np.sort(self.param)
        return np.linalg.eigvalsh(self.param)

    def det_root(self, d: int) -> float:
        return float(np.exp(np.mean(np.log(self.eigenvalues(d)))))

    def lambda_min(self, d: int) -> float:
        return float(self.eigenvalues(d)[0])

    def perturb(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Noisy inputs ``x + S z`` for a batch of standard-normal rows ``z``."""
        d = x.shape[-1]
        if z.shape[-1] != d:
            raise DimMismatch(f"noise dim {z.shape[-1]} != input dim {d}")
        if self.kind == "isotropic":
            return x + self.param * z
        if self.kind == "diagonal":
            if self.param.shape != (d,):
                raise DimMismatch("diagonal scale length differs from input dim")
            return x + z * self.param
        if self.param.shape != (d, d):
            raise DimMismatch("sqrt-covariance dim differs from input dim")
        return x + z @ self.param

    def to_json(self) -> dict:
        p = self.param
        return {"kind": self.kind, "param": p if self.kind == "isotropic" else np.asarray(p).tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SmoothingSpec":
        kind = obj["kind"]
        if kind == "isotropic":
            return cls.isotropic(obj["param"])
        return cls(kind, np.array(obj["param"], dtype=float))


def noise_rng(seed: int, stream: int, index: int = 0, chunk: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**64 - 1), stream, index, chunk])


def standard_normal_draws(seed: int, n: int, d: int, stream: int = STREAM_MC, index: int = 0) -> np.ndarray:
    """``n`` standard-normal rows drawn in fixed-size chunks.

    Chunk ``k`` always comes from substream ``(seed, stream, index, k)``, so
    any split of the work across workers reproduces the same draws.
    """
    out = np.empty((n, d))
    for k, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        out[start:stop] = noise_rng(seed, stream, index, k).standard_normal((stop - start, d))
    return out


def _check_x(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise DimMismatch(f"expected a single input of dim {model.input_dim}, got {x.shape}")
    return x


def mc_class_probs(model, x, spec: SmoothingSpec, n: int, seed: int, z: np.ndarray | None = None) -> np.ndarray:
    """Soft Monte-Carlo estimate of ``E[F(x + S z)]``.

    Pass ``z`` to supply the standard-normal draws explicitly (common random
    numbers); otherwise they come from ``seed``.
    """
    x = _check_x(model, x)
    if z is None:
        if n < 1:
            raise DomainError("need at least one sample")
        z = standard_normal_draws(seed, n, x.shape[0])
    total = np.zeros(model.num_classes)
    for start in range(0, len(z), CHUNK):
        total += model.forward(spec.perturb(x, z[start:start + CHUNK])).sum(axis=0)
    return total / len(z)


def mc_vote_counts(model, x, spec: SmoothingSpec, n: int, seed: int, stream: int = STREAM_ESTIMATE) -> np.ndarray:
    """Hard-vote counts of the base prediction under ``n`` noise draws."""
    x = _check_x(model, x)
    counts = np.zeros(model.num_classes, dtype=np.int64)
    for k, start in enumerate(range(0, n, CHUNK)):
        m = min(CHUNK, n - start)
        z = noise_rng(seed, stream, 0, k).standard_normal((m, x.shape[0]))
        preds = np.argmax(model.forward(spec.perturb(x, z)), axis=1)
        counts += np.bincount(preds, minlength=model.num_classes)
    return counts


def certified_radius_iso(p_a: float, p_b: float, sigma: float) -> float:
    """Isotropic l2 radius ``sigma/2 * (Phi^-1(p_A) - Phi^-1(p_B))``."""
    return 0.5 * sigma * certified_radius_gap(p_a, p_b)


def certified_radius_gap(p_a: float, p_b: float) -> float:
    return std_normal_quantile(p_a) - std_normal_quantile(p_b)


def proxy_radius(radius: float, spec: SmoothingSpec, d: int) -> float:
    """Volume-equivalent radius ``radius * det(S)^(1/d)``."""
    if radius < 0:
        raise DomainError("radius must be non-negative")
    return radius * spec.det_root(d)


@dataclass
class Certificate:
    input_id: int
    method: str
    predicted_class: int
    p_a_lower: float
    radius_gap: float
    spec: SmoothingSpec
    dim: int
    label: int = -1
    sigma_star: float = float("nan")
    r_iso_star: float = float("nan")
    enclosure: float = float("nan")
    fallback: bool = False
    note: str = ""
    wall_time_s: float = 0.0
    x: np.ndarray | None = field(default=None, repr=False)

    @property
    def abstained(self) -> bool:
        return self.predicted_class == ABSTAIN

    @property
    def certified_radius(self) -> float:
        """Radius of the certified ellipsoid in the ``S``-whitened norm."""
        return 0.5 * self.radius_gap

    @property
    def det_root(self) -> float:
        return self.spec.det_root(self.dim)

    @property
    def lambda_min(self) -> float:
        return self.spec.lambda_min(self.dim)

    @property
    def proxy_radius(self) -> float:
        if self.abstained:
            return 0.0
        return proxy_radius(self.certified_radius, self.spec, self.dim)

    @property
    def correct(self) -> bool:
        return not self.abstained and self.predicted_class == self.label


def predict_certify(
    model,
    x,
    spec: SmoothingSpec,
    conf: ConfidenceParams,
    seed: int,
    *,
    input_id: int = 0,
    method: str = "RS",
    label: int = -1,
) -> Certificate:
    """Two-stage certification: select the top class, then bound its probability.

    ``n0`` draws pick the majority-vote class; ``n`` fresh draws count its
    hits and a Clopper-Pearson bound gives ``p_A``. ``p_B`` is taken as
    ``1 - p_A``. Abstains when the bound does not exceed one half.
    """
    x = _check_x(model, x)
    d = x.shape[0]
    select = mc_vote_counts(model, x, spec, conf.n0, seed, STREAM_SELECT)
    top = int(np.argmax(select))
    hits = int(mc_vote_counts(model, x, spec, conf.n, seed, STREAM_ESTIMATE)[top])
    p_lower = clopper_pearson_lower(hits, conf.n, conf.alpha)
    cert = Certificate(input_id, method, ABSTAIN, p_lower, 0.0, spec, d, label=label, x=x)
    if p_lower > 0.5:
        cert.predicted_class = top
        cert.radius_gap = certified_radius_gap(p_lower, 1.0 - p_lower)
    return cert
