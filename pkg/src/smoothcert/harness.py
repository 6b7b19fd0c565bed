"""Run the four certification methods over a test set and summarise the results.

Per input, DDRS runs first and hands ``sigma*`` and ``r_iso*`` to ANCER and
RDDRS; every method then gets a final hard-vote certificate. Seeds come from
a stable hash of ``(master seed, input id, tag)``, so adding or removing a
method leaves the other methods' random streams untouched. All optimisers
of one input share an evaluation seed, so their enclosure checks see the
same noise.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import Classifier, TrainConfig, load_model
from .data import LabeledDataset, Toy2DConfig, gen_toy2d, load_idx, train_test_split
from .errors import ConfigError, DimError, EigenvalueDegeneracy, GridMismatch, MismatchError, SmoothCertError
from .optimizers import (
    AncerConfig,
    DdrsConfig,
    RddrsConfig,
    ancer_optimize,
    ddrs_optimize,
    rddrs_optimize,
)
from .smoothing import ABSTAIN, Certificate, SmoothingSpec, predict_certify
from .stats import ConfidenceParams

METHODS = ("RS", "DDRS", "ANCER", "RDDRS")
CERT_COLUMNS = (
    "input_id", "method", "label", "predicted_class", "p_a_lower", "radius_gap", "proxy_radius",
    "det_root", "lambda_min", "sigma_star", "r_iso_star", "enclosure", "fallback", "note",
)
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}


# ---------------------------------------------------------------- configuration


def method_configs(profile: str, dataset: str, sigma: float):
    """Optimiser and certification settings for a named profile.

    ``paper`` uses the published hyperparameters verbatim. ``desk`` keeps
    them where affordable and shrinks the expensive ones; on the toy task
    it also uses smaller step sizes, because the published ones diverge in
    two dimensions.
    """
    if profile == "paper":
        return (
            DdrsConfig(sigma_init=sigma),
            AncerConfig(),
            RddrsConfig(n_samples=20_000),
            ConfidenceParams(),
        )
    if profile != "desk":
        raise ConfigError(f"unknown profile {profile!r}")
    if dataset == "toy2d":
        return (
            DdrsConfig(sigma_init=sigma),
            AncerConfig(lr_grid=(0.004, 0.04)),
            RddrsConfig(lr_grid=(0.02, 0.05), n_eval=1000),
            ConfidenceParams(),
        )
    return (
        DdrsConfig(sigma_init=sigma, iter_grid=(100, 200, 300, 400, 500), n_eval=500),
        AncerConfig(n_eval=500),
        RddrsConfig(lr_grid=(2.5, 5.0), iterations=20, n_samples=500, n_eval=500, eval_every=5),
        ConfidenceParams(),
    )


def train_config(dataset: str, sigma: float, seed: int = 0) -> TrainConfig:
    """Default training recipe: Gaussian augmentation at the certification sigma."""
    if dataset == "toy2d":
        return TrainConfig(sigma_aug=sigma, epochs=60, batch_size=32, learning_rate=0.1, seed=seed,
                           hidden=(32, 32))
    return TrainConfig(sigma_aug=sigma, epochs=30, batch_size=64, learning_rate=0.1, seed=seed,
                       hidden=(256, 128))


@dataclass
class RunConfig:
    dataset: str = "toy2d"
    data_dir: str = "data/mnist5k"
    model_path: str = ""
    methods: tuple[str, ...] = METHODS
    sigma_train: float = 0.25
    subset: int = 100
    seed: int = 0
    outdir: str = "out"
    profile: str = "desk"
    workers: int = 1
    # JSON sidecars carry the full S matrix, so they are written only up to this dimension
    json_dim_limit: int = 64
    toy: Toy2DConfig = field(default_factory=lambda: Toy2DConfig(num_per_class=200))
    toy_train_fraction: float = 0.8
    ddrs: DdrsConfig | None = None
    ancer: AncerConfig | None = None
    rddrs: RddrsConfig | None = None
    confidence: ConfidenceParams | None = None
    train: TrainConfig | None = None

    def __post_init__(self):
        self.methods = tuple(m.upper() for m in self.methods)
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if self.subset < 1:
            raise ConfigError("subset must be at least 1")
        if self.dataset not in ("toy2d", "mnist"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.sigma_train <= 0 or self.workers < 1:
            raise ConfigError("sigma_train and workers must be positive")
        ddrs, ancer, rddrs, conf = method_configs(self.profile, self.dataset, self.sigma_train)
        self.ddrs = self.ddrs or ddrs
        self.ancer = self.ancer or ancer
        self.rddrs = self.rddrs or rddrs
        self.confidence = self.confidence or conf
        self.train = self.train or train_config(self.dataset, self.sigma_train, self.seed)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        """Build from a JSON document; nested sections may be partial."""
        obj = dict(obj)
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown RunConfig fields: {sorted(unknown)}")
        nested = {"toy": Toy2DConfig, "ddrs": DdrsConfig, "ancer": AncerConfig,
                  "rddrs": RddrsConfig, "confidence": ConfidenceParams, "train": TrainConfig}
        try:
            base = cls(**{k: v for k, v in obj.items() if k not in nested})
            for key, typ in nested.items():
                if obj.get(key) is not None:
                    if not isinstance(obj[key], dict):
                        raise ConfigError(f"section {key!r} must be a JSON object")
                    section = {k: _tuples(v) for k, v in obj[key].items()}
                    current = dataclasses.asdict(getattr(base, key))
                    setattr(base, key, typ(**{**current, **section}))
            if "methods" in obj:
                base.methods = tuple(m.upper() for m in obj["methods"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return base


def _tuples(value):
    """JSON arrays back to (nested) tuples, as the config dataclasses expect."""
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def derive_seed(master: int, input_id: int, tag: str) -> int:
    """Stable 63-bit seed from ``(master, input_id, tag)``."""
    h = hashlib.blake2b(f"{master}/{input_id}/{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


# ---------------------------------------------------------------- data


def load_datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and test sets for ``cfg.dataset``."""
    if cfg.dataset == "toy2d":
        return train_test_split(gen_toy2d(cfg.toy), cfg.toy_train_fraction, cfg.toy.seed)
    root = Path(cfg.data_dir)
    sets = []
    for split in ("train", "test"):
        images, labels = (root / name for name in MNIST_FILES[split])
        if not images.exists() or not labels.exists():
            raise FileNotFoundError(f"missing MNIST files under {root}")
        sets.append(load_idx(images, labels, f"mnist-{split}"))
    return sets[0], sets[1]


def first_n(ds: LabeledDataset, n: int) -> LabeledDataset:
    """The first ``n`` inputs by index."""
    return ds.subset(np.arange(min(n, len(ds))))


# ---------------------------------------------------------------- certification


_FAILURES = (SmoothCertError, ArithmeticError, np.linalg.LinAlgError)


def certify_input(model: Classifier, x: np.ndarray, label: int, input_id: int,
                  cfg: RunConfig) -> list[Certificate]:
    """All requested certificates for one input, in ``cfg.methods`` order.

    A failure in one method becomes an abstaining certificate carrying the
    error in ``note``; methods that depend on a failed DDRS run fail with it.
    """
    eval_seed = derive_seed(cfg.seed, input_id, "eval")
    cert_seed = derive_seed(cfg.seed, input_id, "certify")
    d = x.shape[0]
    cache: dict = {}

    def seed_of(tag):
        return derive_seed(cfg.seed, input_id, tag)

    def ddrs():
        if "DDRS" not in cache:
            cache["DDRS"] = ddrs_optimize(model, x, cfg.ddrs, seed_of("DDRS"), eval_seed=eval_seed)
        return cache["DDRS"]

    def ancer():
        if "ANCER" not in cache:
            cache["ANCER"] = ancer_optimize(model, x, cfg.ancer, ddrs(), seed_of("ANCER"), eval_seed=eval_seed)
        return cache["ANCER"]

    def rddrs():
        init = ancer().spec.matrix(d) if cfg.rddrs.init == "ancer" else None
        return rddrs_optimize(model, x, cfg.rddrs, ddrs(), seed_of("RDDRS"), eval_seed=eval_seed, init=init)

    optimizers = {"DDRS": ddrs, "ANCER": ancer, "RDDRS": rddrs}
    certs = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        spec = SmoothingSpec.isotropic(cfg.sigma_train)
        info = {}
        try:
            if method != "RS":
                res = optimizers[method]()
                spec, info = res.spec, _opt_info(res)
            cert = predict_certify(model, x, spec, cfg.confidence, cert_seed,
                                   input_id=input_id, method=method, label=label)
        except _FAILURES as exc:
            cert = Certificate(input_id, method, ABSTAIN, 0.0, 0.0, spec, d, label=label,
                               note=f"error: {type(exc).__name__}: {exc}", x=x)
        for k, v in info.items():
            setattr(cert, k, v)
        cert.wall_time_s = time.perf_counter() - t0
        certs.append(cert)
    return certs


def _opt_info(res) -> dict:
    return {"sigma_star": res.sigma_star, "r_iso_star": res.r_iso_star,
            "enclosure": res.enclosure, "fallback": res.fallback}


_WORKER: dict = {}


def _init_worker(model, cfg):
    warnings.simplefilter("ignore", EigenvalueDegeneracy)
    _WORKER["model"], _WORKER["cfg"] = model, cfg


def _work(task):
    input_id, x, label = task
    return certify_input(_WORKER["model"], x, label, input_id, _WORKER["cfg"])


def run_certification(cfg: RunConfig, model: Classifier | None = None,
                      test: LabeledDataset | None = None) -> list[Certificate]:
    """Certify the first ``cfg.subset`` test inputs with every method in ``cfg.methods``.

    Results come back in input-id order whatever the worker count.
    """
    if model is None:
        if not cfg.model_path:
            raise ConfigError("no model given")
        model = load_model(cfg.model_path)
    if test is None:
        test = load_datasets(cfg)[1]
    if model.input_dim != test.dim:
        raise MismatchError(f"model expects dim {model.input_dim}, data has dim {test.dim}")
    test = first_n(test, cfg.subset)
    tasks = [(i, test.x[i], int(test.y[i])) for i in range(len(test))]
    if cfg.workers == 1:
        with warnings.catch_warnings():
            _init_worker(model, cfg)
            results = [_work(t) for t in tasks]
    else:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(model, cfg)) as pool:
            results = list(pool.map(_work, tasks))
    return [c for per_input in results for c in per_input]


# ---------------------------------------------------------------- artifacts


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def cert_row(c: Certificate) -> dict:
    return {
        "input_id": c.input_id, "method": c.method, "label": c.label,
        "predicted_class": c.predicted_class, "p_a_lower": c.p_a_lower,
        "radius_gap": c.radius_gap, "proxy_radius": c.proxy_radius, "det_root": c.det_root,
        "lambda_min": c.lambda_min, "sigma_star": c.sigma_star, "r_iso_star": c.r_iso_star,
        "enclosure": c.enclosure, "fallback": c.fallback, "note": c.note,
    }


def write_certificates_csv(certs: list[Certificate], path) -> None:
    """Deterministic certificate table; wall-clock times go to a separate file."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CERT_COLUMNS)
        for c in certs:
            row = cert_row(c)
            w.writerow([_fmt(row[k]) for k in CERT_COLUMNS])


def write_timings_csv(certs: list[Certificate], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_id", "method", "wall_time_s"])
        for c in certs:
            w.writerow([c.input_id, c.method, f"{c.wall_time_s:.4f}"])


def read_certificates_csv(path) -> list[dict]:
    """Rows of a certificate table with numeric fields parsed."""
    ints = {"input_id", "label", "predicted_class"}
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(CERT_COLUMNS) - set(reader.fieldnames):
            raise ConfigError(f"{path}: not a certificate table")
        for r in reader:
            row = {}
            for k, v in r.items():
                if k in ints:
                    row[k] = int(v)
                elif k in ("method", "note"):
                    row[k] = v
                elif k == "fallback":
                    row[k] = v == "1"
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def certificate_to_json(c: Certificate) -> dict:
    def num(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    return {
        "input_id": c.input_id, "method": c.method, "label": c.label,
        "predicted_class": c.predicted_class, "p_a_lower": c.p_a_lower, "radius_gap": c.radius_gap,
        "dim": c.dim, "spec": c.spec.to_json(), "x": None if c.x is None else np.asarray(c.x).tolist(),
        "sigma_star": num(c.sigma_star), "r_iso_star": num(c.r_iso_star), "enclosure": num(c.enclosure),
        "fallback": c.fallback, "note": c.note,
    }


def certificate_from_json(obj: dict) -> Certificate:
    def num(v):
        return float("nan") if v is None else float(v)

    try:
        return Certificate(
            int(obj["input_id"]), obj["method"], int(obj["predicted_class"]), float(obj["p_a_lower"]),
            float(obj["radius_gap"]), SmoothingSpec.from_json(obj["spec"]), int(obj["dim"]),
            label=int(obj.get("label", -1)), sigma_star=num(obj.get("sigma_star")),
            r_iso_star=num(obj.get("r_iso_star")), enclosure=num(obj.get("enclosure")),
            fallback=bool(obj.get("fallback", False)), note=obj.get("note", ""),
            x=None if obj.get("x") is None else np.asarray(obj["x"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed certificate record: {exc}") from exc


def write_outputs(certs: list[Certificate], cfg: RunConfig) -> Path:
    """Write ``certs.csv``, ``timings.csv``, ``config.json`` and small-dimension sidecars."""
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_certificates_csv(certs, out / "certs.csv")
    write_timings_csv(certs, out / "timings.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    if certs and certs[0].dim <= cfg.json_dim_limit:
        side = out / "certs"
        side.mkdir(exist_ok=True)
        for c in certs:
            path = side / f"{c.method.lower()}_{c.input_id:05d}.json"
            path.write_text(json.dumps(certificate_to_json(c), sort_keys=True) + "\n")
    return out


def read_certificate_json(path) -> Certificate:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return certificate_from_json(obj)


# ---------------------------------------------------------------- curves


@dataclass(frozen=True)
class CurvePoint:
    radius: float
    certified_accuracy: float
    method: str
    sigma_train: float = float("nan")


def radius_grid(grid_max: float = 6.0, step: float = 0.05) -> np.ndarray:
    if step <= 0 or grid_max < 0:
        raise ConfigError("grid step must be positive and grid_max non-negative")
    k = int(math.floor(grid_max / step + 1e-9))
    return np.round(np.arange(k + 1) * step, 10)


def _cert_fields(c) -> tuple[str, bool, float]:
    if isinstance(c, dict):
        ok = c["predicted_class"] != ABSTAIN and c["predicted_class"] == c["label"]
        return c["method"], ok, c["proxy_radius"]
    return c.method, c.correct, c.proxy_radius


def build_curve(certs, radii, sigma_train: float = float("nan")) -> list[CurvePoint]:
    """Certified accuracy at each radius: correct, not abstained, proxy radius at least ``R``.

    ``certs`` may be ``Certificate`` objects or rows of a certificate table.
    """
    fields = [_cert_fields(c) for c in certs]
    methods = {f[0] for f in fields}
    if len(methods) > 1:
        raise ConfigError(f"certificates mix methods {sorted(methods)}")
    method = methods.pop() if methods else ""
    n = len(fields)
    proxies = np.array([p for _, ok, p in fields if ok])
    points = []
    for r in radii:
        acc = float(np.sum(proxies >= r)) / n if n else 0.0
        points.append(CurvePoint(float(r), acc, method, sigma_train))
    return points


def curves_by_method(certs, radii, sigma_train: float = float("nan")) -> dict[str, list[CurvePoint]]:
    groups: dict[str, list] = {}
    for c in certs:
        groups.setdefault(_cert_fields(c)[0], []).append(c)
    return {m: build_curve(g, radii, sigma_train) for m, g in groups.items()}


def mean_proxy_radius(certs) -> float:
    """Average proxy radius over all inputs, counting wrong or abstained ones as zero."""
    vals = [p if ok else 0.0 for _, ok, p in map(_cert_fields, certs)]
    return float(np.mean(vals)) if vals else 0.0


def paired_difference(certs_a, certs_b) -> tuple[float, float]:
    """Mean and standard error of per-input proxy-radius differences ``a - b``."""
    def by_id(cs):
        out = {}
        for c in cs:
            key = c["input_id"] if isinstance(c, dict) else c.input_id
            _, ok, p = _cert_fields(c)
            out[key] = p if ok else 0.0
        return out

    a, b = by_id(certs_a), by_id(certs_b)
    ids = sorted(set(a) & set(b))
    if not ids:
        raise MismatchError("no common inputs")
    diff = np.array([a[i] - b[i] for i in ids])
    se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else float("inf")
    return float(diff.mean()), se


def compare_methods(curves: dict[str, list[CurvePoint]], certs_by_method: dict | None = None) -> dict:
    """Per-method summary plus pairwise dominance on the shared radius grid."""
    grids = {m: {round(p.radius, 10) for p in pts} for m, pts in curves.items()}
    common = set.intersection(*grids.values()) if grids else set()
    if not common:
        raise GridMismatch("curves share no radius grid points")
    common = sorted(common)
    acc = {m: {round(p.radius, 10): p.certified_accuracy for p in pts} for m, pts in curves.items()}
    summary = {"grid": common, "methods": {}, "dominance": {}}
    for m in curves:
        ys = np.array([acc[m][r] for r in common])
        entry = {
            "clean_accuracy": acc[m].get(0.0, float(ys[0])),
            "auc": float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(common))) if len(common) > 1 else 0.0,
        }
        if certs_by_method and m in certs_by_method:
            cs = certs_by_method[m]
            entry["mean_proxy_radius"] = mean_proxy_radius(cs)
            certified = [p for _, ok, p in map(_cert_fields, cs) if ok]
            entry["mean_proxy_radius_certified"] = float(np.mean(certified)) if certified else 0.0
        summary["methods"][m] = entry
    for a in curves:
        for b in curves:
            if a != b:
                frac = np.mean([acc[a][r] >= acc[b][r] for r in common])
                summary["dominance"][f"{a}>={b}"] = float(frac)
    return summary


def write_curves_csv(curves: dict[str, list[CurvePoint]], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sigma_train", "radius", "certified_accuracy"])
        for m in sorted(curves, key=lambda k: METHODS.index(k) if k in METHODS else len(METHODS)):
            for p in curves[m]:
                w.writerow([m, _fmt(p.sigma_train), _fmt(p.radius), _fmt(p.certified_accuracy)])


# ---------------------------------------------------------------- 2D regions


def export_region_2d(cert: Certificate, num_boundary_points: int = 256) -> np.ndarray:
    """Points on the certified ellipse ``x + (gap / 2) S u`` at equally spaced angles."""
    if cert.dim != 2:
        raise DimError(f"region export needs d = 2, got d = {cert.dim}")
    if num_boundary_points < 3:
        raise ConfigError("need at least three boundary points")
    x = np.zeros(2) if cert.x is None else np.asarray(cert.x, dtype=float)
    t = 2.0 * np.pi * np.arange(num_boundary_points) / num_boundary_points
    u = np.stack([np.cos(t), np.sin(t)], axis=1)
    radius = 0.0 if cert.abstained else cert.certified_radius
    return x + radius * u @ cert.spec.matrix(2).T


def write_region_csv(points: np.ndarray, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2"])
        for p in points:
            w.writerow([repr(float(p[0])), repr(float(p[1]))])
