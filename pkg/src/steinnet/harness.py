"""Benchmark runs: configuration, execution of MC/BQ/CF/BSN, metrics and result files."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import genz, laplace, quad_baselines
from .errors import ConfigError
from .net import Activation, MlpNetwork
from .stein import DiffusionChoice, DiffusionKind, SteinModel
from .targets import IsotropicGaussian, MalaConfig, TargetDistribution, mala_sample, sample_grid_1d
from .train import DEFAULT_WEIGHT_DECAY, LbfgsConfig, TrainingSet, adam_fit, lbfgs_fit

log = logging.getLogger(__name__)

EPS_REL = 1e-12
METHODS = ("mc", "bq", "cf", "bsn")
SAMPLINGS = ("iid", "grid1d", "mala")
RESULT_FIELDS = ("method", "problem", "dim", "n", "seed", "estimate", "truth", "abs_error", "rel_error",
                 "posterior_std", "calibration", "sample_time_s", "fit_time_s", "train_final_loss",
                 "acceptance_rate")


# problems


@dataclass(frozen=True)
class Problem:
    """Target, integrand ``f`` on R^d, and the true value of ``E_pi f``.

    ``embedding`` is what BQ uses for this target; None disables BQ.
    """

    name: str
    target: TargetDistribution
    integrand: Callable
    truth: float
    embedding: object = None
    bounds: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.target.dim


def make_problem(problem_id: str, dim: int, a=None, u=None) -> Problem:
    """Build a named problem; ``genz-<family>`` under ``N(0, I_dim)``."""
    if isinstance(problem_id, Problem):
        return problem_id
    if not str(problem_id).lower().startswith("genz"):
        raise ConfigError(f"unknown problem {problem_id!r}; expected genz-<family>")
    try:
        spec = genz.GenzSpec(problem_id, int(dim), a, u)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    integrand = genz.TransformedIntegrand(spec)
    return Problem(spec.name, IsotropicGaussian(spec.dim), integrand, genz.ground_truth(spec),
                   embedding=quad_baselines.GaussianEmbedding(1.0, check=False))


# configuration


@dataclass(frozen=True)
class BsnConfig:
    hidden_width: int = 32
    hidden_layers: int = 2
    activation: str = "celu"
    lam: float = DEFAULT_WEIGHT_DECAY
    decay_readout: bool = True
    optimizer: str = "lbfgs"
    max_iterations: int = 2000
    memory: int = 10
    g_tol: float = 1e-9
    adam_lr: float = 1e-3
    adam_iterations: int = 10_000
    diffusion: str = "identity"
    diffusion_scale: float = 1.0
    score_scaling: str = "none"
    laplace: bool = True
    noise: str = "unit"  # unit: sigma^2 = 1, residual: mean squared residual


@dataclass(frozen=True)
class BqConfig:
    kernel: str = "rbf"
    optimize: bool = True
    lengthscale: float = 1.0
    amplitude: float = 1.0
    nugget: float = quad_baselines.BQ_NUGGET


@dataclass(frozen=True)
class CfConfig:
    optimize: bool = True
    lengthscale: float = 1.0
    regularizer: float = quad_baselines.CF_REGULARIZER


@dataclass(frozen=True)
class SamplerConfig:
    step_size: float = 1.0
    burn_in: int = 1000
    thinning: int = 1


@dataclass(frozen=True)
class RunConfig:
    method: str = "bsn"
    problem: object = "genz-continuous"
    dim: int = 1
    n: int = 1024
    seeds: tuple = (0,)
    sampling: str = "iid"
    genz_a: tuple | None = None
    genz_u: tuple | None = None
    bsn: BsnConfig = field(default_factory=BsnConfig)
    bq: BqConfig = field(default_factory=BqConfig)
    cf: CfConfig = field(default_factory=CfConfig)
    mala: SamplerConfig = field(default_factory=SamplerConfig)

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"sampling must be one of {SAMPLINGS}, got {self.sampling!r}")
        if int(self.n) < 1:
            raise ConfigError("n must be at least 1")
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed is needed")
        dim = self.problem.dim if isinstance(self.problem, Problem) else int(self.dim)
        if dim < 1:
            raise ConfigError("dim must be positive")
        if self.sampling == "grid1d" and dim != 1:
            raise ConfigError("grid1d sampling needs dim = 1")
        if self.method == "mc" and self.n < 2:
            raise ConfigError("Monte Carlo needs n >= 2")
        b = self.bsn
        try:
            Activation(b.activation)
            kind = DiffusionKind(b.diffusion)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if b.optimizer not in ("lbfgs", "adam"):
            raise ConfigError("bsn optimizer must be lbfgs or adam")
        if b.noise not in ("unit", "residual"):
            raise ConfigError("bsn noise must be unit or residual")
        if b.score_scaling not in ("none", "std", "max"):
            raise ConfigError("score_scaling must be none, std or max")
        if b.score_scaling != "none" and kind not in (DiffusionKind.IDENTITY, DiffusionKind.SCALED):
            raise ConfigError("score scaling sets a scaled identity; it cannot combine with " + kind.value)
        if b.hidden_width < 1 or b.hidden_layers < 0 or b.lam < 0 or b.max_iterations < 1:
            raise ConfigError("invalid network or training settings")
        if self.bq.kernel not in ("rbf", "matern12"):
            raise ConfigError("bq kernel must be rbf or matern12")
        return self


# records


@dataclass
class RunRecord:
    method: str
    problem: str
    dim: int
    n: int
    seed: int
    estimate: float
    truth: float
    abs_error: float
    rel_error: float
    posterior_std: float | None = None
    calibration: float | None = None
    sample_time_s: float = 0.0
    fit_time_s: float = 0.0
    train_final_loss: float | None = None
    acceptance_rate: float | None = None
    error: str | None = field(default=None, compare=False)
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def headline_error(self) -> float:
        """Relative error, or the absolute error when the truth is ~0."""
        return self.abs_error if abs(self.truth) < EPS_REL else self.rel_error

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in RESULT_FIELDS}


def error_metrics(estimate, truth, posterior_std=None):
    """``(abs_error, rel_error, calibration)``; calibration only with a posterior std."""
    abs_err = abs(estimate - truth)
    rel = abs_err / max(abs(truth), EPS_REL)
    gamma = None
    if posterior_std is not None and posterior_std > 0:
        gamma = abs_err / posterior_std
    return abs_err, rel, gamma


def seed_streams(seed: int):
    """Independent ``(sampling, fitting)`` seed sequences for one repetition."""
    return np.random.SeedSequence(int(seed)).spawn(2)


def sample_points(problem: Problem, cfg: RunConfig, rng):
    """Draw the point set; returns ``(x, acceptance_rate or None)``."""
    n = int(cfg.n)
    if cfg.sampling == "iid":
        return problem.target.sample(n, rng), None
    if cfg.sampling == "grid1d":
        sigma = getattr(problem.target, "sigma", None)
        if sigma is None:
            raise ConfigError("grid1d sampling needs a target with a scale parameter")
        return sample_grid_1d(sigma, n) + getattr(problem.target, "mu", 0.0), None
    m = cfg.mala
    mcfg = MalaConfig(m.step_size, m.burn_in, m.thinning, seed=None)
    return mala_sample(problem.target, mcfg, n, rng=rng)


def _diffusion(b: BsnConfig, scores) -> DiffusionChoice:
    if b.score_scaling != "none":
        return DiffusionChoice.from_scores(scores, b.score_scaling)
    if DiffusionKind(b.diffusion) is DiffusionKind.SCALED:
        return DiffusionChoice.scaled(b.diffusion_scale)
    return DiffusionChoice(DiffusionKind(b.diffusion))


def fit_bsn(problem: Problem, x, f, scores, b: BsnConfig, fit_seed):
    """Train a Stein network and (optionally) its Laplace posterior.

    Returns ``(model, FitResult, LaplacePosterior or None)``.
    """
    net = MlpNetwork.init(problem.dim, b.hidden_width, b.hidden_layers, b.activation,
                          rng=np.random.default_rng(fit_seed))
    template = SteinModel(net, problem.target, _diffusion(b, scores), float(np.mean(f)), problem.bounds)
    data = TrainingSet(x, f, scores)
    if b.optimizer == "lbfgs":
        cfg = LbfgsConfig(memory=b.memory, max_iterations=b.max_iterations, g_tol=b.g_tol)
        model, res = lbfgs_fit(data, template, b.lam, cfg, seed=None, decay_readout=b.decay_readout)
    else:
        model, res = adam_fit(data, template, b.lam, b.adam_lr, b.adam_iterations, seed=None,
                              decay_readout=b.decay_readout)
    sigma2 = 1.0 if b.noise == "unit" else None
    post = laplace.laplace_posterior(model, x, f, scores, sigma2=sigma2) if b.laplace else None
    return model, res, post


def _run_method(cfg: RunConfig, problem: Problem, x, f, fit_seed):
    """Returns ``(estimate, posterior_std, train_final_loss, extras)``."""
    if cfg.method == "mc":
        est, se = quad_baselines.mc_estimate(f)
        return est, None, None, {"std_error": se}
    if cfg.method == "bq":
        if problem.embedding is None:
            raise ConfigError(f"no kernel embedding available for {problem.name}")
        q = cfg.bq
        emb = problem.embedding
        if q.kernel == "matern12":
            if problem.dim != 1:
                raise ConfigError("the Matern-1/2 embedding is one-dimensional")
            emb = quad_baselines.MaternHalfEmbedding(check=False)
            kernel = quad_baselines.MaternHalfKernel(q.amplitude, q.lengthscale)
        else:
            kernel = quad_baselines.RbfKernel(q.amplitude, q.lengthscale)
        post = quad_baselines.bq_estimate(x, f, kernel, emb, q.optimize, nugget=q.nugget)
        return post.mean, post.std, None, {"kernel": post.kernel}
    scores = problem.target.score(x)
    if cfg.method == "cf":
        c = cfg.cf
        res = quad_baselines.stein_cf_estimate(x, f, scores, quad_baselines.RbfKernel(1.0, c.lengthscale),
                                               c.regularizer, c.optimize)
        return res.estimate, None, None, {"kernel": res.kernel}
    model, fit, post = fit_bsn(problem, x, f, scores, cfg.bsn, fit_seed)
    extras = {"iterations": fit.iterations, "reason": fit.reason.value, "model": model}
    std = None
    if post is not None:
        std = post.theta0_std
        extras.update(sigma2=post.sigma2, sigma0_2=post.sigma0_2, theta0_variance=post.theta0_variance)
    return model.theta0, std, fit.final_loss, extras


def run_once(cfg: RunConfig, seed: int, problem: Problem | None = None) -> RunRecord:
    """One repetition. Numerical failures come back as a record with ``error`` set."""
    cfg.validate()
    if problem is None:
        problem = make_problem(cfg.problem, cfg.dim, cfg.genz_a, cfg.genz_u)
    sample_ss, fit_ss = seed_streams(seed)
    base = dict(method=cfg.method, problem=problem.name, dim=problem.dim, n=int(cfg.n), seed=int(seed),
                truth=float(problem.truth))
    t0 = time.perf_counter()
    acc = None
    try:
        x, acc = sample_points(problem, cfg, np.random.default_rng(sample_ss))
        f = np.asarray(problem.integrand(x), dtype=np.float64).reshape(-1)
        t1 = time.perf_counter()
        est, std, final_loss, extras = _run_method(cfg, problem, x, f, fit_ss)
        t2 = time.perf_counter()
    except ConfigError:
        raise
    except Exception as exc:  # numerical failure: keep going, report it
        log.warning("run %s/%s seed %s failed: %s", cfg.method, problem.name, seed, exc)
        nan = float("nan")
        return RunRecord(**base, estimate=nan, abs_error=nan, rel_error=nan, acceptance_rate=acc,
                         sample_time_s=time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
    abs_err, rel, gamma = error_metrics(float(est), problem.truth, std)
    return RunRecord(**base, estimate=float(est), abs_error=abs_err, rel_error=rel, posterior_std=std,
                     calibration=gamma, sample_time_s=t1 - t0, fit_time_s=t2 - t1,
                     train_final_loss=final_loss, acceptance_rate=acc, extras=extras)


@dataclass
class SuiteResult:
    records: list
    mean_rel_error: float
    std_rel_error: float

    @property
    def failed(self):
        return [r for r in self.records if r.failed]


def aggregate(records) -> tuple[float, float]:
    """Mean and (population) standard deviation of the headline error over successful runs."""
    errs = np.array([r.headline_error for r in records if not r.failed], dtype=np.float64)
    if errs.size == 0:
        return float("nan"), float("nan")
    return float(np.mean(errs)), float(np.std(errs))


def _run_packed(args):
    cfg, seed = args
    rec = run_once(cfg, seed)
    rec.extras.pop("model", None)  # not picklable cheaply, and not needed across processes
    return rec


def run_suite(cfg: RunConfig, workers: int = 1, problem: Problem | None = None) -> SuiteResult:
    """All seeds of one configuration; records are sorted by seed."""
    cfg.validate()
    seeds = sorted(int(s) for s in cfg.seeds)
    if workers > 1 and problem is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_packed, [(cfg, s) for s in seeds]))
    else:
        records = [run_once(cfg, s, problem) for s in seeds]
    records.sort(key=lambda r: r.seed)
    mean, std = aggregate(records)
    return SuiteResult(records, mean, std)


# serialisation


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(records, fmt: str, path) -> None:
    """Write records as CSV (fixed header) or JSONL (one object per record)."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh)
                w.writerow(RESULT_FIELDS)
                for r in records:
                    w.writerow([_fmt(v) for v in r.as_row().values()])
            elif fmt == "jsonl":
                for r in records:
                    row = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                           for k, v in r.as_row().items()}
                    fh.write(json.dumps(row) + "\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


_INT_FIELDS = {"dim", "n", "seed"}
_STR_FIELDS = {"method", "problem"}


def _parse(name, v):
    if v is None or v == "":
        return float("nan") if name in ("estimate", "abs_error", "rel_error") else None
    if name in _STR_FIELDS:
        return str(v)
    if name in _INT_FIELDS:
        return int(v)
    return float(v)


def read_results(path) -> list:
    """Read back a CSV or JSONL file written by :func:`emit_results`."""
    out = []
    with open(path, newline="") as fh:
        if str(path).endswith(".jsonl"):
            rows = [json.loads(line) for line in fh if line.strip()]
        else:
            rows = list(csv.DictReader(fh))
    for row in rows:
        out.append(RunRecord(**{k: _parse(k, row.get(k)) for k in RESULT_FIELDS}))
    return out


def format_for(path) -> str:
    return "jsonl" if str(path).endswith(".jsonl") else "csv"


# config files


def parse_seeds(text) -> tuple:
    """``"0..4"`` (inclusive range) or ``"0,1,2"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(p) for p in text.split(".."))
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None


def _coerce(default, value: str, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value.strip()


def _update_block(block, items: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(block)}
    changes = {}
    for key, value in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        changes[key] = _coerce(getattr(block, key), value, f"{section}.{key}")
    return dataclasses.replace(block, **changes)


def _float_tuple(text, key):
    try:
        return tuple(float(p) for p in str(text).split(","))
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def apply_overrides(cfg: RunConfig, run_items: dict, blocks: dict | None = None) -> RunConfig:
    """Apply string-valued settings (from a file or the command line)."""
    changes = {}
    for key, value in run_items.items():
        if key == "seeds":
            changes["seeds"] = parse_seeds(value)
        elif key in ("dim", "n"):
            changes[key] = _coerce(0, value, key)
        elif key in ("method", "problem", "sampling"):
            changes[key] = str(value).strip()
        elif key in ("genz_a", "genz_u"):
            changes[key] = _float_tuple(value, key)
        else:
            raise ConfigError(f"unknown key {key!r} in [run]")
    cfg = dataclasses.replace(cfg, **changes)
    for section, items in (blocks or {}).items():
        if section not in ("bsn", "bq", "cf", "mala"):
            raise ConfigError(f"unknown section [{section}]")
        cfg = dataclasses.replace(cfg, **{section: _update_block(getattr(cfg, section), items, section)})
    return cfg


def load_config(path) -> list:
    """Read an INI-style config; returns one RunConfig per (method, problem) pair.

    ``[run]`` holds ``method``, ``problem``, ``dim``, ``n``, ``seeds``,
    ``sampling`` and optional ``genz_a``/``genz_u``; ``method`` and
    ``problem`` may be comma-separated lists. ``[bsn]``, ``[bq]``, ``[cf]``
    and ``[mala]`` hold method settings named as in the config dataclasses.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: missing [run] section")
    run_items = dict(parser.items("run"))
    methods = [m.strip() for m in run_items.pop("method", "bsn").split(",")]
    problems = [p.strip() for p in run_items.pop("problem", "genz-continuous").split(",")]
    blocks = {s: dict(parser.items(s)) for s in parser.sections() if s != "run"}
    base = apply_overrides(RunConfig(), run_items, blocks)
    out = []
    for problem in problems:
        for method in methods:
            out.append(dataclasses.replace(base, method=method, problem=problem).validate())
    return out
