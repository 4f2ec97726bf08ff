"""Seeded experiment runner, metrics and CSV emission.

Seed derivation: every random stream in a run comes from
``SeedSequence([seed, crc32(experiment), rep, crc32(stage)])`` where ``stage``
names the consumer (``"spec"``, ``"data-1000"``, ``"fit-fair-gb-1000"``, ...).
Rows are buffered per replication and written in replication order, so the
output does not depend on how replications are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import estimators as est
from .ident import verify_identification
from .objective import MultiEnvDataset
from .scm import ScmSpec, build_discrete_scm, build_linear_benchmark, build_nonlinear_benchmark, simulate
from .trainer import FairConfig

log = logging.getLogger(__name__)

HEADER = ["experiment", "estimator", "n", "rep", "seed", "metric", "value"]
EXPERIMENTS = ("linear-d70", "linear-d15", "nonlinear-k1", "nonlinear-k2", "ident-sweep", "custom")
LINEAR_ESTIMATORS = ("pool-ls", "oracle", "semi-oracle", "fair-bf", "fair-gb", "fair-rf")
NN_ESTIMATORS = ("pool-ls-nn", "oracle-nn", "semi-oracle-nn", "fair-gb-nn", "fair-rf-nn")
DEFAULT_ESTIMATORS = {
    "linear-d70": ["pool-ls", "oracle", "semi-oracle", "fair-gb", "fair-rf"],
    "linear-d15": ["pool-ls", "oracle", "semi-oracle", "fair-bf", "fair-gb", "fair-rf"],
    "nonlinear-k1": ["pool-ls-nn", "oracle-nn", "fair-gb-nn", "fair-rf-nn"],
    "nonlinear-k2": ["pool-ls-nn", "oracle-nn", "fair-gb-nn", "fair-rf-nn"],
    "ident-sweep": ["brute-force"],
    "custom": ["pool-ls", "oracle", "fair-gb", "fair-rf"],
}
NN_ITERS = {"nonlinear-k1": 70_000, "nonlinear-k2": 80_000}


# ---------------------------------------------------------------------------
# Metrics


def l2_param_error(beta_hat, beta_star) -> float:
    """Squared Euclidean distance."""
    a = np.asarray(beta_hat, dtype=np.float64)
    b = np.asarray(beta_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def mse_estimate(model, m_star, test_X) -> float:
    """``1/(2 n_test) sum_e sum_i (m_star(x) - model(x))^2`` for equal-size test sets.

    ``test_X`` is a list of per-environment covariate matrices; the average is
    over all rows so unequal sizes weight by row count.
    """
    total, count = 0.0, 0
    for X in test_X:
        r = np.asarray(m_star(X)) - np.asarray(model(X))
        total += float(r @ r)
        count += r.shape[0]
    return total / count


def oos_r2(pred, y_test, train_mean: float) -> float:
    """``sum (pred - y)^2 / sum (y - train_mean)^2``; NaN when the denominator is 0."""
    y = np.asarray(y_test, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty test set")
    den = float(np.sum((y - train_mean) ** 2))
    if den == 0.0:
        return float("nan")
    return float(np.sum((np.asarray(pred) - y) ** 2)) / den


def one_minus_oos_ratio(pred, y_test, train_mean: float) -> float:
    return 1.0 - oos_r2(pred, y_test, train_mean)


def gate_separation(probs, causes, spurious) -> float:
    """Smallest gate probability on ``causes`` minus the largest on ``spurious``.

    Positive values mean some threshold separates the two groups. An empty
    group counts as probability 1 (causes) or 0 (spurious).
    """
    probs = np.asarray(probs, dtype=np.float64)
    lo = float(np.min(probs[list(causes)])) if len(causes) else 1.0
    hi = float(np.max(probs[list(spurious)])) if len(spurious) else 0.0
    return lo - hi


# ---------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    experiment: str = "linear-d15"
    sample_sizes: list[int] = field(default_factory=lambda: [1000])
    replications: int = 50
    estimators: list[str] | None = None
    fair: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None
    n_test: int = 10_000
    nn_iters: int = 10_000
    max_nodes: int = 8
    spec_path: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not self.sample_sizes or any(int(n) < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        self.sample_sizes = [int(n) for n in self.sample_sizes]
        if self.estimators is None:
            self.estimators = list(DEFAULT_ESTIMATORS[self.experiment])
        known = set(LINEAR_ESTIMATORS) | set(NN_ESTIMATORS) | {"brute-force"}
        bad = [e for e in self.estimators if e not in known]
        if bad:
            raise ValueError(f"unknown estimators {bad}")
        if self.experiment == "custom" and not self.spec_path:
            raise ValueError("custom experiments need spec_path")
        FairConfig(**self.fair)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        extra = set(doc) - names
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def derive_seed(seed: int, experiment: str, rep: int, stage: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(experiment.encode()), int(rep),
                                   zlib.crc32(stage.encode())])


def _rng(cfg, rep, stage):
    return np.random.default_rng(derive_seed(cfg.seed, cfg.experiment, rep, stage))


def _int_seed(cfg, rep, stage) -> int:
    return int(derive_seed(cfg.seed, cfg.experiment, rep, stage).generate_state(1, np.uint32)[0])


def build_spec(cfg: ExperimentConfig, rep: int) -> ScmSpec:
    rng = _rng(cfg, rep, "spec")
    if cfg.experiment == "linear-d70":
        return build_linear_benchmark(70, rng)
    if cfg.experiment == "linear-d15":
        return build_linear_benchmark(15, rng)
    if cfg.experiment == "nonlinear-k1":
        return build_nonlinear_benchmark(1, rng)
    if cfg.experiment == "nonlinear-k2":
        return build_nonlinear_benchmark(2, rng)
    if cfg.experiment == "custom":
        with open(cfg.spec_path) as fh:
            return ScmSpec.from_json(fh.read())
    raise ValueError(f"experiment {cfg.experiment!r} has no SCM spec")


def _draw(spec, n, rng) -> MultiEnvDataset:
    return MultiEnvDataset([simulate(spec, e, n, rng) for e in range(spec.env_count)])


# ---------------------------------------------------------------------------
# One replication


def _fair_config(cfg, rep, stage, **defaults) -> FairConfig:
    kw = dict(defaults)
    kw.update(cfg.fair)
    kw["seed"] = _int_seed(cfg, rep, stage)
    return FairConfig(**kw)


def _linear_rows(cfg, spec, rep, n):
    data = _draw(spec, n, _rng(cfg, rep, f"data-{n}"))
    beta_star = spec.beta_star()
    d = data.dim
    out = []
    gb = None

    def trained():
        nonlocal gb
        if gb is None:
            gb = est.fit_fair_gb(data, _fair_config(cfg, rep, f"fit-fair-gb-{n}"), "linear")
        return gb

    for name in cfg.estimators:
        try:
            extra = {}
            if name == "pool-ls":
                fit = est.fit_pooled_ls(data, range(d))
            elif name == "oracle":
                fit = est.fit_pooled_ls(data, spec.s_star())
            elif name == "semi-oracle":
                fit = est.fit_pooled_ls(data, est.semi_oracle_support(d, spec.descendants_of_y()))
            elif name == "fair-bf":
                res = est.fit_fair_bf(data, _fair_config(cfg, rep, "bf").gamma)
                fit = res.fit
                extra["support_size"] = len(res.support)
                extra["skipped_supports"] = len(res.skipped)
            elif name == "fair-gb":
                fit = est.gb_linear_fit(trained())
                extra["gate_separation"] = gate_separation(trained().gate_probs(), spec.s_star(),
                                                           spec.descendants_of_y())
            elif name == "fair-rf":
                sel = est.select_variables(trained().gate, est.default_threshold(n, "linear"))
                fit = est.refit_ls(data, sel.selected)
                extra["support_size"] = len(sel.selected)
            else:
                raise ValueError(f"estimator {name!r} does not apply to linear experiments")
            out.append((name, "l2_param_error", l2_param_error(fit.coefficients, beta_star)))
            out.extend((name, k, float(v)) for k, v in extra.items())
        except Exception as err:  # recorded, the sweep continues
            log.warning("%s failed at rep %d, n=%d: %s", name, rep, n, err)
            out.append((name, f"error:{type(err).__name__}", float("nan")))
    return out


def _nn_rows(cfg, spec, rep, n):
    data = _draw(spec, n, _rng(cfg, rep, f"data-{n}"))
    val = _draw(spec, max(1, 3 * n // 7), _rng(cfg, rep, f"valid-{n}"))
    test_rng = _rng(cfg, rep, f"test-{n}")
    test_X = [simulate(spec, e, cfg.n_test, test_rng)[0] for e in range(spec.env_count)]
    d = data.dim
    out = []
    gb = None

    def trained():
        nonlocal gb
        if gb is None:
            iters = NN_ITERS.get(cfg.experiment, 80_000)
            gb = est.fit_fair_gb(data, _fair_config(cfg, rep, f"fit-fair-gb-nn-{n}", total_iters=iters), "mlp")
        return gb

    def nn(support, stage):
        return est.fit_pooled_nn(data, support, seed=_int_seed(cfg, rep, stage), iters=cfg.nn_iters,
                                 validation=val)

    for name in cfg.estimators:
        try:
            extra = {}
            if name == "pool-ls-nn":
                model = nn(range(d), f"fit-pool-{n}")
            elif name == "oracle-nn":
                model = nn(spec.s_star(), f"fit-oracle-{n}")
            elif name == "semi-oracle-nn":
                model = nn(est.semi_oracle_support(d, spec.descendants_of_y()), f"fit-semi-{n}")
            elif name == "fair-gb-nn":
                m = trained()
                eval_rng = _rng(cfg, rep, f"eval-gumbel-{n}")
                model = lambda X, m=m: m.predict(X, rng=eval_rng)
            elif name == "fair-rf-nn":
                sel = est.select_variables(trained().gate, est.default_threshold(n, "mlp"))
                model = nn(sel.selected, f"fit-rf-{n}")
                extra["support_size"] = len(sel.selected)
            else:
                raise ValueError(f"estimator {name!r} does not apply to nonlinear experiments")
            out.append((name, "mse_estimate", mse_estimate(model, spec.m_star, test_X)))
            out.extend((name, k, float(v)) for k, v in extra.items())
        except Exception as err:  # recorded, the sweep continues
            log.warning("%s failed at rep %d, n=%d: %s", name, rep, n, err)
            out.append((name, f"error:{type(err).__name__}", float("nan")))
    return out


def _ident_rows(cfg, rep):
    rng = _rng(cfg, rep, "graph")
    scm = build_discrete_scm(int(rng.integers(3, cfg.max_nodes + 1)), 3, 2, rng)
    rec = verify_identification(scm, rep)
    return [("brute-force", "agree", float(rec.agree)),
            ("brute-force", "witness_count", float(len(rec.witnesses)))], rec.node_count


def run_replication(cfg: ExperimentConfig, rep: int) -> list[list]:
    """All metric rows for one replication, as ``[experiment, estimator, n, rep, seed, metric, value]``."""
    rows = []
    if cfg.experiment == "ident-sweep":
        vals, nodes = _ident_rows(cfg, rep)
        return [[cfg.experiment, e, nodes, rep, cfg.seed, m, v] for e, m, v in vals]
    spec = build_spec(cfg, rep)
    linear = cfg.experiment in ("linear-d70", "linear-d15") or (
        cfg.experiment == "custom" and not set(cfg.estimators) & set(NN_ESTIMATORS))
    for n in cfg.sample_sizes:
        vals = _linear_rows(cfg, spec, rep, n) if linear else _nn_rows(cfg, spec, rep, n)
        rows.extend([cfg.experiment, e, n, rep, cfg.seed, m, v] for e, m, v in vals)
    return rows


def worker_count(tasks: int) -> int:
    env = os.environ.get("FAIR_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, tasks))


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


def format_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def medians(rows) -> list[list]:
    """Per ``(estimator, n, metric)`` median over replications of finite values."""
    groups = {}
    for exp, name, n, _, _, metric, value in rows:
        groups.setdefault((exp, name, n, metric), []).append(value)
    out = []
    for (exp, name, n, metric), vals in groups.items():
        finite = [v for v in vals if np.isfinite(v)]
        med = float(np.median(finite)) if finite else float("nan")
        out.append([exp, name, n, metric, med, len(finite)])
    return out


def format_medians(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "estimator", "n", "metric", "median", "count"])
    for r in medians(rows):
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def medians_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_medians{ext or '.csv'}"


def run_experiment(cfg: ExperimentConfig, out_path: str | None = None) -> list[list]:
    """Run every replication and write the metrics CSV plus a medians CSV."""
    reps = range(cfg.replications)
    workers = worker_count(cfg.replications)
    if workers == 1:
        per_rep = [run_replication(cfg, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(run_replication, [cfg] * cfg.replications, reps))
    rows = [r for block in per_rep for r in block]
    out_path = out_path or cfg.output
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(format_rows(rows))
        with open(medians_path(out_path), "w") as fh:
            fh.write(format_medians(rows))
    return rows
