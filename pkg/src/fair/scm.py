"""Random-DAG structural causal models, benchmark generators and discrete SCMs.

Node indices are 0-based and the natural order ``0..p-1`` is topological for
every generated graph. The response is node ``dag.y_index``; the covariate
vector ``X`` lists the remaining nodes in increasing order, so node ``k`` maps
to column ``k`` if ``k < y_index`` and ``k - 1`` otherwise.

An :class:`ScmSpec` stores one assignment per (environment, node)::

    {"terms": [{"parent": k, "fn": "sin", "coef": 0.7}, ...],
     "named": null | {"fn": "m2", "parents": [k1, ...]},
     "noise": "normal" | "uniform",
     "noise_scale": 1.2}

The node value is ``sum coef * fn(Z_parent) + named(Z_parents) + noise_scale * eps``
with ``eps`` standard normal or uniform on ``[-1.5, 1.5]``. The response's
mean part (terms, named function, noise law) is shared by all environments;
only its noise scale may vary. Specs round-trip
through JSON via :meth:`ScmSpec.to_json` and :meth:`ScmSpec.from_json`.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .objective import DiscreteDistribution

UNIFORM_HALF_WIDTH = 1.5

FUNCTIONS = {
    "identity": lambda x: x,
    "sin": np.sin,
    "cos": np.cos,
    "sinpi": lambda x: np.sin(np.pi * x),
    "sigmoid": expit,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}

LINEAR_BENCH_FUNCTIONS = ("cos", "sin", "sinpi", "identity", "sigmoid")
NONLINEAR_CHILD_FUNCTIONS = ("tanh", "sin", "cos")
M1_FUNCTIONS = ("tanh", "sin", "relu", "identity")


def m_star_2(x1, x2, x3, x4, x5):
    """``x1 x2^3 + log(1 + e^tanh(x3) + e^x4) + sin(x5)``."""
    return x1 * x2 ** 3 + np.logaddexp(np.log1p(np.exp(np.tanh(x3))), x4) + np.sin(x5)


NAMED_FUNCTIONS = {"m2": m_star_2}


# ---------------------------------------------------------------------------
# Graphs


@dataclass
class Dag:
    node_count: int
    parent_sets: list[list[int]]
    y_index: int
    topological_order: list[int] = field(default_factory=list)

    def __post_init__(self):
        p = self.node_count
        self.parent_sets = [sorted(int(k) for k in ps) for ps in self.parent_sets]
        if len(self.parent_sets) != p:
            raise ValueError("need one parent set per node")
        if not self.topological_order:
            self.topological_order = list(range(p))
        self.topological_order = [int(k) for k in self.topological_order]
        if sorted(self.topological_order) != list(range(p)):
            raise ValueError("topological order must be a permutation of the nodes")
        if not 0 <= self.y_index < p:
            raise ValueError("y_index out of range")
        rank = {node: i for i, node in enumerate(self.topological_order)}
        for j, ps in enumerate(self.parent_sets):
            for k in ps:
                if not 0 <= k < p or k == j:
                    raise ValueError(f"invalid parent {k} of node {j}")
                if rank[k] >= rank[j]:
                    raise ValueError(f"edge {k}->{j} violates the topological order")

    @property
    def d(self) -> int:
        return self.node_count - 1

    @property
    def x_nodes(self) -> list[int]:
        return [k for k in range(self.node_count) if k != self.y_index]

    def x_index(self, node: int) -> int:
        if node == self.y_index:
            raise ValueError("the response has no covariate index")
        return node if node < self.y_index else node - 1

    def node_of(self, x_index: int) -> int:
        return x_index if x_index < self.y_index else x_index + 1

    def children(self, node: int) -> list[int]:
        return [j for j, ps in enumerate(self.parent_sets) if node in ps]

    def edges(self) -> list[tuple[int, int]]:
        return [(k, j) for j, ps in enumerate(self.parent_sets) for k in ps]

    def to_dict(self) -> dict:
        return {"node_count": self.node_count, "parent_sets": self.parent_sets,
                "y_index": self.y_index, "topological_order": self.topological_order}

    @classmethod
    def from_dict(cls, doc: dict) -> "Dag":
        return cls(doc["node_count"], doc["parent_sets"], doc["y_index"], doc.get("topological_order", []))


def sample_random_dag(d: int, y_index: int, max_parents: int, min_y_parents: int,
                      min_y_children: int, rng: np.random.Generator) -> Dag:
    """Random DAG on ``d + 1`` nodes in natural order with node ``y_index`` as ``Y``.

    Node ``i`` draws ``k ~ U{0..min(max_parents, i)}`` parents uniformly from
    its predecessors; afterwards uniformly chosen edges into and out of ``Y``
    are added until the minima hold.
    """
    p = d + 1
    if not 0 <= y_index < p:
        raise ValueError("y_index out of range")
    if min_y_parents > y_index or min_y_children > p - 1 - y_index:
        raise ValueError("not enough nodes before/after Y for the required parents/children")
    if max_parents < 0:
        raise ValueError("max_parents must be nonnegative")
    parents = []
    for i in range(p):
        k = int(rng.integers(0, min(max_parents, i) + 1))
        parents.append(set(int(j) for j in rng.choice(i, size=k, replace=False)) if k else set())
    missing = [k for k in range(y_index) if k not in parents[y_index]]
    need = min_y_parents - len(parents[y_index])
    if need > 0:
        parents[y_index].update(int(k) for k in rng.choice(missing, size=need, replace=False))
    later = [j for j in range(y_index + 1, p) if y_index not in parents[j]]
    need = min_y_children - (p - 1 - y_index - len(later))
    if need > 0:
        for j in rng.choice(later, size=need, replace=False):
            parents[int(j)].add(y_index)
    return Dag(p, [sorted(ps) for ps in parents], y_index)


# ---------------------------------------------------------------------------
# Continuous SCMs


def _check_assignment(a: dict, node: int, dag: Dag):
    for t in a.get("terms", []):
        if t["parent"] not in dag.parent_sets[node] or t["fn"] not in FUNCTIONS:
            raise ValueError(f"bad term {t} for node {node}")
    named = a.get("named")
    if named is not None:
        if named["fn"] not in NAMED_FUNCTIONS or not set(named["parents"]) <= set(dag.parent_sets[node]):
            raise ValueError(f"bad named function {named} for node {node}")
    if a.get("noise", "normal") not in ("normal", "uniform"):
        raise ValueError(f"unknown noise law {a.get('noise')!r}")


@dataclass
class ScmSpec:
    """Per-environment assignments; ``assignments[e][node]`` follows the module docstring."""

    dag: Dag
    assignments: list[list[dict]]
    name: str = "custom"

    def __post_init__(self):
        if not self.assignments:
            raise ValueError("need at least one environment")
        for env in self.assignments:
            if len(env) != self.dag.node_count:
                raise ValueError("need one assignment per node in every environment")
            for node, a in enumerate(env):
                _check_assignment(a, node, self.dag)
        y = self.dag.y_index
        ref = _mean_part(self.assignments[0][y])
        if any(_mean_part(env[y]) != ref for env in self.assignments[1:]):
            raise ValueError("the response mean assignment must be shared by all environments")

    @property
    def env_count(self) -> int:
        return len(self.assignments)

    @property
    def y_assignment(self) -> dict:
        return self.assignments[0][self.dag.y_index]

    def s_star(self) -> list[int]:
        """Covariate indices of ``pa(Y)``."""
        return [self.dag.x_index(k) for k in self.dag.parent_sets[self.dag.y_index]]

    def beta_star(self) -> np.ndarray:
        """Coefficients of a linear response on ``pa(Y)`` in covariate index space."""
        a = self.y_assignment
        if a.get("named") is not None or any(t["fn"] != "identity" for t in a["terms"]):
            raise ValueError("the response assignment is not linear")
        beta = np.zeros(self.dag.d)
        for t in a["terms"]:
            beta[self.dag.x_index(t["parent"])] += t["coef"]
        return beta

    def m_star(self, X: np.ndarray) -> np.ndarray:
        """The invariant regression function evaluated on covariate rows."""
        X = np.atleast_2d(X)
        Z = np.zeros((X.shape[0], self.dag.node_count))
        Z[:, self.dag.x_nodes] = X
        return _node_mean(self.y_assignment, Z)

    def descendants_of_y(self) -> list[int]:
        """Covariate indices of the descendants of ``Y``."""
        desc, frontier = set(), [self.dag.y_index]
        while frontier:
            for c in self.dag.children(frontier.pop()):
                if c not in desc:
                    desc.add(c)
                    frontier.append(c)
        return sorted(self.dag.x_index(k) for k in desc)

    def to_dict(self) -> dict:
        return {"name": self.name, "dag": self.dag.to_dict(), "assignments": self.assignments}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScmSpec":
        return cls(Dag.from_dict(doc["dag"]), doc["assignments"], doc.get("name", "custom"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScmSpec":
        return cls.from_dict(json.loads(text))


def _mean_part(a: dict):
    return a.get("terms", []), a.get("named"), a.get("noise", "normal")


def _node_mean(a: dict, Z: np.ndarray) -> np.ndarray:
    out = np.zeros(Z.shape[0])
    for t in a.get("terms", []):
        out += t["coef"] * FUNCTIONS[t["fn"]](Z[:, t["parent"]])
    named = a.get("named")
    if named is not None:
        out += NAMED_FUNCTIONS[named["fn"]](*(Z[:, k] for k in named["parents"]))
    return out


def simulate(spec: ScmSpec, env: int, n: int, rng: np.random.Generator):
    """``n`` i.i.d. draws ``(X, y)`` from environment ``env``.

    Noise for node ``j`` is drawn in topological order, one vector of ``n``
    values per node.
    """
    if not 0 <= env < spec.env_count:
        raise ValueError(f"environment {env} out of range")
    if n < 0:
        raise ValueError("n must be nonnegative")
    dag = spec.dag
    Z = np.zeros((n, dag.node_count))
    for j in dag.topological_order:
        a = spec.assignments[env][j]
        if a.get("noise", "normal") == "uniform":
            eps = rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, n)
        else:
            eps = rng.standard_normal(n)
        Z[:, j] = _node_mean(a, Z) + a.get("noise_scale", 1.0) * eps
    return Z[:, dag.x_nodes], Z[:, dag.y_index].copy()


def _signed_scale(rng, low=0.5, high=1.5):
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(low, high))


def build_linear_benchmark(d: int, rng: np.random.Generator, env_count: int = 2) -> ScmSpec:
    """Two-environment linear-response benchmark with ``d`` in ``{15, 70}``.

    Non-response nodes use ``sum C f(Z_k) + C_jj eps`` with ``f`` drawn from
    cos, sin, sin(pi x), x, sigmoid and ``C ~ U[-1.5, 1.5]``, ``|C_jj| >= 0.5``,
    all redrawn per environment. The response is linear with shared
    coefficients; its noise scale differs across environments for ``d = 70``
    and is shared for ``d = 15``.
    """
    if d == 70:
        y_index, minima, shared_y_noise = 35, 5, False
    elif d == 15:
        y_index, minima, shared_y_noise = 7, 3, True
    else:
        raise ValueError("linear benchmark supports d in {15, 70}")
    dag = sample_random_dag(d, y_index, 4, minima, minima, rng)
    y_terms = [{"parent": k, "fn": "identity", "coef": float(rng.uniform(-1.5, 1.5))}
               for k in dag.parent_sets[y_index]]
    y_scales = [_signed_scale(rng)]
    for _ in range(1, env_count):
        y_scales.append(y_scales[0] if shared_y_noise else _signed_scale(rng))
    assignments = []
    for e in range(env_count):
        env = []
        for j in range(dag.node_count):
            if j == y_index:
                env.append({"terms": y_terms, "noise": "normal", "noise_scale": abs(y_scales[e])})
                continue
            terms = [{"parent": k, "fn": str(rng.choice(LINEAR_BENCH_FUNCTIONS)),
                      "coef": float(rng.uniform(-1.5, 1.5))} for k in dag.parent_sets[j]]
            env.append({"terms": terms, "noise": "normal", "noise_scale": _signed_scale(rng)})
        assignments.append(env)
    return ScmSpec(dag, assignments, name=f"linear-d{d}")


def build_nonlinear_benchmark(k: int, rng: np.random.Generator, env_count: int = 2,
                              max_downstream_parents: int = 4) -> ScmSpec:
    """The ``d = 26`` nonlinear benchmark with response ``m1`` (``k = 1``) or ``m2`` (``k = 2``).

    Nodes 0..4 are ``X1..X5`` (parents of ``Y``), node 5 is ``Y``, nodes 6..9
    are ``X6..X9`` (children of ``Y``) and nodes 10..26 are ``X10..X26`` with
    1 to ``max_downstream_parents`` parents among ``X1..X8``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    y, p = 5, 27
    pool = [0, 1, 2, 3, 4, 6, 7, 8]
    parents = [[] for _ in range(5)] + [[0, 1, 2, 3, 4]] + [[y] for _ in range(6, 10)]
    for _ in range(10, p):
        size = int(rng.integers(1, max_downstream_parents + 1))
        parents.append(sorted(int(j) for j in rng.choice(pool, size=size, replace=False)))
    dag = Dag(p, parents, y)
    if k == 2:
        y_assign = {"terms": [], "named": {"fn": "m2", "parents": [0, 1, 2, 3, 4]},
                    "noise": "normal", "noise_scale": 1.0}
    else:
        y_assign = {"terms": [{"parent": j, "fn": str(rng.choice(M1_FUNCTIONS)), "coef": 1.0}
                              for j in range(5)], "noise": "normal", "noise_scale": 1.0}
    assignments = []
    for e in range(env_count):
        env = [{"terms": [], "noise": "uniform", "noise_scale": 1.0} for _ in range(5)]
        env.append(y_assign)
        child_range = 1.5 if e == 0 else 5.0
        for _ in range(6, 10):
            env.append({"terms": [{"parent": y, "fn": "tanh",
                                   "coef": float(rng.uniform(-child_range, child_range))}],
                        "noise": "uniform", "noise_scale": float(rng.uniform(1.0, 1.5))})
        for j in range(10, p):
            env.append({"terms": [{"parent": q, "fn": str(rng.choice(NONLINEAR_CHILD_FUNCTIONS)),
                                   "coef": float(rng.uniform(-1.5, 1.5))} for q in parents[j]],
                        "noise": "uniform", "noise_scale": float(rng.uniform(2.0, 3.0))})
        assignments.append(env)
    return ScmSpec(dag, assignments, name=f"nonlinear-k{k}")


# ---------------------------------------------------------------------------
# Discrete SCMs with exact joints


@dataclass
class DiscreteScm:
    """Finite-support SCM: ``cpts[e][j]`` has shape ``(*parent supports, support_j)``.

    Node values are ``0..support_j - 1``. ``intervened`` lists the covariate
    nodes whose tables differ between environment 0 and the others.
    """

    dag: Dag
    supports: list[int]
    cpts: list[list[np.ndarray]]
    intervened: list[int]

    @property
    def env_count(self) -> int:
        return len(self.cpts)

    def intervened_x(self) -> list[int]:
        return sorted(self.dag.x_index(j) for j in self.intervened)

    def configurations(self) -> np.ndarray:
        grids = np.indices(self.supports).reshape(len(self.supports), -1).T
        return grids

    def joint(self, env: int) -> DiscreteDistribution:
        Z = self.configurations()
        p = np.ones(Z.shape[0])
        for j, table in enumerate(self.cpts[env]):
            idx = tuple(Z[:, k] for k in self.dag.parent_sets[j]) + (Z[:, j],)
            p *= table[idx]
        return DiscreteDistribution(Z[:, self.dag.x_nodes].astype(np.float64),
                                    Z[:, self.dag.y_index].astype(np.float64), p)

    def joints(self) -> list[DiscreteDistribution]:
        return [self.joint(e) for e in range(self.env_count)]


def _random_cpt(rng, parent_supports, support):
    top = 32 if support >= 3 else 48
    counts = rng.integers(1, top + 1, size=tuple(parent_supports) + (support,))
    return counts / counts.sum(axis=-1, keepdims=True)


def _rows(table):
    return table.reshape(-1, table.shape[-1])


def _has_duplicate_rows(table, tol=1e-12):
    rows = _rows(table)
    for a, b in itertools.combinations(range(rows.shape[0]), 2):
        if np.max(np.abs(rows[a] - rows[b])) <= tol:
            return True
    return False


def _any_row_equal(t1, t2, tol=1e-12):
    return bool(np.any(np.max(np.abs(_rows(t1) - _rows(t2)), axis=1) <= tol))


def build_discrete_scm(node_count: int, support_size: int, env_count: int, rng: np.random.Generator,
                       max_parents: int = 3, intervened: list[int] | None = None,
                       max_tries: int = 1000) -> DiscreteScm:
    """Random discrete SCM with rational probabilities and an intervention set.

    Each node takes ``2..support_size`` values; probabilities are integer
    counts (``1..32`` for three values, ``1..48`` for two) normalised per row.
    ``Y`` sits at a uniformly random position. Unless ``intervened`` is given,
    each covariate node enters ``I`` with probability 1/2; every environment
    ``e >= 1`` redraws the tables at ``I``. Tables with two identical rows,
    and intervened tables sharing a row with environment 0, are redrawn.
    """
    if not 2 <= node_count <= 12:
        raise ValueError("node_count must lie in 2..12")
    if not 2 <= support_size <= 3:
        raise ValueError("support_size must be 2 or 3")
    if env_count < 1:
        raise ValueError("env_count must be positive")
    y_index = int(rng.integers(0, node_count))
    dag = sample_random_dag(node_count - 1, y_index, max_parents, 0, 0, rng)
    supports = [int(rng.integers(2, support_size + 1)) for _ in range(node_count)]
    if np.prod(supports, dtype=np.float64) > 1e6:
        raise ValueError("joint support exceeds 10^6 cells")
    if intervened is None:
        intervened = [j for j in dag.x_nodes if rng.random() < 0.5]
    intervened = sorted(int(j) for j in intervened)
    if dag.y_index in intervened:
        raise ValueError("the response cannot be intervened on")

    def draw(j, avoid=None):
        ps = [supports[k] for k in dag.parent_sets[j]]
        for _ in range(max_tries):
            t = _random_cpt(rng, ps, supports[j])
            if _has_duplicate_rows(t):
                continue
            if avoid is not None and _any_row_equal(t, avoid):
                continue
            return t
        raise RuntimeError(f"could not draw a non-degenerate table for node {j}")

    base = [draw(j) for j in range(node_count)]
    cpts = [base]
    for _ in range(1, env_count):
        cpts.append([draw(j, base[j]) if j in intervened else base[j] for j in range(node_count)])
    return DiscreteScm(dag, supports, cpts, intervened)


def example1_discretized(s1: float, s2: float, x1_step: float = 0.25, x1_max: float = 9.0,
                         y_step: float = 0.1, y_max: float = 12.0, x2_step: float = 0.25,
                         x2_max: float = 16.0) -> list[DiscreteDistribution]:
    """Grid version of ``X1 = sqrt(.5) U1, Y = X1 + sqrt(.5) U3, X2 = s Y + U2``.

    Atoms are grid points weighted by the Gaussian density of the continuous
    model, one environment per slope ``s1``, ``s2``. Grid spacings are fine
    enough that conditional means match the continuous ones far below 1e-9
    wherever the cell mass is not negligible; the ranges keep the truncated
    tails negligible for slopes up to 3 in magnitude. Columns of ``X`` are
    ``(x1, x2)``.
    """
    x1 = np.arange(-x1_max, x1_max + x1_step / 2, x1_step)
    y = np.arange(-y_max, y_max + y_step / 2, y_step)
    x2 = np.arange(-x2_max, x2_max + x2_step / 2, x2_step)
    A, B, C = np.meshgrid(x1, y, x2, indexing="ij")
    A, B, C = A.ravel(), B.ravel(), C.ravel()
    base = -A ** 2 - (B - A) ** 2
    out = []
    for s in (s1, s2):
        logw = base - 0.5 * (C - s * B) ** 2
        w = np.exp(logw - logw.max())
        out.append(DiscreteDistribution(np.column_stack([A, C]), B, w / w.sum()))
    return out
