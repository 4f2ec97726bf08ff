"""Graphical identification and exact population oracles on discrete SCMs.

Graph functions take a :class:`~fair.scm.Dag` and work with node indices.
The oracles take a list of per-environment :class:`DiscreteDistribution`
objects sharing covariate columns and work with covariate indices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .objective import DiscreteDistribution, all_subsets, cell_index
from .scm import Dag, DiscreteScm

log = logging.getLogger(__name__)

INVARIANCE_TOL = 1e-9
NONE = "none"


# ---------------------------------------------------------------------------
# Graph functions


def ancestors(dag: Dag, j: int) -> set[int]:
    """Strict ancestors of node ``j``."""
    out, frontier = set(), list(dag.parent_sets[j])
    while frontier:
        k = frontier.pop()
        if k not in out:
            out.add(k)
            frontier.extend(dag.parent_sets[k])
    return out


def descendants(dag: Dag, j: int) -> set[int]:
    """Strict descendants of node ``j``."""
    kids = [[] for _ in range(dag.node_count)]
    for k, c in dag.edges():
        kids[k].append(c)
    out, frontier = set(), list(kids[j])
    while frontier:
        k = frontier.pop()
        if k not in out:
            out.add(k)
            frontier.extend(kids[k])
    return out


def unaffected_children(dag: Dag, intervened) -> set[int]:
    """Children ``j`` of ``Y`` with ``({j} | at(j)) & ch(Y) & I`` empty."""
    I = set(intervened)
    ch = set(dag.children(dag.y_index))
    return {j for j in ch if not (({j} | ancestors(dag, j)) & ch & I)}


def pragmatic_direct_causes(dag: Dag, intervened) -> set[int]:
    """``pa(Y) | A(I) | pa(A(I)) - {Y}`` as node indices."""
    I = set(int(j) for j in intervened)
    y = dag.y_index
    if y in I:
        raise ValueError("the intervention set cannot contain the response")
    if any(not 0 <= j < dag.node_count for j in I):
        raise ValueError("intervention set references unknown nodes")
    A = unaffected_children(dag, I)
    out = set(dag.parent_sets[y]) | A
    for j in A:
        out |= set(dag.parent_sets[j]) - {y}
    return out


def minimal_intervention_set(dag: Dag) -> set[int]:
    """Children of ``Y`` none of whose ancestors is a child of ``Y``."""
    ch = set(dag.children(dag.y_index))
    return {j for j in ch if not (ancestors(dag, j) & ch)}


@dataclass
class AugmentedDag:
    """``base`` plus an environment node ``E = base.node_count`` with edges ``E -> j`` for ``j`` in ``intervened``."""

    base: Dag
    intervened: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.intervened = sorted(int(j) for j in self.intervened)
        if self.base.y_index in self.intervened:
            raise ValueError("the intervention set cannot contain the response")
        if any(not 0 <= j < self.base.node_count for j in self.intervened):
            raise ValueError("intervention set references unknown nodes")

    @property
    def env_node(self) -> int:
        return self.base.node_count

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.base.node_count + 1))
        g.add_edges_from(self.base.edges())
        g.add_edges_from((self.env_node, j) for j in self.intervened)
        return g


def d_separated(adag: AugmentedDag | Dag, A, B, C) -> bool:
    """Whether every path between ``A`` and ``B`` is blocked by ``C``."""
    A, B, C = set(A), set(B), set(C)
    if A & B or A & C or B & C:
        raise ValueError("node sets must be disjoint")
    if not A or not B:
        return True
    g = adag.graph() if isinstance(adag, AugmentedDag) else AugmentedDag(adag).graph()
    if not (A | B | C) <= set(g.nodes):
        raise ValueError("node sets reference unknown nodes")
    return bool(nx.is_d_separator(g, A, B, C))


# ---------------------------------------------------------------------------
# Exact population oracles


class _Enumerator:
    """Conditional means of ``Y`` given ``X_S`` per environment and pooled.

    The pooled law gives every environment weight ``1/|E|``.
    """

    def __init__(self, envs: list[DiscreteDistribution], mass_floor: float = 0.0):
        if not envs:
            raise ValueError("need at least one environment")
        d = envs[0].X.shape[1]
        if any(e.X.shape[1] != d for e in envs):
            raise ValueError("environments disagree on covariate dimension")
        self.d = d
        self.k = len(envs)
        self.X = np.vstack([e.X for e in envs])
        self.y = np.concatenate([e.y for e in envs])
        self.p = np.concatenate([e.p / e.p.sum() for e in envs]) / self.k
        self.env = np.concatenate([np.full(e.p.shape[0], i) for i, e in enumerate(envs)])
        self.mass_floor = mass_floor
        self._cache = {}

    def stats(self, S):
        S = tuple(sorted(S))
        if S not in self._cache:
            cell = cell_index(self.X, S)
            ncell = int(cell.max()) + 1
            mass = np.zeros((self.k, ncell))
            num = np.zeros((self.k, ncell))
            np.add.at(mass, (self.env, cell), self.p)
            np.add.at(num, (self.env, cell), self.p * self.y)
            with np.errstate(invalid="ignore", divide="ignore"):
                m_env = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0), np.nan)
                tot = mass.sum(axis=0)
                m_pool = np.where(tot > 0, num.sum(axis=0) / np.where(tot > 0, tot, 1.0), 0.0)
            self._cache[S] = (cell, mass, m_env, m_pool)
        return self._cache[S]

    def max_env_gap(self, S) -> float:
        """Largest ``|m^(e,S) - m^(e',S)|`` over cells where both masses exceed the floor."""
        _, mass, m_env, _ = self.stats(S)
        live = mass * self.k > self.mass_floor
        gap = 0.0
        for a in range(self.k):
            for b in range(a + 1, self.k):
                both = live[a] & live[b]
                if np.any(both):
                    gap = max(gap, float(np.max(np.abs(m_env[a, both] - m_env[b, both]))))
        return gap

    def pooled_at_atoms(self, S) -> np.ndarray:
        cell, _, _, m_pool = self.stats(S)
        return m_pool[cell]

    def bias_mean(self, S, s_star) -> float:
        """``|| m_bar^(S*) - m_bar^(S | S*) ||^2`` under the pooled law."""
        diff = self.pooled_at_atoms(s_star) - self.pooled_at_atoms(set(S) | set(s_star))
        return float(np.sum(self.p * diff * diff))

    def bias_variance(self, S) -> float:
        """``mean_e || m^(e,S) - m_bar^(S) ||^2_{2,e}``."""
        _, mass, m_env, m_pool = self.stats(S)
        dev = np.where(mass > 0, m_env - m_pool, 0.0)
        return float(np.sum(mass * dev * dev))

    def pooled_equal(self, S1, S2, tol: float) -> bool:
        diff = np.abs(self.pooled_at_atoms(S1) - self.pooled_at_atoms(S2))
        return bool(np.all(diff[self.p > 0] <= tol))


def _subsets(d):
    return [frozenset(S) for S in all_subsets(d)]


def invariant_sets(envs: list[DiscreteDistribution], tol: float = INVARIANCE_TOL,
                   mass_floor: float = 0.0) -> list[frozenset]:
    en = _Enumerator(envs, mass_floor)
    return [S for S in _subsets(en.d) if en.max_env_gap(S) <= tol]


def brute_force_max_invariant_set(envs: list[DiscreteDistribution], dag_unused=None,
                                  tol: float = INVARIANCE_TOL):
    """The maximum invariant covariate set by exhaustive enumeration, or ``"none"``.

    ``S`` is a candidate when it is invariant and ``m_bar^(S | S') = m_bar^(S)``
    for every invariant ``S'``. Candidates are closed under adding covariates
    that carry no further information about ``Y``, so the unique
    inclusion-minimal candidate is returned; ``"none"`` if there is no
    candidate or several minimal ones.
    """
    en = _Enumerator(envs)
    inv = [S for S in _subsets(en.d) if en.max_env_gap(S) <= tol]
    cands = [S for S in inv if all(en.pooled_equal(S | T, S, tol) for T in inv)]
    minimal = [S for S in cands if not any(T < S for T in cands)]
    if len(minimal) != 1:
        return NONE
    return set(minimal[0])


@dataclass
class IdentificationReport:
    holds: bool
    witnesses: list[dict]


def check_identification_condition(envs: list[DiscreteDistribution], s_star, tol: float = INVARIANCE_TOL,
                                   mass_floor: float = 0.0) -> IdentificationReport:
    """Every biased ``S`` (bias mean ``> tol``) must show heterogeneity across environments.

    Heterogeneity means some environment pair's conditional means given
    ``X_S`` differ by more than ``tol`` on a cell both environments charge
    with mass above ``mass_floor``. Returns the violating sets as witnesses.
    """
    en = _Enumerator(envs, mass_floor)
    s_star = set(s_star)
    witnesses = []
    for S in _subsets(en.d):
        b = en.bias_mean(S, s_star)
        if b <= tol:
            continue
        gap = en.max_env_gap(S)
        if gap <= tol:
            witnesses.append({"S": sorted(S), "bias_mean": b, "max_env_gap": gap})
    return IdentificationReport(not witnesses, witnesses)


# ---------------------------------------------------------------------------
# Faithfulness witnesses and sweeps


def faithfulness_witnesses(scm: DiscreteScm, envs: list[DiscreteDistribution] | None = None,
                           tol: float = INVARIANCE_TOL) -> list[dict]:
    """Places where the exact conditional means contradict the augmented graph.

    Two kinds: ``invariant-but-connected`` (``m^(e,S)`` invariant while ``E``
    and ``Y`` are d-connected given ``X_S``) and ``mean-irrelevant`` (dropping
    ``j`` from ``S`` leaves ``m_bar^(S)`` unchanged while ``X_j`` and ``Y`` are
    d-connected given ``X_(S - j)``).
    """
    envs = envs if envs is not None else scm.joints()
    en = _Enumerator(envs)
    dag = scm.dag
    adag = AugmentedDag(dag, scm.intervened)
    y, E = dag.y_index, adag.env_node
    out = []
    for S in _subsets(en.d):
        nodes = {dag.node_of(k) for k in S}
        if en.max_env_gap(S) <= tol and not d_separated(adag, {E}, {y}, nodes):
            out.append({"kind": "invariant-but-connected", "S": sorted(S)})
        for k in S:
            rest = S - {k}
            if en.pooled_equal(S, rest, tol) and not d_separated(adag, {dag.node_of(k)}, {y},
                                                                  {dag.node_of(q) for q in rest}):
                out.append({"kind": "mean-irrelevant", "S": sorted(S), "dropped": k})
    return out


@dataclass
class SweepRecord:
    index: int
    node_count: int
    intervened: list[int]
    expected: list[int]
    found: list[int] | str
    agree: bool
    witnesses: list[dict]


def verify_identification(scm: DiscreteScm, index: int = 0) -> SweepRecord:
    """Compare the brute-force maximum invariant set with the graphical answer."""
    dag = scm.dag
    expected = sorted(dag.x_index(j) for j in pragmatic_direct_causes(dag, scm.intervened))
    envs = scm.joints()
    found = brute_force_max_invariant_set(envs)
    found_out = found if found == NONE else sorted(found)
    agree = found_out == expected
    witnesses = [] if agree else faithfulness_witnesses(scm, envs)
    if not agree:
        log.info("graph %d: expected %s, found %s, %d witnesses", index, expected, found_out, len(witnesses))
    return SweepRecord(index, dag.node_count, scm.intervened_x(), expected, found_out, agree, witnesses)
