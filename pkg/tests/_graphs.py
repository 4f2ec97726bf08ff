"""Shared hand-built graphs. Covariate ``Xj`` (1-based) is node ``j - 1``; ``Y`` is node 11."""

from fair.scm import Dag

Y = 11
_Y = "Y"
HAND_EDGES = [(1, _Y), (2, _Y), (3, _Y), (4, 2), (4, 3), (5, 6), (_Y, 6), (_Y, 7), (_Y, 8), (3, 7), (7, 9),
             (7, 11), (8, 11), (9, 8)]
HAND_ORDER = [4, 1, 2, 3, 5, 10, _Y, 6, 7, 9, 8, 11]


def _node(label):
    return Y if label == _Y else label - 1


def hand_dag() -> Dag:
    parents = [[] for _ in range(12)]
    for a, b in HAND_EDGES:
        parents[_node(b)].append(_node(a))
    return Dag(12, parents, Y, [_node(k) for k in HAND_ORDER])


def nodes(labels):
    return {_node(k) for k in labels}


def labels(node_set):
    return {k + 1 for k in node_set}
