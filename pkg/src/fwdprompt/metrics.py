"""Continual-learning metrics over an accuracy matrix.

``acc[t][i]`` is the accuracy on task ``i`` after training through task ``t``.
Task indices in the public functions are 1-based, matching how the metrics
are usually written; missing entries are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingEntryError(ValueError):
    pass


@dataclass
class AccuracyMatrix:
    values: np.ndarray  # (T, T), NaN where not evaluated
    direct_reference: np.ndarray | None = None  # (T,) per-task DirectIT accuracy

    @classmethod
    def empty(cls, n_tasks):
        return cls(np.full((n_tasks, n_tasks), np.nan))

    @property
    def n_tasks(self):
        return self.values.shape[0]

    def set(self, t, i, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        if i > t:
            raise ValueError(f"a[{t}][{i}] lies above the diagonal")
        self.values[t - 1, i - 1] = value

    def get(self, t, i):
        v = self.values[t - 1, i - 1]
        if np.isnan(v):
            raise MissingEntryError(f"a[{t}][{i}] was never evaluated")
        return float(v)

    def to_list(self):
        return [[None if np.isnan(x) else float(x) for x in row] for row in self.values]

    @classmethod
    def from_list(cls, rows, direct_reference=None):
        vals = np.array([[np.nan if x is None else x for x in row] for row in rows], dtype=np.float64)
        ref = None
        if direct_reference is not None:
            ref = np.array([np.nan if x is None else x for x in direct_reference], dtype=np.float64)
        return cls(vals, ref)


def average_accuracy(acc, t):
    return float(np.mean([acc.get(t, i) for i in range(1, t + 1)]))


def forgetting(acc, t):
    """Mean drop from each earlier task's best prior accuracy to its accuracy after task ``t``.

    On a full lower-triangular matrix this averages over all ``t - 1`` earlier
    tasks. Columns never evaluated at row ``t`` are left out; a column that is
    evaluated at row ``t`` but has no earlier entry is an error.
    """
    if t < 2:
        raise ValueError("forgetting needs at least two learned tasks")
    drops = []
    for i in range(1, t):
        if np.isnan(acc.values[t - 1, i - 1]):
            continue
        prior = acc.values[i - 1:t - 1, i - 1]
        prior = prior[~np.isnan(prior)]
        if prior.size == 0:
            raise MissingEntryError(f"task {i} has no accuracy before step {t}")
        drops.append(float(prior.max()) - acc.get(t, i))
    if not drops:
        raise MissingEntryError(f"row {t} has no earlier tasks evaluated")
    return float(np.mean(drops))


def forward_transfer(acc, direct_ref, t):
    """``a[t][t]`` minus the accuracy of training on task ``t`` alone."""
    if direct_ref is None:
        raise MissingEntryError("no direct-training reference available")
    ref = direct_ref[t - 1]
    if ref is None or np.isnan(ref):
        raise MissingEntryError(f"no direct-training reference for task {t}")
    return acc.get(t, t) - float(ref)


@dataclass
class MetricsReport:
    average: dict = field(default_factory=dict)  # t -> A_t
    forgetting: dict = field(default_factory=dict)  # t -> FGT_t, t >= 2
    forward: dict = field(default_factory=dict)  # t -> FWD_t where a reference exists
    rank_table: dict = field(default_factory=dict)  # task -> scenario -> rank

    def to_dict(self):
        def keyed(d):
            return {str(k): v for k, v in sorted(d.items())}
        return {
            "average_accuracy": keyed(self.average),
            "forgetting": keyed(self.forgetting),
            "forward_transfer": keyed(self.forward),
            "rank_table": {str(k): v for k, v in self.rank_table.items()},
        }

    @classmethod
    def from_dict(cls, d):
        def unkeyed(x):
            return {int(k): v for k, v in x.items()}
        return cls(unkeyed(d["average_accuracy"]), unkeyed(d["forgetting"]),
                   unkeyed(d["forward_transfer"]), dict(d.get("rank_table", {})))


def compute_report(acc):
    """Every metric the matrix supports; rows that were never filled are skipped."""
    rep = MetricsReport()
    ref = acc.direct_reference
    for t in range(1, acc.n_tasks + 1):
        try:
            rep.average[t] = average_accuracy(acc, t)
        except MissingEntryError:
            pass
        if t >= 2:
            try:
                rep.forgetting[t] = forgetting(acc, t)
            except MissingEntryError:
                pass
        try:
            rep.forward[t] = forward_transfer(acc, ref, t)
        except MissingEntryError:
            pass
    return rep


def rank_experiment(embeddings_by_scenario, epsilon=0.99):
    """Estimated rank per (task, scenario).

    ``embeddings_by_scenario`` maps scenario name to ``{task: embedding matrix}``
    holding the input embeddings each scenario's trained model produces.
    """
    from .subspace import estimate_rank

    table = {}
    for scenario, per_task in embeddings_by_scenario.items():
        for task, emb in per_task.items():
            table.setdefault(task, {})[scenario] = estimate_rank(emb, epsilon)
    return table
