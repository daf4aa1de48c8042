"""Geofenced, ODD-balanced train/val/test splitting with cumulative train tiers.

Sessions that visit a common spatial cell end up in the same cluster
(connected components of the session-cell graph), and whole clusters are
assigned to splits, so no cell is shared across splits. Cell identifiers are
opaque strings; sessions arrive already indexed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DuplicateInput, InvalidParams

log = logging.getLogger(__name__)

ODD_CATEGORIES = ("road_type", "solar", "surface")
ODD_LABELS = {
    "road_type": ("motorway", "urban", "residential", "rural"),
    "solar": ("day", "night", "twilight"),
    "surface": ("dry", "wet", "snow_ice"),
}
REAL_WORLD_ODD = {
    "road_type": {"motorway": 0.36, "urban": 0.52, "residential": 0.08, "rural": 0.04},
    "solar": {"day": 0.84, "night": 0.09, "twilight": 0.07},
    "surface": {"dry": 0.70, "wet": 0.25, "snow_ice": 0.05},
}
SPLITS = ("train", "val", "test")
SPLIT_TARGETS = {"train": 0.96, "val": 0.02, "test": 0.02}
TIER_HOURS = tuple(2**k for k in range(4, 14))
ODD_TOLERANCE = 0.05


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    cells: frozenset
    hours: float
    odd: Mapping[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", frozenset(str(c) for c in self.cells))
        if not self.cells:
            raise DataError(f"session {self.session_id} has no cells")
        if not (math.isfinite(self.hours) and self.hours > 0):
            raise DataError(f"session {self.session_id} has non-positive duration {self.hours}")
        for category in ODD_CATEGORIES:
            label = self.odd.get(category)
            if label not in ODD_LABELS[category]:
                raise DataError(f"session {self.session_id}: bad {category} label {label!r}")


@dataclass(frozen=True)
class SessionCluster:
    cluster_id: str
    session_ids: tuple[str, ...]
    cells: frozenset
    hours: float
    odd_hours: Mapping[str, np.ndarray] = field(compare=False, repr=False)


class UnionFind:
    """Disjoint sets over arbitrary hashable keys (path halving, union by size)."""

    def __init__(self) -> None:
        self.parent: dict = {}
        self.size: dict = {}

    def add(self, key) -> None:
        if key not in self.parent:
            self.parent[key] = key
            self.size[key] = 1

    def find(self, key):
        parent = self.parent
        while parent[key] != key:
            parent[key] = parent[parent[key]]
            key = parent[key]
        return key

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def _odd_vector(odd: Mapping[str, str], category: str, hours: float) -> np.ndarray:
    vec = np.zeros(len(ODD_LABELS[category]))
    vec[ODD_LABELS[category].index(odd[category])] = hours
    return vec


def _target_vectors(odd_targets: Mapping[str, Mapping[str, float]]) -> dict[str, np.ndarray]:
    out = {}
    for category in ODD_CATEGORIES:
        given = odd_targets.get(category)
        if given is None:
            raise InvalidParams(f"odd_targets is missing category {category}")
        unknown = set(given) - set(ODD_LABELS[category])
        if unknown:
            raise InvalidParams(f"odd_targets has unknown {category} labels {sorted(unknown)}")
        vec = np.array([float(given.get(label, 0.0)) for label in ODD_LABELS[category]])
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-6:
            raise InvalidParams(f"odd_targets[{category}] must be non-negative and sum to 1")
        out[category] = vec
    return out


def cluster_sessions(sessions: Iterable[SessionRecord]) -> list[SessionCluster]:
    """Connected components of the bipartite session-cell graph.

    A cluster is named after its smallest session id; the result is sorted by
    cluster id.
    """
    sessions = list(sessions)
    by_id: dict[str, SessionRecord] = {}
    for s in sessions:
        if s.session_id in by_id:
            raise DuplicateInput(f"duplicate session_id {s.session_id!r}")
        by_id[s.session_id] = s
    uf = UnionFind()
    owner: dict[str, str] = {}
    for s in sessions:
        uf.add(s.session_id)
        for cell in s.cells:
            first = owner.setdefault(cell, s.session_id)
            if first != s.session_id:
                uf.union(first, s.session_id)
    members: dict[str, list[str]] = {}
    for sid in by_id:
        members.setdefault(uf.find(sid), []).append(sid)
    clusters = []
    for ids in members.values():
        ids = sorted(ids)
        recs = [by_id[i] for i in ids]
        clusters.append(
            SessionCluster(
                cluster_id=ids[0],
                session_ids=tuple(ids),
                cells=frozenset().union(*(r.cells for r in recs)),
                hours=float(sum(r.hours for r in recs)),
                odd_hours={
                    c: np.sum([_odd_vector(r.odd, c, r.hours) for r in recs], axis=0) for c in ODD_CATEGORIES
                },
            )
        )
    clusters.sort(key=lambda c: c.cluster_id)
    return clusters


# -- split assignment -------------------------------------------------------


def _odd_l1(odd_hours: np.ndarray, hours: np.ndarray, target: np.ndarray) -> np.ndarray:
    """L1 distance of each row's label distribution to ``target``; empty rows score 1."""
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = odd_hours / hours[..., None]
    l1 = np.abs(dist - target).sum(axis=-1)
    return np.where(hours > 0, l1, target.sum())


def deficiency_score(
    split_hours: np.ndarray,
    split_odd: Mapping[str, np.ndarray],
    split_targets: np.ndarray,
    odd_targets: Mapping[str, np.ndarray],
) -> np.ndarray:
    """Duration-share deviation plus mean per-split, per-category ODD L1 (weights 1:1).

    The duration term is the mean over splits of ``|share - target| / target``:
    without the division a 2 % split could sit far below its target while its
    ODD mix dominated every greedy decision. Arrays may carry leading batch
    axes before the split axis.
    """
    total = split_hours.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = np.where(total > 0, split_hours / total, 0.0)
        rel = np.where(split_targets > 0, np.abs(shares - split_targets) / split_targets, shares)
    duration_term = rel.mean(axis=-1)
    odd_terms = [_odd_l1(split_odd[c], split_hours, odd_targets[c]) for c in ODD_CATEGORIES]
    odd_term = np.mean(np.stack(odd_terms, axis=-1), axis=(-1, -2))
    return duration_term + odd_term


@dataclass
class SplitAssignment:
    splits: dict[str, str]
    score: float
    infeasible: bool
    restart: int
    seed: int
    tiers: dict[str, int] = field(default_factory=dict)
    tier_report: list[dict] = field(default_factory=list)

    def clusters_in(self, split: str) -> list[str]:
        return sorted(cid for cid, s in self.splits.items() if s == split)


def _split_targets(targets: Mapping[str, float]) -> np.ndarray:
    vec = np.array([float(targets.get(s, 0.0)) for s in SPLITS])
    if set(targets) - set(SPLITS) or np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-6:
        raise InvalidParams(f"split targets must cover {SPLITS} and sum to 1, got {dict(targets)}")
    return vec


def _greedy_assign(
    clusters: Sequence[SessionCluster],
    split_targets: np.ndarray,
    odd_targets: Mapping[str, np.ndarray],
    rng: np.random.Generator,
) -> tuple[list[int], float]:
    n_splits = len(SPLITS)
    split_hours = np.zeros(n_splits)
    split_odd = {c: np.zeros((n_splits, len(ODD_LABELS[c]))) for c in ODD_CATEGORIES}
    eye = np.eye(n_splits)
    remaining = sorted(range(len(clusters)), key=lambda i: (clusters[i].hours, clusters[i].cluster_id))
    choice = [0] * len(clusters)
    while remaining:
        pick = int(rng.integers(math.ceil(len(remaining) / 2)))
        idx = remaining.pop(pick)
        cl = clusters[idx]
        # one candidate state per split, stacked along a leading axis
        cand_hours = split_hours + eye * cl.hours
        cand_odd = {c: split_odd[c] + eye[:, :, None] * cl.odd_hours[c] for c in ODD_CATEGORIES}
        scores = deficiency_score(cand_hours, cand_odd, split_targets, odd_targets)
        best = int(np.argmin(scores))
        choice[idx] = best
        split_hours = cand_hours[best]
        split_odd = {c: cand_odd[c][best] for c in ODD_CATEGORIES}
    final = float(deficiency_score(split_hours, split_odd, split_targets, odd_targets))
    return choice, final


def _split_term(hours, odd, target_share: float, total: float, odd_targets, n_splits: int) -> np.ndarray:
    """One split's contribution to :func:`deficiency_score` once the total duration is fixed."""
    if target_share > 0:
        dur = np.abs(hours / total - target_share) / target_share
    else:
        dur = hours / total
    odd_sum = sum(_odd_l1(odd[c], hours, odd_targets[c]) for c in ODD_CATEGORIES)
    return (dur + odd_sum / len(ODD_CATEGORIES)) / n_splits


def _polish(
    clusters: Sequence[SessionCluster],
    choice: list[int],
    split_targets: np.ndarray,
    odd_targets: Mapping[str, np.ndarray],
    rng: np.random.Generator,
    max_rounds: int = 400,
    swap_sample: int = 512,
) -> list[int]:
    """Best-improvement local search over single moves and swaps.

    The greedy pass commits each cluster once; small splits then carry a
    visible rounding error in their ODD mix. With the total duration fixed the
    score separates into per-split terms, so a move or swap only touches two
    of them. Swaps pair every cluster outside the largest split with a
    seeded sample of clusters from other splits.
    """
    n_splits = len(SPLITS)
    choice_arr = np.array(choice)
    H = np.array([c.hours for c in clusters])
    O = {c: np.array([cl.odd_hours[c] for cl in clusters]) for c in ODD_CATEGORIES}
    total = H.sum()
    major = int(np.argmax(split_targets))

    def totals():
        h = np.bincount(choice_arr, weights=H, minlength=n_splits)
        o = {c: np.stack([O[c][choice_arr == s].sum(axis=0) for s in range(n_splits)]) for c in ODD_CATEGORIES}
        return h, o

    h, o = totals()
    for _ in range(max_rounds):
        terms = np.array([_split_term(h[s], {c: o[c][s] for c in ODD_CATEGORIES}, split_targets[s], total, odd_targets, n_splits)
                          for s in range(n_splits)])
        best_delta, best_op = -1e-12, None
        # single moves a -> b
        for a in range(n_splits):
            idx = np.flatnonzero(choice_arr == a)
            if idx.size == 0:
                continue
            ta = _split_term(h[a] - H[idx], {c: o[c][a] - O[c][idx] for c in ODD_CATEGORIES},
                             split_targets[a], total, odd_targets, n_splits)
            for b in range(n_splits):
                if b == a:
                    continue
                tb = _split_term(h[b] + H[idx], {c: o[c][b] + O[c][idx] for c in ODD_CATEGORIES},
                                 split_targets[b], total, odd_targets, n_splits)
                delta = ta + tb - terms[a] - terms[b]
                k = int(np.argmin(delta))
                if delta[k] < best_delta:
                    best_delta, best_op = float(delta[k]), ("move", int(idx[k]), b)
        # swaps between a minor-split cluster and a sampled cluster elsewhere
        for a in range(n_splits):
            if a == major:
                continue
            I = np.flatnonzero(choice_arr == a)
            for b in range(n_splits):
                if b == a:
                    continue
                J = np.flatnonzero(choice_arr == b)
                if I.size == 0 or J.size == 0:
                    continue
                if J.size > swap_sample:
                    J = np.sort(rng.choice(J, swap_sample, replace=False))
                dH = H[J][None, :] - H[I][:, None]
                dO = {c: O[c][J][None, :, :] - O[c][I][:, None, :] for c in ODD_CATEGORIES}
                ta = _split_term(h[a] + dH, {c: o[c][a] + dO[c] for c in ODD_CATEGORIES}, split_targets[a], total, odd_targets, n_splits)
                tb = _split_term(h[b] - dH, {c: o[c][b] - dO[c] for c in ODD_CATEGORIES}, split_targets[b], total, odd_targets, n_splits)
                delta = ta + tb - terms[a] - terms[b]
                k = int(np.argmin(delta))
                if delta.flat[k] < best_delta:
                    i, j = np.unravel_index(k, delta.shape)
                    best_delta, best_op = float(delta.flat[k]), ("swap", int(I[i]), int(J[j]))
        if best_op is None:
            break
        if best_op[0] == "move":
            _, i, b = best_op
            a = choice_arr[i]
            h[a] -= H[i]
            h[b] += H[i]
            for c in ODD_CATEGORIES:
                o[c][a] -= O[c][i]
                o[c][b] += O[c][i]
            choice_arr[i] = b
        else:
            _, i, j = best_op
            a, b = choice_arr[i], choice_arr[j]
            for s, gain, loss in ((a, j, i), (b, i, j)):
                h[s] += H[gain] - H[loss]
                for c in ODD_CATEGORIES:
                    o[c][s] += O[c][gain] - O[c][loss]
            choice_arr[i], choice_arr[j] = b, a
    return choice_arr.tolist()


def assignment_score(
    clusters: Sequence[SessionCluster],
    splits: Mapping[str, str],
    targets: Mapping[str, float] = SPLIT_TARGETS,
    odd_targets: Mapping[str, Mapping[str, float]] = REAL_WORLD_ODD,
) -> float:
    """Deficiency score of an arbitrary cluster -> split mapping."""
    split_targets = _split_targets(targets)
    odd_vecs = _target_vectors(odd_targets)
    hours = np.zeros(len(SPLITS))
    odd = {c: np.zeros((len(SPLITS), len(ODD_LABELS[c]))) for c in ODD_CATEGORIES}
    for cl in clusters:
        s = SPLITS.index(splits[cl.cluster_id])
        hours[s] += cl.hours
        for c in ODD_CATEGORIES:
            odd[c][s] += cl.odd_hours[c]
    return float(deficiency_score(hours, odd, split_targets, odd_vecs))


def assign_splits(
    clusters: Sequence[SessionCluster],
    targets: Mapping[str, float] = SPLIT_TARGETS,
    odd_targets: Mapping[str, Mapping[str, float]] = REAL_WORLD_ODD,
    seed: int = 42,
    n_restarts: int = 8,
    polish: bool = True,
) -> SplitAssignment:
    """Greedy ODD-aware split assignment with seeded restarts.

    Each step samples a cluster uniformly from the smaller half (by hours,
    then id) of the unassigned ones and gives it to the split whose resulting
    deficiency score is lowest. The restart with the lowest final score wins
    and, unless ``polish`` is off, is refined by a move/swap local search.
    """
    clusters = list(clusters)
    if not clusters:
        raise InvalidParams("no clusters to assign")
    if n_restarts < 1:
        raise InvalidParams("n_restarts must be >= 1")
    split_targets = _split_targets(targets)
    odd_vecs = _target_vectors(odd_targets)
    total = sum(c.hours for c in clusters)
    if not total > 0:
        raise InvalidParams("total duration must be > 0")
    infeasible = any(c.hours > split_targets.max() * total for c in clusters)
    if infeasible:
        log.warning("a single cluster exceeds the largest split target; assignment is best-effort")

    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng([seed, restart])
        choice, score = _greedy_assign(clusters, split_targets, odd_vecs, rng)
        if best is None or score < best[1]:
            best = (choice, score, restart)
    choice, score, restart = best
    if polish and len(clusters) > 1:
        choice = _polish(clusters, choice, split_targets, odd_vecs, np.random.default_rng([seed, n_restarts]))
        score = assignment_score(clusters, {cl.cluster_id: SPLITS[s] for cl, s in zip(clusters, choice)}, targets, odd_targets)
    return SplitAssignment(
        splits={cl.cluster_id: SPLITS[s] for cl, s in zip(clusters, choice)},
        score=score,
        infeasible=infeasible,
        restart=restart,
        seed=seed,
    )


# -- cumulative training tiers ----------------------------------------------


def _tier_odd_score(odd: Mapping[str, np.ndarray], hours: float, odd_vecs: Mapping[str, np.ndarray]) -> float:
    if hours <= 0:
        return 1.0
    return float(np.mean([np.abs(odd[c] / hours - odd_vecs[c]).sum() for c in ODD_CATEGORIES]))


def cumulative_tiers(
    assignment: SplitAssignment,
    clusters: Sequence[SessionCluster],
    tier_hours: Sequence[float] = TIER_HOURS,
    odd_targets: Mapping[str, Mapping[str, float]] = REAL_WORLD_ODD,
    seed: int = 42,
    lookahead: int = 8,
    odd_tolerance: float = ODD_TOLERANCE,
) -> SplitAssignment:
    """Nest the training clusters into cumulative tiers of ``tier_hours``.

    Training clusters are shuffled with ``seed`` and committed one at a time.
    Each tier keeps growing while some cluster among the next ``lookahead``
    uncommitted ones moves the running total closer to the tier size; among
    those the one that best restores the ODD mix is taken. Earlier tiers are
    never revisited, so every tier contains all smaller ones. A tier always
    receives at least one new cluster, even if that overshoots.

    Tier labels are exponents ``k`` of ``2**k`` hours, recorded on the
    returned assignment together with a per-tier audit.
    """
    tier_hours = [float(t) for t in tier_hours]
    if any(b <= a for a, b in zip(tier_hours, tier_hours[1:])):
        raise InvalidParams("tier_hours must be strictly increasing")
    if lookahead < 1:
        raise InvalidParams("lookahead must be >= 1")
    odd_vecs = _target_vectors(odd_targets)
    by_id = {c.cluster_id: c for c in clusters}
    train_ids = assignment.clusters_in("train")
    if not train_ids:
        raise InvalidParams("no training clusters to tier")
    rng = np.random.default_rng(seed)
    pool = [by_id[i] for i in train_ids]
    pool = [pool[i] for i in rng.permutation(len(pool))]
    train_total = sum(c.hours for c in pool)

    hours = 0.0
    odd = {c: np.zeros(len(ODD_LABELS[c])) for c in ODD_CATEGORIES}
    tiers: dict[str, int] = {}
    report = []
    for target in tier_hours:
        k = int(round(math.log2(target))) if math.log2(target).is_integer() else math.log2(target)
        truncated = target > train_total
        if truncated:
            log.warning("tier %g h exceeds the %.1f training hours available", target, train_total)
        added = 0
        while pool:
            window = pool[:lookahead]
            if truncated:
                pick = 0
            else:
                gap = abs(hours - target)
                closer = [i for i, c in enumerate(window) if abs(hours + c.hours - target) < gap]
                if not closer:
                    if added:
                        break
                    closer = [0]
                scores = [
                    _tier_odd_score({c: odd[c] + window[i].odd_hours[c] for c in ODD_CATEGORIES},
                                    hours + window[i].hours, odd_vecs)
                    for i in closer
                ]
                pick = closer[int(np.argmin(scores))]
            cl = pool.pop(pick)
            tiers[cl.cluster_id] = k
            hours += cl.hours
            for c in ODD_CATEGORIES:
                odd[c] = odd[c] + cl.odd_hours[c]
            added += 1
        l1 = {c: float(np.abs(odd[c] / hours - odd_vecs[c]).sum()) for c in ODD_CATEGORIES}
        report.append(
            {
                "tier": k,
                "target_hours": target,
                "hours": hours,
                "clusters": len(tiers),
                "truncated": truncated,
                "off_target": abs(hours - target) > 0.05 * target,
                "odd_l1": l1,
                "odd_within_tolerance": all(v <= odd_tolerance for v in l1.values()),
            }
        )
    return SplitAssignment(
        splits=dict(assignment.splits),
        score=assignment.score,
        infeasible=assignment.infeasible,
        restart=assignment.restart,
        seed=assignment.seed,
        tiers=tiers,
        tier_report=report,
    )


def split_audit(
    assignment: SplitAssignment,
    clusters: Sequence[SessionCluster],
    targets: Mapping[str, float] = SPLIT_TARGETS,
    odd_targets: Mapping[str, Mapping[str, float]] = REAL_WORLD_ODD,
) -> dict:
    """Per-split duration shares, ODD distributions and cell-disjointness check."""
    odd_vecs = _target_vectors(odd_targets)
    total = sum(c.hours for c in clusters)
    cells_by_split: dict[str, set] = {s: set() for s in SPLITS}
    out: dict = {"splits": {}, "score": assignment.score, "infeasible": assignment.infeasible}
    for split in SPLITS:
        members = [c for c in clusters if assignment.splits.get(c.cluster_id) == split]
        hours = sum(c.hours for c in members)
        entry = {
            "hours": hours,
            "share": hours / total if total else 0.0,
            "target_share": float(targets.get(split, 0.0)),
            "clusters": len(members),
            "sessions": sum(len(c.session_ids) for c in members),
            "odd": {},
            "odd_l1": {},
        }
        for cat in ODD_CATEGORIES:
            vec = np.sum([c.odd_hours[cat] for c in members], axis=0) if members else np.zeros(len(ODD_LABELS[cat]))
            dist = vec / hours if hours else vec
            entry["odd"][cat] = {label: float(v) for label, v in zip(ODD_LABELS[cat], dist)}
            entry["odd_l1"][cat] = float(np.abs(dist - odd_vecs[cat]).sum()) if hours else None
        for c in members:
            cells_by_split[split] |= c.cells
        out["splits"][split] = entry
    shared = 0
    for i, a in enumerate(SPLITS):
        for b in SPLITS[i + 1 :]:
            shared += len(cells_by_split[a] & cells_by_split[b])
    out["shared_cells"] = shared
    if assignment.tier_report:
        out["tiers"] = assignment.tier_report
    return out


def session_rows(assignment: SplitAssignment, clusters: Sequence[SessionCluster]) -> list[tuple[str, str, str]]:
    """``(session_id, split, tier)`` rows sorted by session id; tier blank outside train tiers."""
    rows = []
    for cl in clusters:
        split = assignment.splits[cl.cluster_id]
        tier = assignment.tiers.get(cl.cluster_id)
        for sid in cl.session_ids:
            rows.append((sid, split, "" if tier is None else str(tier)))
    rows.sort()
    return rows
