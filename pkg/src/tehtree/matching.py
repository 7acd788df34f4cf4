"""Nearest-neighbour matching of treated to control subjects on a scalar score."""

from dataclasses import dataclass

import numpy as np

from ._rng import STREAM_MATCHING, make_rng
from ._validation import check_vector
from .exceptions import ValidationError

TIE_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class MatchedPairSet:
    """Matched pairs with their outcome differences.

    Attributes
    ----------
    pairs : int array of shape (k, 2)
        ``(treated_idx, control_idx)`` rows, in increasing treated index.
    delta : array of shape (k,)
        ``y[treated] - y[control]``.
    group : int array of shape (k,)
        Dense re-index of the control member; the mixed model's grouping factor.
    x_treated : array of shape (k, p)
        Covariates of the treated member; the tree's features.
    distance : array of shape (k,)
        ``|score[treated] - score[control]|``.
    n_dropped : int
        Pairs rejected by the optional caliper.
    """

    pairs: np.ndarray
    delta: np.ndarray
    group: np.ndarray
    x_treated: np.ndarray
    distance: np.ndarray
    n_dropped: int = 0

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def treated_idx(self):
        return self.pairs[:, 0]

    @property
    def control_idx(self):
        return self.pairs[:, 1]

    @property
    def n_reused_controls(self):
        """Number of distinct controls that appear in more than one pair."""
        counts = np.bincount(self.group)
        return int(np.sum(counts > 1))

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return MatchedPairSet(
            pairs=self.pairs[rows],
            delta=self.delta[rows],
            group=_dense(self.pairs[rows, 1]),
            x_treated=self.x_treated[rows],
            distance=self.distance[rows],
        )


def _dense(labels):
    return np.unique(labels, return_inverse=True)[1].astype(int)


def nearest_controls(treated_scores, control_scores, rng, atol=TIE_ATOL):
    """Position (into ``control_scores``) of the nearest control for each treated score.

    Exact-distance ties (within ``atol``) are broken by a uniform draw among the
    tied controls, taken in increasing position order; ``rng`` is consumed only
    when a tie occurs, in treated order.
    """
    control_scores = np.asarray(control_scores, dtype=float)
    order = np.argsort(control_scores, kind="stable")
    sorted_scores = control_scores[order]
    m = sorted_scores.shape[0]
    out = np.empty(len(treated_scores), dtype=int)
    for i, s in enumerate(treated_scores):
        pos = np.searchsorted(sorted_scores, s)
        near = [j for j in (pos - 1, pos) if 0 <= j < m]
        best = min(abs(s - sorted_scores[j]) for j in near)
        # every control within best + atol has score in [s - best - 2atol, s + best + 2atol]
        lo = np.searchsorted(sorted_scores, s - best - 2 * atol, side="left")
        hi = np.searchsorted(sorted_scores, s + best + 2 * atol, side="right")
        cand = order[lo:hi]
        dist = np.abs(s - control_scores[cand])
        d_min = dist.min()
        tied = np.sort(cand[dist <= d_min + atol])
        out[i] = tied[0] if tied.size == 1 else tied[rng.integers(tied.size)]
    return out


def match_pairs(data, scores, seed, caliper=None, treated=None, controls=None):
    """Match every treated subject to its nearest-score control, with replacement.

    Parameters
    ----------
    data : TrialDataset
    scores : array of shape (n,)
        Matching score per subject, typically the estimated prognostic score.
    seed : int
        Seed of the tie-breaking stream.
    caliper : float, optional
        Pairs farther apart than this are dropped and counted in ``n_dropped``.
    treated, controls : int arrays, optional
        Restrict the pools (indices into ``data``); default is every subject of
        the respective arm.
    """
    scores = check_vector(scores, "scores", length=data.n)
    if treated is None:
        treated = np.flatnonzero(data.z == 1)
    if controls is None:
        controls = np.flatnonzero(data.z == 0)
    treated = np.sort(np.asarray(treated, dtype=int))
    controls = np.sort(np.asarray(controls, dtype=int))
    if treated.size == 0 or controls.size == 0:
        raise ValidationError("matching needs at least one treated and one control subject")
    if np.any(data.z[treated] != 1) or np.any(data.z[controls] != 0):
        raise ValidationError("treated/control pools contain subjects from the wrong arm")

    rng = make_rng(seed, STREAM_MATCHING)
    pos = nearest_controls(scores[treated], scores[controls], rng)
    matched = controls[pos]
    distance = np.abs(scores[treated] - scores[matched])

    n_dropped = 0
    if caliper is not None:
        keep = distance <= caliper
        n_dropped = int(np.sum(~keep))
        treated, matched, distance = treated[keep], matched[keep], distance[keep]
        if treated.size == 0:
            raise ValidationError(f"caliper {caliper} rejected every pair")

    return MatchedPairSet(
        pairs=np.column_stack([treated, matched]),
        delta=data.y[treated] - data.y[matched],
        group=_dense(matched),
        x_treated=np.array(data.x[treated]),
        distance=distance,
        n_dropped=n_dropped,
    )
