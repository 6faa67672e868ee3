"""Ranking metrics for uplift predictions.

Subjects are ranked by predicted uplift, descending; ties are broken by a
seeded random shuffle applied before a stable sort, so the seed is part of
every evaluation call. At each prefix size k the uplift curve estimates the
incremental positives had everyone in the prefix been treated, and the Qini
curve the incremental positives among the treated of the prefix. AUUC is the
area under the per-subject-normalized uplift curve; the Qini coefficient is
the area between the Qini curve and its random-ranking diagonal, in
per-subject^2 units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, UndefinedMetricError


@dataclass
class RankingEval:
    """Ranking order plus cumulative counts at every prefix size k = 1..n.

    Arrays are indexed by k-1: `n_t[k-1]` is the number of treated subjects
    among the k highest-ranked, `r_t[k-1]` the positives among those, and
    `n_c`/`r_c` the control counterparts.
    """

    order: np.ndarray
    n_t: np.ndarray
    n_c: np.ndarray
    r_t: np.ndarray
    r_c: np.ndarray
    tie_seed: int

    @property
    def n(self) -> int:
        return self.order.shape[0]


@dataclass
class Curve:
    """A metric value per prefix size k = 1..n."""

    k: np.ndarray
    values: np.ndarray


def _check_eval_inputs(predictions, treatment, outcome):
    predictions = np.asarray(predictions, dtype=np.float64)
    treatment = np.asarray(treatment, dtype=np.int64)
    outcome = np.asarray(outcome, dtype=np.int64)
    n = predictions.shape[0]
    if predictions.ndim != 1 or treatment.shape != (n,) or outcome.shape != (n,):
        raise MetricError("predictions, treatment, outcome must be 1-d arrays of equal length")
    if n < 2:
        raise MetricError(f"need at least 2 subjects to rank, got {n}")
    if not np.isfinite(predictions).all():
        raise MetricError("non-finite prediction")
    if not (treatment == 1).any() or not (treatment == 0).any():
        raise MetricError("both treatment arms must be present")
    return predictions, treatment, outcome


def _tie_shuffled_order(predictions: np.ndarray, tie_seed: int) -> np.ndarray:
    """Descending order of predictions; tied groups appear in an order that is
    uniform given tie_seed (shuffle first, then stable sort)."""
    perm = np.random.default_rng(tie_seed).permutation(predictions.shape[0])
    return perm[np.argsort(-predictions[perm], kind="stable")]


def rank_eval(predictions, treatment, outcome, tie_seed: int = 0) -> RankingEval:
    """Rank subjects by prediction (descending, seeded tie-break) and
    accumulate per-prefix treated/control counts in one pass."""
    predictions, treatment, outcome = _check_eval_inputs(predictions, treatment, outcome)
    order = _tie_shuffled_order(predictions, tie_seed)
    t_o = treatment[order]
    y_o = outcome[order]
    return RankingEval(
        order=order,
        n_t=np.cumsum(t_o),
        n_c=np.cumsum(1 - t_o),
        r_t=np.cumsum(t_o * y_o),
        r_c=np.cumsum((1 - t_o) * y_o),
        tie_seed=tie_seed,
    )


def uplift_curve(ev: RankingEval) -> Curve:
    """Estimated incremental positives if the top-k were all treated:
    (r_t/n_t - r_c/n_c) * (n_t + n_c); prefixes missing an arm score 0."""
    both = (ev.n_t > 0) & (ev.n_c > 0)
    values = np.zeros(ev.n, dtype=np.float64)
    nt = ev.n_t[both].astype(np.float64)
    nc = ev.n_c[both].astype(np.float64)
    values[both] = (ev.r_t[both] / nt - ev.r_c[both] / nc) * (nt + nc)
    return Curve(k=np.arange(1, ev.n + 1, dtype=np.int64), values=values)


def qini_curve(ev: RankingEval) -> Curve:
    """Incremental positives among the treated of the top-k:
    r_t - r_c * n_t/n_c; prefixes with no control subjects score r_t."""
    values = np.where(
        ev.n_c > 0,
        ev.r_t - ev.r_c * (ev.n_t / np.maximum(ev.n_c, 1)),
        ev.r_t.astype(np.float64),
    )
    return Curve(k=np.arange(1, ev.n + 1, dtype=np.int64), values=values)


def auuc(ev: RankingEval) -> float:
    """Area under the uplift curve, normalized so a random ranking scores
    about 0.5: mean over k of uplift(k)/uplift(n). Undefined when
    uplift(n) <= 0."""
    values = uplift_curve(ev).values
    final = values[-1]
    if not final > 0:
        raise UndefinedMetricError(
            f"AUUC is undefined: uplift at k=n is {final!r} (needs to be > 0)"
        )
    return float(np.mean(values / final))


def qini_coefficient(ev: RankingEval) -> float:
    """Mean signed area between the Qini curve and the random-ranking
    diagonal, in per-subject^2 units: (1/n^2) * sum_k (Q(k) - (k/n) Q(n))."""
    values = qini_curve(ev).values
    n = ev.n
    ks = np.arange(1, n + 1, dtype=np.float64)
    return float(np.sum(values - (ks / n) * values[-1]) / (n * n))


def brute_force_curves(predictions, treatment, outcome, tie_seed: int = 0) -> tuple[Curve, Curve]:
    """Reference implementation: recompute both curves at every k by
    re-scanning the full prefix from scratch (O(n^2)). Same tie-break rule
    and seed as `rank_eval`; used to cross-check the streaming path."""
    predictions, treatment, outcome = _check_eval_inputs(predictions, treatment, outcome)
    perm = np.random.default_rng(tie_seed).permutation(predictions.shape[0])
    order = perm[np.argsort(-predictions[perm], kind="stable")]
    n = order.shape[0]
    uplift_vals = np.zeros(n, dtype=np.float64)
    qini_vals = np.zeros(n, dtype=np.float64)
    for k in range(1, n + 1):
        prefix = order[:k]
        t_p = treatment[prefix]
        y_p = outcome[prefix]
        n_t = int(np.sum(t_p))
        n_c = k - n_t
        r_t = int(np.sum(y_p[t_p == 1]))
        r_c = int(np.sum(y_p[t_p == 0]))
        if n_t > 0 and n_c > 0:
            uplift_vals[k - 1] = (r_t / n_t - r_c / n_c) * (n_t + n_c)
        else:
            uplift_vals[k - 1] = 0.0
        if n_c > 0:
            qini_vals[k - 1] = r_t - r_c * (n_t / n_c)
        else:
            qini_vals[k - 1] = float(r_t)
    ks = np.arange(1, n + 1, dtype=np.int64)
    return Curve(k=ks, values=uplift_vals), Curve(k=ks, values=qini_vals)


def evaluate_predictions(predictions, treatment, outcome, tie_seed: int = 0) -> dict:
    """AUUC and Qini coefficient in one call; the summary record written by
    the CLI. Raises UndefinedMetricError when AUUC is undefined."""
    ev = rank_eval(predictions, treatment, outcome, tie_seed)
    return {
        "auuc": auuc(ev),
        "qini": qini_coefficient(ev),
        "n": ev.n,
        "tie_seed": tie_seed,
    }


def write_curve_csv(curve: Curve, path: str) -> None:
    """Write a curve as `k,value` CSV with exact float representation."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,value\n")
        for k, v in zip(curve.k, curve.values):
            fh.write(f"{int(k)},{repr(float(v))}\n")


def read_curve_csv(path: str) -> Curve:
    ks: list[int] = []
    vals: list[float] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "k,value":
            raise MetricError(f"{path}: not a curve file (header {header!r})")
        for line in fh:
            k_str, v_str = line.strip().split(",")
            ks.append(int(k_str))
            vals.append(float(v_str))
    return Curve(k=np.array(ks, dtype=np.int64), values=np.array(vals, dtype=np.float64))
