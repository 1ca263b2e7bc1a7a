"""Monte Carlo ROC / FPR estimation and CFAR diagnostics.

A detection is declared when ``T(x) >= gamma``. All curves are empirical
step functions built from sorted score samples, so results do not depend on
the order in which trials were produced.
"""

import csv
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.optimize import brentq

from .rng import stream

KS_LEVEL = 0.01
PAUC_GRID = 50
GAP_GRID = 201
CSV_VERSION = 1


@dataclass
class PerformanceSurface:
    """Sorted null / alternative score samples per nuisance value."""

    h0: dict = field(default_factory=dict)
    h1: dict = field(default_factory=dict)

    def add(self, nuisance_id, h0_scores, h1_scores):
        self.h0[nuisance_id] = np.sort(np.asarray(h0_scores, dtype=float).ravel())
        self.h1[nuisance_id] = np.sort(np.asarray(h1_scores, dtype=float).ravel())

    @property
    def nuisance_ids(self):
        return list(self.h0)

    def fpr(self, nuisance_id, gamma):
        return _exceed(self.h0[nuisance_id], gamma)

    def tpr(self, nuisance_id, gamma):
        return _exceed(self.h1[nuisance_id], gamma)


def _exceed(sorted_scores, gamma):
    """Fraction of scores ``>= gamma``."""
    n = sorted_scores.size
    return (n - np.searchsorted(sorted_scores, gamma, side="left")) / n


# ---------------------------------------------------------------------------
# simulation


def simulate_trials(model, nuisances, trials, seed):
    """Null and alternative observations for every nuisance value.

    Null trials of nuisance ``k`` are replicates of one point on stream
    ``(seed, "eval", k, 0)``; alternative trials each draw their signal from
    the fake prior on stream ``(seed, "eval", k, 1)``.
    """
    out = []
    for k, nu in enumerate(nuisances):
        x0 = model.simulate(model.null_point(nu), trials, stream(seed, "eval", k, 0))
        rng = stream(seed, "eval", k, 1)
        x1 = np.stack([model.simulate(model.alt_point(nu, rng), 1, rng)[0] for _ in range(trials)])
        out.append((model.nuisance_id(nu), x0, x1))
    return out


def score_trials(detector, simulated, jobs=1):
    surface = PerformanceSurface()

    def run(item):
        nid, x0, x1 = item
        return nid, detector(x0), detector(x1)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, simulated))
    else:
        results = [run(item) for item in simulated]
    for nid, s0, s1 in results:
        surface.add(nid, s0, s1)
    return surface


def estimate_surface(detector, model, nuisances, trials, seed, jobs=1):
    if trials < 1:
        raise ValueError("need at least one trial")
    return score_trials(detector, simulate_trials(model, nuisances, trials, seed), jobs)


# ---------------------------------------------------------------------------
# curves


def roc(surface, nuisance_id):
    """Empirical ROC as an ``(K, 2)`` array of ``(fpr, tpr)`` from (0,0) to (1,1)."""
    s0, s1 = surface.h0[nuisance_id], surface.h1[nuisance_id]
    gammas = np.unique(np.concatenate([s0, s1]))[::-1]
    fpr = np.concatenate([[0.0], _exceed(s0, gammas)])
    tpr = np.concatenate([[0.0], _exceed(s1, gammas)])
    return np.column_stack([fpr, tpr])


def auc(curve):
    curve = np.asarray(curve, dtype=float)
    return float(np.trapezoid(curve[:, 1], curve[:, 0]))


def fpr_vs_threshold(surface, nuisance_id, gammas):
    return surface.fpr(nuisance_id, np.asarray(gammas, dtype=float))


def _threshold_for(sorted_scores, target):
    """Smallest gamma with empirical ``P(T >= gamma) <= target``."""
    n = sorted_scores.size
    allowed = int(np.floor(target * n + 1e-9))
    if allowed >= n:
        return -np.inf
    return float(np.nextafter(sorted_scores[n - allowed - 1], np.inf))


def calibrate_threshold(surface, target_fpr, mode="per-nuisance", nuisance_id=None):
    """Threshold meeting ``target_fpr`` on one nuisance or on the worst case."""
    if not 0.0 < target_fpr <= 1.0:
        raise ValueError(f"target FPR must lie in (0, 1], got {target_fpr}")
    if target_fpr >= 1.0:
        return -np.inf
    if mode == "per-nuisance":
        ids = [nuisance_id if nuisance_id is not None else surface.nuisance_ids[0]]
    elif mode == "worst-case":
        ids = surface.nuisance_ids
    else:
        raise ValueError(f"unknown calibration mode {mode!r}")
    for nid in ids:
        s = surface.h0[nid]
        if s[0] == s[-1]:
            raise ValueError(f"all null scores of {nid} are equal; FPR cannot be tuned")
    return max(_threshold_for(surface.h0[nid], target_fpr) for nid in ids)


def gamma_grid(surface, size=GAP_GRID):
    """Quantiles of the pooled null scores at ``size`` evenly spaced levels."""
    pooled = np.concatenate([surface.h0[nid] for nid in surface.nuisance_ids])
    return np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, size)))


@dataclass
class CfarReport:
    max_gap: float
    gamma_at_max: float
    pairs: list

    @property
    def is_cfar(self):
        return all(p["ks_pvalue"] > KS_LEVEL for p in self.pairs)


def cfar_deviation(surface, gammas=None):
    """Largest FPR gap over the threshold grid plus pairwise two-sample KS tests."""
    ids = surface.nuisance_ids
    if len(ids) < 2:
        raise ValueError("CFAR deviation needs at least two nuisance values")
    if gammas is None:
        gammas = gamma_grid(surface)
    fprs = np.stack([surface.fpr(nid, gammas) for nid in ids])
    spread = fprs.max(axis=0) - fprs.min(axis=0)
    best = int(np.argmax(spread))
    pairs = []
    for a, b in itertools.combinations(range(len(ids)), 2):
        ks = stats.ks_2samp(surface.h0[ids[a]], surface.h0[ids[b]])
        pairs.append({
            "nuisance_a": ids[a],
            "nuisance_b": ids[b],
            "max_gap": float(np.max(np.abs(fprs[a] - fprs[b]))),
            "ks_stat": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
        })
    return CfarReport(float(spread[best]), float(gammas[best]), pairs)


def partial_auc_worst_case(surface, cap=0.05, grid=PAUC_GRID):
    """Normalized area under TPR versus worst-case FPR on ``(0, cap]``.

    Midpoint rule on ``grid`` points; returns ``{nuisance_id: value}``.
    """
    if not 0.0 < cap <= 1.0:
        raise ValueError(f"cap must lie in (0, 1], got {cap}")
    ids = surface.nuisance_ids
    if len(ids) < 2:
        raise ValueError("worst-case partial AUC needs at least two nuisance values")
    levels = cap * (np.arange(grid) + 0.5) / grid
    gammas = np.array([max(_threshold_for(surface.h0[nid], w) for nid in ids) for w in levels])
    return {nid: float(np.mean(surface.tpr(nid, gammas))) for nid in ids}


def chi2_sf(x, dof):
    return special.gammaincc(dof / 2.0, np.asarray(x, dtype=float) / 2.0)


def chi2_threshold(dof, target_fpr):
    """``gamma`` with ``P(chi2_dof >= gamma) = target_fpr``, by bracketed root search."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError(f"target FPR must lie in (0, 1), got {target_fpr}")
    hi = max(1.0, float(dof))
    while chi2_sf(hi, dof) > target_fpr:
        hi *= 2.0
    return brentq(lambda g: chi2_sf(g, dof) - target_fpr, 0.0, hi, xtol=1e-14, rtol=1e-14)


# ---------------------------------------------------------------------------
# CSV outputs


def _writer(path, header):
    fh = open(path, "w", newline="")
    fh.write(f"# cfardet {header[0]} v{CSV_VERSION}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header[1])
    return fh, w


def write_reports(surfaces, out_dir, cap=0.05):
    """Write roc.csv, fpr_vs_threshold.csv, cfar_report.csv, pauc.csv and auc.csv.

    ``surfaces`` maps detector name to :class:`PerformanceSurface`.
    """
    paths = {name: os.path.join(out_dir, f"{name}.csv")
             for name in ("roc", "fpr_vs_threshold", "cfar_report", "pauc", "auc")}
    fh_roc, w_roc = _writer(paths["roc"], ("roc", ["detector", "nuisance_id", "fpr", "tpr"]))
    fh_fpr, w_fpr = _writer(paths["fpr_vs_threshold"],
                            ("fpr_vs_threshold", ["detector", "nuisance_id", "gamma", "fpr"]))
    fh_cfar, w_cfar = _writer(paths["cfar_report"], ("cfar_report", [
        "detector", "nuisance_a", "nuisance_b", "max_gap", "ks_stat", "ks_pvalue", "cfar"]))
    fh_pauc, w_pauc = _writer(paths["pauc"], ("pauc", ["detector", "nuisance_id", "cap", "pauc"]))
    fh_auc, w_auc = _writer(paths["auc"], ("auc", ["detector", "nuisance_id", "auc"]))
    try:
        for name, surface in surfaces.items():
            ids = surface.nuisance_ids
            gammas = gamma_grid(surface)
            for nid in ids:
                curve = roc(surface, nid)
                for f, t in curve:
                    w_roc.writerow([name, nid, repr(float(f)), repr(float(t))])
                for g, f in zip(gammas, fpr_vs_threshold(surface, nid, gammas)):
                    w_fpr.writerow([name, nid, repr(float(g)), repr(float(f))])
                w_auc.writerow([name, nid, repr(auc(curve))])
            if len(ids) >= 2:
                report = cfar_deviation(surface, gammas)
                for p in report.pairs:
                    w_cfar.writerow([name, p["nuisance_a"], p["nuisance_b"], repr(p["max_gap"]),
                                     repr(p["ks_stat"]), repr(p["ks_pvalue"]),
                                     int(p["ks_pvalue"] > KS_LEVEL)])
                w_cfar.writerow([name, "*", "*", repr(report.max_gap), "", "", int(report.is_cfar)])
                for nid, value in partial_auc_worst_case(surface, cap).items():
                    w_pauc.writerow([name, nid, repr(cap), repr(value)])
    finally:
        for fh in (fh_roc, fh_fpr, fh_cfar, fh_pauc, fh_auc):
            fh.close()
    return paths


def read_csv(path):
    """Rows of a report CSV as dicts (the version comment line is skipped)."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
