"""Build models, detectors and checks from a resolved run configuration."""

import math
import os

import numpy as np

from . import detectors, theory
from .config import section
from .evaluation import chi2_threshold
from .model_sim import (AdaptiveModel, DCModel, LinearGaussianSpec, MaterialModel, ar1_covariance,
                        covariance_with_condition, default_target, make_synthetic_materials)
from .rng import stream
from .training import FeatureMap, TrainConfig, TrainedDetector

BUILTIN = {"dc-noise": ("glrt_dc",), "adaptive": ("amf", "kelly", "lamf"), "material": ()}


def build_model(table):
    m = section(table, "model")
    kind = table["experiment"]
    if kind == "dc-noise":
        return DCModel(n=m["n"], noise=m["noise"], eps=m["eps"], var_out=m["var_out"])
    if kind == "adaptive":
        return AdaptiveModel(n=m["n"], n_sec=m["n_sec"], cond_max=m["cond_max"],
                             amp_range=(-m["amp_max"], m["amp_max"]))
    if kind == "material":
        materials = make_synthetic_materials(m["materials"], m["bands"], m["material_seed"])
        return MaterialModel(materials, default_target(m["bands"]), m["amplitude"])
    raise ValueError(f"experiment {kind!r} has no simulation model")


def feature_map(table, model):
    kind = table["experiment"]
    if kind == "dc-noise":
        return FeatureMap("dc")
    if kind == "adaptive":
        return FeatureMap("lamf", signature=model.signature)
    return FeatureMap("identity")


def detector_tag(alpha, alphas):
    if alpha == 0:
        return "net"
    nonzero = [a for a in alphas if a != 0]
    return "cfarnet" if len(nonzero) == 1 else f"cfarnet-a{alpha:g}"


def train_configs(table):
    """``[(tag, TrainConfig, warm)]``, one per value of ``train.alpha``.

    With ``train.warm_start`` every penalized detector is fine-tuned from the
    NET of the same run (``warm`` is True) for ``finetune_steps`` steps at
    ``finetune_lr``; NET always comes first in the list.
    """
    t = section(table, "train")
    alphas = t.pop("alpha")
    if not alphas:
        raise ValueError("train.alpha lists no penalty weights")
    warm = t.pop("warm_start")
    finetune = {"steps": t.pop("finetune_steps"), "lr": t.pop("finetune_lr")}
    if warm and 0.0 not in alphas:
        raise ValueError("train.warm_start needs alpha 0 in train.alpha to train NET first")
    bandwidth = t.pop("bandwidth")
    if bandwidth != "median":
        bandwidth = float(bandwidth)
    tags = [detector_tag(a, alphas) for a in alphas]
    if len(set(tags)) != len(tags):
        raise ValueError(f"train.alpha values give duplicate detector tags: {tags}")
    out = []
    for tag, a in sorted(zip(tags, alphas), key=lambda item: item[1] != 0):
        opts = dict(t, **finetune) if warm and a != 0 else t
        out.append((tag, TrainConfig(alpha=a, bandwidth=bandwidth, seed=table["seed"], **opts), warm and a != 0))
    return out


def eval_nuisances(table, model):
    values = table["eval.nuisances"]
    kind = table["experiment"]
    if kind == "dc-noise":
        return [float(v) for v in values]
    if kind == "adaptive":
        return [covariance_with_condition(model.n, float(c), table["model.cov_seed"]) for c in values]
    return [int(v) for v in values] if values else model.default_nuisances


def builtin_detector(name, table, model):
    """Score function over a stacked observation array for a named classical detector."""
    kind = table["experiment"]
    if name not in BUILTIN.get(kind, ()):
        raise ValueError(f"{name!r} is not a built-in detector for {kind}")
    if name == "glrt_dc":
        return detectors.glrt_dc
    s = model.signature
    if name == "amf":
        return lambda x: detectors.amf(x[..., 0, :], x[..., 1:, :], s)
    if name == "kelly":
        return lambda x: detectors.kelly(x[..., 0, :], x[..., 1:, :], s)
    loading = table["eval.lamf_loading"]
    return lambda x: detectors.lamf(x[..., 0, :], x[..., 1:, :], s, loading)


def resolve_detector(name, table, model, search_dir):
    """Built-in detector by name, otherwise a trained ``.det`` file."""
    if name in BUILTIN.get(table["experiment"], ()):
        return builtin_detector(name, table, model)
    path = name if name.endswith(".det") else name + ".det"
    if not os.path.isabs(path):
        path = os.path.join(search_dir, path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"detector file not found: {path}")
    return TrainedDetector.load(path)


# ---------------------------------------------------------------------------
# theory checks


def _random_spec(rng, n, d_r, signal_prior_var=1.0):
    design = rng.standard_normal((n, d_r))
    return LinearGaussianSpec(design, ar1_covariance(n), signal_prior_var)


def _random_z_n(rng):
    return np.array([rng.uniform(0.5, 2.0), rng.uniform(-0.6, 0.6)])


def run_theory(table):
    """Rows ``(check_name, statistic, threshold, passed)`` for every theory check."""
    t = section(table, "theory")
    seed = table["seed"]
    rows = []

    def add(name, statistic, threshold, passed):
        rows.append((name, float(statistic), float(threshold), bool(passed)))

    if t["rank_deficient"]:
        design = np.ones((t["identity_n"], 2))
        LinearGaussianSpec(design, ar1_covariance(t["identity_n"]))

    # PBL / GLRT identity over random well-conditioned instances
    rng = stream(seed, "theory", "identity")
    sweep = {s2: 0.0 for s2 in theory.SIGMA_SWEEP}
    exact = 0.0
    for k in range(t["identity_instances"]):
        spec = _random_spec(rng, t["identity_n"], t["identity_d_r"])
        res, ex = theory.check_pbl_glrt_identity(spec, _random_z_n(rng), trials=20, seed=seed + k)
        for s2, r in res.items():
            sweep[s2] = max(sweep[s2], r)
        exact = max(exact, ex)
    residuals = [sweep[s2] for s2 in theory.SIGMA_SWEEP]
    for s2, r in sweep.items():
        add(f"identity_residual[s2={s2:g}]", r, 1e-5 if s2 == 1e8 else math.inf, s2 != 1e8 or r < 1e-5)
    add("identity_residual_monotone", float(np.max(np.diff(residuals))), 0.0,
        all(b < a for a, b in zip(residuals, residuals[1:])))
    add("identity_exact_unreduced", exact, 1e-9, exact < 1e-9)

    # Fisher information structure
    rng = stream(seed, "theory", "fisher")
    rn_max, rr_dev, rr_formula = 0.0, 0.0, 0.0
    for _ in range(t["fisher_specs"]):
        spec = _random_spec(rng, t["identity_n"], t["identity_d_r"])
        z_n = _random_z_n(rng)
        z_r = rng.standard_normal(spec.d_r)
        base = theory.fisher_blocks(spec, z_r, z_n)
        rn_max = max(rn_max, float(np.max(np.abs(base.rn))))
        for scale in (0.1, 10.0):
            rr_dev = max(rr_dev, float(np.max(np.abs(theory.fisher_blocks(spec, scale * z_r, z_n).rr - base.rr))))
        direct = spec.design.T @ np.linalg.solve(spec.covariance(z_n), spec.design)
        rr_formula = max(rr_formula, float(np.max(np.abs(base.rr - direct)) / np.max(np.abs(direct))))
    add("fisher_rn_max", rn_max, 1e-6, rn_max < 1e-6)
    add("fisher_rr_scale_invariance", rr_dev, 0.0, rr_dev == 0.0)
    add("fisher_rr_formula_rel", rr_formula, 1e-10, rr_formula < 1e-10)

    # asymptotic chi-squared laws
    rng = stream(seed, "theory", "asymptotics")
    spec = _random_spec(rng, t["asym_n"], 1)
    z_n = np.array([1.0, 0.5])
    z_r = np.array([t["asym_signal"]])
    report = theory.check_asymptotics(spec, z_r, z_n, t["asym_trials"], seed)
    add("asym_h0_ks_pvalue", report.ks_pvalue, 0.01, report.ks_pvalue > 0.01)
    add("asym_h1_mean_z", report.mean_z, 3.0, report.mean_z < 3.0)
    worst = float(np.max(np.abs(report.quantile_cdf_errors) / report.quantile_tolerance))
    add("asym_h1_quantiles", worst, 1.0, report.quantiles_ok)
    lam1 = theory.noncentrality(spec, z_r, z_n)
    lam3 = theory.noncentrality(spec, 3.0 * z_r, z_n)
    rel = abs(lam3 - 9.0 * lam1) / (9.0 * lam1)
    add("noncentrality_scaling_rel", rel, 1e-12, rel < 1e-12)
    gamma = chi2_threshold(1, 0.05)
    add("chi2_threshold_d1_005", gamma, 3.841, abs(gamma - 3.841) < 1e-3)

    # Bayes risk under a CFAR constraint
    rng = stream(seed, "theory", "risk")
    spec = _random_spec(rng, t["risk_n"], 2)
    nuisances = [np.array([1.0, 0.0]), np.array([2.0, 0.5]), np.array([0.5, -0.5])]
    risks = theory.check_glrt_bayes_optimal(spec, nuisances, t["risk_trials"], seed)
    glrt_risk = risks["glrt"][0]
    for name, (risk, se) in risks.items():
        if name != "glrt":
            add(f"bayes_risk_glrt_vs_{name}", glrt_risk - risk, 2 * se, glrt_risk <= risk + 2 * se)

    # unknown scale nuisance
    ks = theory.check_unknown_scale(t["scale_n"], trials=t["scale_trials"], seed=seed)
    add("unknown_scale_ks_pvalue", ks.pvalue, 0.01, ks.pvalue > 0.01)
    return rows
