"""Flat ``section.key = value`` run configuration.

Every experiment has a table of defaults; a config file may override any of
them and nothing else. Values are coerced to the type of the default, lists
are comma separated, ``#`` starts a comment.
"""

import copy

EXPERIMENTS = ("dc-noise", "adaptive", "material", "theory")

_TRAIN_COMMON = {
    "train.alpha": (0.0, 1.0),
    "train.fake_prior_y": 0.5,
    "train.points_per_batch": 16,
    "train.replicates": 64,
    "train.pairing": "all-pairs",
    "train.estimator": "unbiased",
    "train.bandwidth": "median",
    "train.activation": "tanh",
    "train.optimizer": "adam",
    "train.lr": 0.003,
    "train.momentum": 0.9,
    "train.lr_final": 0.1,
    "train.bce_mode": "all",
    "train.resample": True,
    "train.warm_start": False,
    "train.finetune_steps": 1500,
    "train.finetune_lr": 0.001,
}

_EVAL_COMMON = {
    "eval.trials": 10000,
    "eval.cap": 0.05,
    "generate.points": 8,
    "generate.replicates": 4,
}

DEFAULTS = {
    "dc-noise": {
        "model.n": 16,
        "model.noise": "gaussian",
        "model.eps": 0.1,
        "model.var_out": 100.0,
        **_TRAIN_COMMON,
        "train.hidden": (64, 64),
        "train.steps": 4000,
        **_EVAL_COMMON,
        "eval.nuisances": (0.5, 0.75, 1.0),
        "eval.detectors": ("glrt_dc", "net", "cfarnet"),
    },
    "adaptive": {
        "model.n": 8,
        "model.n_sec": 8,
        "model.cond_max": 100.0,
        "model.amp_max": 3.0,
        "model.cov_seed": 0,
        **_TRAIN_COMMON,
        "train.hidden": (64,),
        "train.steps": 2500,
        **_EVAL_COMMON,
        "eval.nuisances": (1.0, 50.0),
        "eval.detectors": ("amf", "kelly", "lamf", "net", "cfarnet"),
        "eval.lamf_loading": 0.03,
    },
    "material": {
        "model.materials": 3,
        "model.bands": 10,
        "model.amplitude": 0.05,
        "model.material_seed": 0,
        **_TRAIN_COMMON,
        "train.alpha": (0.0, 0.1),
        "train.warm_start": True,
        "train.hidden": (64, 64),
        "train.steps": 2500,
        **_EVAL_COMMON,
        "eval.nuisances": (),
        "eval.detectors": ("net", "cfarnet"),
    },
    "theory": {
        "theory.identity_n": 8,
        "theory.identity_d_r": 2,
        "theory.identity_instances": 100,
        "theory.asym_n": 100,
        "theory.asym_trials": 100000,
        "theory.asym_signal": 0.3,
        "theory.fisher_specs": 20,
        "theory.risk_n": 12,
        "theory.risk_trials": 20000,
        "theory.scale_n": 100,
        "theory.scale_trials": 20000,
        "theory.rank_deficient": False,
    },
}

TOP_LEVEL = {"experiment": "dc-noise", "seed": 0}


class ConfigError(ValueError):
    pass


def _coerce(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            kind = type(default[0]) if default else _guess
            return tuple(kind(v) for v in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _guess(value):
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def parse(text):
    """``{key: raw string}`` from config text; duplicate keys are an error."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def resolve(entries, seed=None, env_seed=None):
    """Merge raw entries over the defaults of their experiment.

    Seed precedence: explicit ``seed`` argument, then the config file, then
    ``env_seed``, then 0.
    """
    experiment = entries.get("experiment", TOP_LEVEL["experiment"]).strip()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    table = {**TOP_LEVEL, **copy.deepcopy(DEFAULTS[experiment])}
    table["experiment"] = experiment
    unknown = sorted(set(entries) - set(table))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {experiment}: {', '.join(unknown)}")
    for key, raw in entries.items():
        if key != "experiment":
            table[key] = _coerce(key, raw, table[key])
    if seed is not None:
        table["seed"] = int(seed)
    elif "seed" not in entries and env_seed not in (None, ""):
        table["seed"] = _coerce("CFARDET_SEED", env_seed, 0)
    if table["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    return table


def load(path, seed=None, env_seed=None):
    with open(path) as fh:
        return resolve(parse(fh.read()), seed, env_seed)


def section(table, name):
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in table.items() if k.startswith(prefix)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def dump(table):
    """Canonical text form; ``resolve(parse(dump(t))) == t``."""
    keys = ["experiment", "seed"] + sorted(k for k in table if k not in TOP_LEVEL)
    return "".join(f"{k} = {_format(table[k])}\n" for k in keys)
