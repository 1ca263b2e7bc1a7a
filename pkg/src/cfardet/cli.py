"""``cfardet`` command line: train, evaluate, theory, generate.

Exit codes: 0 success, 1 a hard check failed, 2 bad configuration or
missing input, 3 training diverged.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__, config, experiments
from .evaluation import estimate_surface, write_reports
from .model_sim import save_batch_csv
from .training import TrainingDivergedError, build_batch, train

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


def _fail(code, message):
    print(f"cfardet: error: {message}", file=sys.stderr)
    return code


def _prepare(args, default_experiment):
    env_seed = os.environ.get("CFARDET_SEED")
    if args.config:
        table = config.load(args.config, args.seed, env_seed)
    else:
        table = config.resolve({"experiment": default_experiment}, args.seed, env_seed)
    out = args.out or os.path.join("runs", table["experiment"])
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved_config.txt"), "w") as fh:
        fh.write(f"# cfardet {__version__}\n")
        fh.write(config.dump(table))
    return table, out


def _train_one(job):
    tag, cfg, table, out, init = job
    model = experiments.build_model(table)
    fmap = experiments.feature_map(table, model)
    det, _ = train(cfg, model, fmap, os.path.join(out, f"{tag}_log.csv"), tag=tag, init=init)
    det.save(os.path.join(out, f"{tag}.det"))
    return tag, det.final_bce, det.final_penalty, det.network


def _run_jobs(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            return list(ex.map(_train_one, jobs))
    return [_train_one(job) for job in jobs]


def cmd_train(args):
    table, out = _prepare(args, "dc-noise")
    if table["experiment"] == "theory":
        return _fail(EXIT_INPUT, "the theory experiment has nothing to train")
    configs = experiments.train_configs(table)
    cold = [(tag, cfg, table, out, None) for tag, cfg, warm in configs if not warm]
    results = _run_jobs(cold, args.jobs)
    warm = [(tag, cfg) for tag, cfg, w in configs if w]
    if warm:
        # penalized detectors start from the NET weights of this run
        net = next(r[3] for r in results if r[0] == "net")
        results += _run_jobs([(tag, cfg, table, out, net) for tag, cfg in warm], args.jobs)
    for tag, bce, pen, _ in results:
        print(f"{tag}: final bce {bce:.4f} penalty {pen:.4f} -> {os.path.join(out, tag + '.det')}")
    return EXIT_OK


def cmd_evaluate(args):
    table, out = _prepare(args, "dc-noise")
    if table["experiment"] == "theory":
        return _fail(EXIT_INPUT, "use the theory subcommand for the theory experiment")
    model = experiments.build_model(table)
    nuisances = experiments.eval_nuisances(table, model)
    search_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else out
    dets = {}
    for name in table["eval.detectors"]:
        try:
            dets[name] = experiments.resolve_detector(name, table, model, out)
        except FileNotFoundError:
            try:
                dets[name] = experiments.resolve_detector(name, table, model, search_dir)
            except FileNotFoundError as exc:
                return _fail(EXIT_INPUT, str(exc))
    surfaces = {}
    for name, det in dets.items():
        label = os.path.basename(name)
        label = label[:-4] if label.endswith(".det") else label
        surfaces[label] = estimate_surface(det, model, nuisances, table["eval.trials"],
                                           table["seed"], args.jobs)
    paths = write_reports(surfaces, out, table["eval.cap"])
    print("wrote " + ", ".join(sorted(paths.values())))
    return EXIT_OK


def cmd_theory(args):
    table, out = _prepare(args, "theory")
    if table["experiment"] != "theory":
        return _fail(EXIT_INPUT, f"theory needs experiment = theory, got {table['experiment']}")
    rows = experiments.run_theory(table)
    path = os.path.join(out, "theory_report.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["check_name", "statistic", "threshold", "pass"])
        for name, stat, thr, ok in rows:
            writer.writerow([name, repr(stat), repr(thr), int(ok)])
    failed = [r[0] for r in rows if not r[3]]
    for name, stat, thr, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {stat:.4g} (threshold {thr:.4g})")
    if failed:
        return _fail(EXIT_CHECK, f"{len(failed)} theory check(s) failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_generate(args):
    table, out = _prepare(args, "dc-noise")
    if table["experiment"] == "theory":
        return _fail(EXIT_INPUT, "the theory experiment has no observation model")
    model = experiments.build_model(table)
    _, cfg, _ = experiments.train_configs(table)[0]
    cfg.points_per_batch = table["generate.points"]
    cfg.replicates = table["generate.replicates"]
    batch = build_batch(cfg, model, table["seed"], "generate")
    path = os.path.join(out, "batch.csv")
    save_batch_csv(batch, path)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="cfardet", description="Learned CFAR detectors and checks.")
    parser.add_argument("--version", action="version", version=f"cfardet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, text in [
        ("train", cmd_train, "train NET / CFARnet detectors"),
        ("evaluate", cmd_evaluate, "Monte Carlo ROC, FPR and CFAR reports"),
        ("theory", cmd_theory, "numerical checks of the GLRT theory"),
        ("generate", cmd_generate, "dump a batch of simulated observations as CSV"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="concurrent workers")
        p.add_argument("--out", help="output directory (default runs/<experiment>)")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail(EXIT_INPUT, "--jobs must be >= 1")
    try:
        return args.func(args)
    except (config.ConfigError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except TrainingDivergedError as exc:
        return _fail(EXIT_DIVERGED, str(exc))
    except ValueError as exc:
        # construction errors, e.g. a rank-deficient design
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
