"""Command-line front end: gen | train | fiction | adapt | ablate | verify-lemma.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (highest priority). The effective settings
are written into the JSON sidecar of every output.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import classifier as clf
from . import dataset as ds
from . import monotonicity as mono
from .attack import AttackConfig, build_source_fiction, epsilon_bound, save_fiction
from .dataset import LabeledDataset, ShiftSpec, load_csv, save_csv
from .errors import (InstabilityError, NonConvergenceError, SourceFictionError, StageError)
from .ot import SOLVERS
from .pipeline import (AdaptationConfig, ablate_epsilon, benchmark, format_report, prepare,
                       write_ablation_csv, write_report_csv)
from .seeding import derive_seed, rng_for

log = logging.getLogger("source_fiction")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 1, 2, 3
DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)

COMMON = {"seed": 0, "out": ".", "quiet": False}

DEFAULTS = {
    "gen": {
        "classes": 3, "per_class": 50, "dim": 2, "separation": 5.0, "sigma": 0.5,
        "rotation": 0.0, "translation": None, "scale": None, "permute_labels": False,
        "family": None,
    },
    "train": {
        "source": None, "test": None, "arch": None, "epochs": 300, "lr": 0.05,
        "batch_size": 32, "optimizer": "sgd", "holdout": 0.2,
    },
    "fiction": {
        "model": None, "targets": None, "epsilon": None, "alpha": None, "iterations": 50,
        "ball_norm": "l2", "allow_exceed": False,
    },
    "adapt": {
        "source": None, "target": None, "task": "task", "solvers": "emd", "repetitions": 1,
        "labeled_per_class": 10, "reg": None, "eta": None, "p": None, "mu": None,
        "outer_iter": None, "epsilon": 0.45, "iterations": 50, "ball_norm": "l2",
        "no_penalize_plain": False, "epochs": 300, "lr": 0.05, "batch_size": 32,
        "optimizer": "sgd", "arch": None,
    },
    "ablate": {
        "source": None, "target": None, "solver": "emd", "multipliers": None,
        "labeled_per_class": 10, "reg": None, "eta": None, "p": None, "mu": None,
        "outer_iter": None, "iterations": 50, "ball_norm": "l2", "no_penalize_plain": False,
        "epochs": 300, "lr": 0.05, "batch_size": 32, "optimizer": "sgd", "arch": None,
    },
    "verify-lemma": {
        "trials": 1000, "max_points": 8, "dim": 2, "multipliers": None, "scan_points": 8,
        "scan_trials": 200, "demo_crossing": False,
    },
}

# `gen --family crossing` fills in whatever the user did not set from the
# dataset-level preset, so the CLI and crossing_task() draw identical data
CROSSING_FAMILY = {
    "classes": ds.CROSSING_FAMILY["num_classes"], "dim": ds.CROSSING_FAMILY["dim"],
    "separation": ds.CROSSING_FAMILY["class_separation"],
    "sigma": ds.CROSSING_FAMILY["noise_sigma"], "rotation": ds.CROSSING_FAMILY["rotation"],
    "translation": list(ds.CROSSING_FAMILY["translation"]),
}


class UsageError(Exception):
    pass


def _floats(text):
    if text is None or isinstance(text, (list, tuple)):
        return None if text is None else [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    vals = _floats(text)
    return None if vals is None else [int(v) for v in vals]


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    p.add_argument("--config", default=S, help="JSON file with settings")
    p.add_argument("--out", default=S, help="output directory (default .)")
    p.add_argument("--quiet", action="store_true", default=S, help="print nothing but errors")


def _add_train_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=S)
    p.add_argument("--arch", default=S, help="hidden widths, e.g. 32,16")


def _add_solver_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--labeled-per-class", type=int, default=S)
    p.add_argument("--reg", type=float, default=S, help="entropic regularization")
    p.add_argument("--eta", type=float, default=S, help="class-regularizer weight")
    p.add_argument("--p", type=float, default=S, help="Lp-L1 exponent")
    p.add_argument("--mu", type=float, default=S, help="OTLin map ridge weight")
    p.add_argument("--outer-iter", type=int, default=S)
    p.add_argument("--iterations", type=int, default=S, help="attack iterations")
    p.add_argument("--ball-norm", choices=("l2", "linf"), default=S)
    p.add_argument("--no-penalize-plain", action="store_true", default=S,
                   help="drop the label penalty from the plain-OT baseline")


def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="source-fiction",
                                     description="Domain adaptation by transport to a source fiction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate source.csv and target.csv")
    _add_common(p)
    p.add_argument("--family", choices=("crossing",), default=S, help="use a preset task")
    p.add_argument("--classes", type=int, default=S)
    p.add_argument("--per-class", type=int, default=S)
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--separation", type=float, default=S)
    p.add_argument("--sigma", type=float, default=S)
    p.add_argument("--rotation", type=float, default=S, help="radians, first two axes")
    p.add_argument("--translation", default=S, help="comma-separated vector")
    p.add_argument("--scale", default=S, help="comma-separated per-axis factors")
    p.add_argument("--permute-labels", action="store_true", default=S)

    p = sub.add_parser("train", help="train the source classifier")
    _add_common(p)
    p.add_argument("--source", default=S, help="labeled source CSV")
    p.add_argument("--test", default=S, help="labeled test CSV (default: hold out part of source)")
    p.add_argument("--holdout", type=float, default=S)
    _add_train_flags(p)

    p = sub.add_parser("fiction", help="build the source fiction from labeled targets")
    _add_common(p)
    p.add_argument("--model", default=S)
    p.add_argument("--targets", default=S, help="labeled target CSV (input space)")
    p.add_argument("--epsilon", type=float, default=S, help="default: min(0.45, bound)")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--ball-norm", choices=("l2", "linf"), default=S)
    p.add_argument("--allow-exceed", action="store_true", default=S)

    p = sub.add_parser("adapt", help="run adaptation and write a report")
    _add_common(p)
    p.add_argument("--source", default=S)
    p.add_argument("--target", default=S)
    p.add_argument("--task", default=S, help="task name used in the report")
    p.add_argument("--solvers", default=S, help=f"comma-separated subset of {','.join(SOLVERS)}")
    p.add_argument("--repetitions", type=int, default=S)
    p.add_argument("--epsilon", type=float, default=S, help="attack radius before clamping")
    _add_solver_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="scan the attack radius in units of the bound")
    _add_common(p)
    p.add_argument("--source", default=S)
    p.add_argument("--target", default=S)
    p.add_argument("--solver", choices=SOLVERS, default=S)
    p.add_argument("--multipliers", default=S, help="default 0.25,0.5,1,2,4")
    _add_solver_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("verify-lemma", help="check the small-perturbation monotonicity property")
    _add_common(p)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--max-points", type=int, default=S)
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--multipliers", default=S, help="scan multipliers, default 0.25,0.5,1,2,4")
    p.add_argument("--scan-points", type=int, default=S)
    p.add_argument("--scan-trials", type=int, default=S)
    p.add_argument("--demo-crossing", action="store_true", default=S)
    return parser


def _flatten(doc, allowed, prefix=""):
    flat = {}
    for key, value in doc.items():
        name = key.replace("-", "_")
        if isinstance(value, dict) and name not in allowed:
            flat.update(_flatten(value, allowed, prefix=f"{prefix}{key}."))
            continue
        if name not in allowed:
            raise UsageError(f"unknown config key {prefix}{key!r}")
        flat[name] = value
    return flat


def resolve(command, ns):
    """Merge defaults, the config file and explicit flags (in that order)."""
    settings = dict(COMMON)
    settings.update(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    config_path = getattr(ns, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        settings.update(_flatten(doc, set(settings)))
    settings.update(given)
    if command == "gen" and settings.get("family") == "crossing":
        for key, value in CROSSING_FAMILY.items():
            if key not in given:
                settings[key] = value
    return settings


def _require(settings, *keys):
    for key in keys:
        if not settings.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")
        path = settings[key]
        if key in ("source", "target", "targets", "model", "test") and not os.path.exists(path):
            raise UsageError(f"{key} file not found: {path}")


def _out_dir(settings):
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory is not writable: {out}")
    return out


def _sidecar(path, settings, extra=None):
    doc = {"config": settings, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class _Printer:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args)


def _train_config(s, seed):
    return clf.TrainConfig(learning_rate=s["lr"], epochs=s["epochs"], batch_size=s["batch_size"],
                           seed=seed, optimizer=s["optimizer"])


def _arch(s, dim, classes):
    hidden = _ints(s.get("arch"))
    if hidden is None:
        return None
    return tuple([dim] + hidden + [classes])


def cmd_gen(s, say):
    out = _out_dir(s)
    seed = s["seed"]
    spec = ShiftSpec(s["dim"], s["rotation"], _floats(s["translation"]), _floats(s["scale"]),
                     s["permute_labels"])
    source, target = ds.make_task(seed, s["classes"], s["per_class"], s["dim"], s["separation"],
                                  s["sigma"], spec)
    save_csv(source, os.path.join(out, "source.csv"))
    save_csv(target, os.path.join(out, "target.csv"))
    _sidecar(os.path.join(out, "gen.json"), s, {"shift": asdict(spec)})
    say(f"wrote {source.n} source and {target.n} target rows to {out}")
    return EXIT_OK


def cmd_train(s, say):
    _require(s, "source")
    out = _out_dir(s)
    data = load_csv(s["source"])
    if s.get("test"):
        train_set, test_set = data, load_csv(s["test"], data.num_classes)
    else:
        frac = float(s["holdout"])
        if not 0 < frac < 1:
            raise UsageError("--holdout must lie in (0, 1)")
        rng = rng_for(s["seed"], "cli.holdout")
        order = rng.permutation(data.n)
        k = max(1, int(round(frac * data.n)))
        test_set = data.subset(np.sort(order[:k]))
        train_set = data.subset(np.sort(order[k:]))
    arch = _arch(s, data.dim, data.num_classes) or clf.default_arch(data.dim, data.num_classes)
    params = clf.train(train_set, list(arch), _train_config(s, derive_seed(s["seed"], "cli.train")))
    path = os.path.join(out, "model.json")
    params.save(path)
    acc = clf.accuracy(params, test_set)
    _sidecar(os.path.join(out, "model.meta.json"), s, {"test_accuracy": acc, "arch": list(arch)})
    say(f"test accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_fiction(s, say):
    _require(s, "model", "targets")
    out = _out_dir(s)
    params = clf.ClassifierParams.load(s["model"])
    data = load_csv(s["targets"], params.num_classes)
    if not data.fully_labeled:
        keep = np.flatnonzero(data.labeled_mask)
        say(f"using the {len(keep)} labeled rows of {data.n}")
        data = data.subset(keep)
    latent = LabeledDataset(clf.latent(params, data.features), data.labels, data.mass,
                            data.num_classes)
    bound = epsilon_bound(latent.features)
    eps = s["epsilon"] if s["epsilon"] is not None else min(0.45, bound)
    cfg = AttackConfig(eps, s["alpha"], s["iterations"], s["ball_norm"])
    result = build_source_fiction(params, latent, cfg, allow_exceed_bound=s["allow_exceed"])
    csv_path = os.path.join(out, "fiction.csv")
    save_fiction(result, cfg, csv_path, os.path.join(out, "fiction.json"),
                 {"config": s, "created": time.strftime("%Y-%m-%dT%H:%M:%S")})
    say(f"bound: {bound:.6g}")
    say(f"epsilon: {eps:.6g}")
    say(f"fiction classification rate: {result.classification_rate:.4f}")
    return EXIT_OK


def _solver_params(s, solver):
    from .pipeline import SOLVER_PARAMS
    return {k: s[k] for k in ("reg", "eta", "p", "mu", "outer_iter")
            if s.get(k) is not None and k in SOLVER_PARAMS[solver]}


def _base_config(s, solver, data):
    attack = AttackConfig(s.get("epsilon", 0.45), None, s["iterations"], s["ball_norm"])
    return AdaptationConfig(solver=solver, solver_params=_solver_params(s, solver), attack=attack,
                            labeled_per_class=s["labeled_per_class"], seed=s["seed"],
                            train=_train_config(s, 0), arch=_arch(s, data.dim, data.num_classes),
                            penalize_plain=not s["no_penalize_plain"])


def _load_pair(s):
    _require(s, "source", "target")
    source = load_csv(s["source"])
    target = load_csv(s["target"], source.num_classes)
    return source, target


def cmd_adapt(s, say):
    source, target = _load_pair(s)
    out = _out_dir(s)
    solvers = [v.strip() for v in str(s["solvers"]).split(",") if v.strip()]
    bad = [v for v in solvers if v not in SOLVERS]
    if bad or not solvers:
        raise UsageError(f"unknown solvers {bad}; choose from {', '.join(SOLVERS)}")
    rows = []
    reports = {}
    for solver in solvers:
        cfg = _base_config(s, solver, source)
        r, rep = benchmark([(s["task"], source, target)], [solver], s["repetitions"], s["seed"], cfg)
        rows.extend(r)
        reports.update({f"{k[0]}/{k[1]}/{k[2]}": v.to_dict() for k, v in rep.items()})
    write_report_csv(rows, os.path.join(out, "report.csv"))
    text = format_report(rows)
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    _sidecar(os.path.join(out, "report.json"), s, {"runs": reports})
    say(text.rstrip())
    if not all(rep["converged"]["fiction"] and rep["converged"]["plain"] for rep in reports.values()):
        log.error("a transport solve did not converge")
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_ablate(s, say):
    source, target = _load_pair(s)
    out = _out_dir(s)
    mults = _floats(s["multipliers"]) or list(DEFAULT_MULTIPLIERS)
    cfg = _base_config(s, s["solver"], source)
    rows = ablate_epsilon(source, target, cfg, mults, prepare(source, target, cfg))
    write_ablation_csv(rows, os.path.join(out, "ablation.csv"))
    _sidecar(os.path.join(out, "ablation.json"), s)
    for row in rows:
        say(f"m={row.multiplier:g}  eps={row.epsilon:.4g}  fiction rate={row.fiction_classification_rate:.3f}"
            f"  accuracy={row.adapted_accuracy:.3f}")
    return EXIT_OK


def demo_crossing():
    """Two points on a line, each paired with the other: a crossing pairing."""
    return mono.check_pairs(mono.Pairing(np.array([[0.0], [2.0]]), np.array([[2.0], [0.0]])))


def cmd_verify_lemma(s, say):
    if s["demo_crossing"]:
        report = demo_crossing()
        say(f"violation: cycle={list(report.cycle)} lhs={report.lhs:g} rhs={report.rhs:g}")
        say(report.to_json())
        return EXIT_FAILED
    out = _out_dir(s)
    if not 2 <= s["max_points"] <= 8:
        raise UsageError("--max-points must lie in 2..8")
    rng = rng_for(s["seed"], "cli.verify")
    violations = 0
    first = None
    for t in range(s["trials"]):
        n = int(rng.integers(2, s["max_points"] + 1))
        x, moved = mono.lemma_trial(n, s["dim"], rng)
        report = mono.check_cycles(mono.Pairing(x, moved))
        if report is not None:
            violations += 1
            first = first or report
    say(f"{violations} violations in {s['trials']} trials")
    if first is not None:
        say(first.to_json())

    mults = _floats(s["multipliers"]) or list(DEFAULT_MULTIPLIERS)
    points = rng_for(s["seed"], "cli.scan").normal(size=(s["scan_points"], s["dim"]))
    rows = mono.lemma_bound_sharpness_scan(points, mults, s["scan_trials"], s["seed"])
    mono.write_scan_csv(rows, os.path.join(out, "scan.csv"))
    _sidecar(os.path.join(out, "scan.json"), s, {"violations": violations})
    for row in rows:
        say(f"multiplier {row.multiplier:g}: violation rate {row.violation_rate:.4f}")
    inside = [row for row in rows if row.multiplier <= 1.0 and row.violation_rate > 0]
    return EXIT_OK if violations == 0 and not inside else EXIT_FAILED


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "fiction": cmd_fiction, "adapt": cmd_adapt,
            "ablate": cmd_ablate, "verify-lemma": cmd_verify_lemma}


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (NonConvergenceError, InstabilityError)):
        return EXIT_NONCONVERGENCE
    return EXIT_USAGE


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        settings = resolve(ns.command, ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if settings["quiet"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    say = _Printer(settings["quiet"])
    try:
        return COMMANDS[ns.command](settings, say)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SourceFictionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
