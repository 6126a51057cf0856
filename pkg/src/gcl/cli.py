"""Command-line front end: ``gcl gen-data``, ``gcl run`` and ``gcl selfcheck``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SbmParams, atomic_write_text, default_data_root, generate_sbm, load_dataset, save_dataset
from .errors import ConfigError, GCLError
from .harness import MODES, TrainConfig, aa, af, run_trial, summarize
from .childnet import VARIANTS
from .selfcheck import run_selfcheck

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("gcl")

# flat config keys -> expected JSON type; flags use the same names with dashes
RUN_KEYS: dict[str, type | tuple] = {
    "data": str,
    "variant": str,
    "mode": str,
    "per_task": int,
    "trials": int,
    "seed": int,
    "epochs": int,
    "controller_steps": int,
    "alpha": (int, float),
    "beta": (int, float),
    "buffer": int,
    "disable_controller": bool,
    "disable_replay": bool,
    "out": str,
    "parallel_trials": int,
    "force": bool,
    # file-only keys
    "class_order": list,
    "add_values": list,
    "del_values": list,
    "lr": (int, float),
    "controller_lr": (int, float),
    "controller_batch": int,
    "hidden": list,
    "min_class_size": int,
    "ego_seeds": int,
    "ego_hops": int,
    "ego_budget": int,
    "split": list,
}
RENAMED = {"per_task": "classes_per_task", "buffer": "buffer_capacity"}
NOT_TRAIN = {"data", "out", "parallel_trials", "force", "disable_controller", "disable_replay"}


# ---------------------------------------------------------------- parsing


def _flag_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcl", description="Continual graph learning experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic SBM dataset directory")
    gen.add_argument("--out", required=True)
    gen.add_argument("--classes", type=int, default=6)
    gen.add_argument("--nodes-per-class", type=int, default=100)
    gen.add_argument("--p-in", type=float, default=0.05)
    gen.add_argument("--p-out", type=float, default=0.005)
    gen.add_argument("--feature-dim", type=int, default=16)
    gen.add_argument("--signal", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--per-task", type=int, default=None,
                     help="classes per task recorded as the dataset's default schedule")
    gen.add_argument("--force", action="store_true")

    run = sub.add_parser("run", help="run continual-learning trials")
    run.add_argument("--config")
    run.add_argument("--data")
    run.add_argument("--variant", choices=VARIANTS)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--per-task", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--controller-steps", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--beta", type=float)
    run.add_argument("--buffer", type=int)
    run.add_argument("--class-order", type=_flag_list)
    run.add_argument("--add-values", type=_flag_list)
    run.add_argument("--del-values", type=_flag_list)
    run.add_argument("--disable-controller", action="store_const", const=True)
    run.add_argument("--disable-replay", action="store_const", const=True)
    run.add_argument("--out")
    run.add_argument("--parallel-trials", type=int)
    run.add_argument("--force", action="store_const", const=True)

    chk = sub.add_parser("selfcheck", help="gradient, reservoir and resize diagnostics")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def _check_type(key: str, value):
    expected = RUN_KEYS[key]
    if isinstance(value, bool) and expected is not bool:
        raise ConfigError(f"{key}: expected {_type_name(expected)}, got a boolean")
    if not isinstance(value, expected):
        raise ConfigError(f"{key}: expected {_type_name(expected)}, got {type(value).__name__}")


def _type_name(t) -> str:
    return "number" if isinstance(t, tuple) else {str: "string", int: "integer", bool: "boolean",
                                                  list: "array"}[t]


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = sorted(set(raw) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    for key, value in raw.items():
        _check_type(key, value)
    return raw


@dataclass
class RunSettings:
    train: TrainConfig
    data: str
    out: str
    parallel_trials: int
    force: bool
    disable_controller: bool
    disable_replay: bool

    def to_dict(self) -> dict:
        d = {"data": self.data, "out": self.out, "parallel_trials": self.parallel_trials,
             "disable_controller": self.disable_controller, "disable_replay": self.disable_replay}
        d.update(self.train.to_dict())
        return d


def resolve_run(args: argparse.Namespace) -> tuple[dict, RunSettings]:
    """Merge defaults < config file < explicit flags. Returns (raw merged keys, settings)."""
    merged = load_config_file(args.config) if args.config else {}
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if "data" not in merged:
        raise ConfigError("data: a dataset directory or name is required (--data)")
    parallel = merged.get("parallel_trials", 1)
    if parallel < 1:
        raise ConfigError(f"parallel_trials: must be positive, got {parallel}")

    fields = {RENAMED.get(k, k): v for k, v in merged.items() if k not in NOT_TRAIN}
    if merged.get("disable_controller"):
        fields["controller_steps"] = 0
    if merged.get("disable_replay"):
        fields.update(alpha=0.0, beta=0.0, buffer_capacity=0)
    try:
        train = TrainConfig(**fields)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None
    settings = RunSettings(
        train=train, data=str(merged["data"]), out=str(merged.get("out", "runs/latest")),
        parallel_trials=int(parallel), force=bool(merged.get("force", False)),
        disable_controller=bool(merged.get("disable_controller", False)),
        disable_replay=bool(merged.get("disable_replay", False)))
    return merged, settings


def resolve_data_dir(data: str) -> Path:
    path = Path(data)
    if path.is_dir():
        return path
    candidate = default_data_root() / data
    if candidate.is_dir():
        return candidate
    raise FileNotFoundError(f"dataset not found: {data} (also looked in {candidate})")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not args.force:
        print(f"gcl: refusing to overwrite non-empty {out} (use --force)", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        params = SbmParams(args.classes, args.nodes_per_class, args.p_in, args.p_out,
                           args.feature_dim, args.signal, args.seed)
    except ValueError as exc:
        raise ConfigError(f"gen-data: {exc}") from None
    if args.per_task is not None and args.per_task < 1:
        raise ConfigError(f"per_task: must be positive, got {args.per_task}")
    bundle = generate_sbm(params)
    bundle.metadata["generator"] = {
        "classes": params.classes, "nodes_per_class": params.nodes_per_class, "p_in": params.p_in,
        "p_out": params.p_out, "feature_dim": params.feature_dim, "signal": params.signal,
        "seed": params.seed}
    if args.per_task is not None:
        bundle.metadata["classes_per_task"] = args.per_task
    save_dataset(bundle, out)
    c = bundle.counts()
    print(f"wrote {out}: {c['nodes']} nodes, {c['edges']} edges, {c['features']} features, "
          f"{c['classes']} classes")
    return EXIT_OK


@dataclass
class TrialOutcome:
    """Picklable summary of one trial (the full result holds autodiff closures)."""
    seed: int
    R: np.ndarray
    R_task: np.ndarray
    R_class: np.ndarray
    classes: list
    widths: list
    actions: list

    @property
    def aa(self) -> float:
        return aa(self.R)

    @property
    def af(self) -> float:
        return af(self.R)


def run_one(bundle, config: TrainConfig, seed: int) -> TrialOutcome:
    res = run_trial(bundle, config, seed)
    return TrialOutcome(
        seed=seed, R=res.R, R_task=res.R_task, R_class=res.R_class,
        classes=[list(t.classes) for t in res.tasks],
        widths=[list(r.widths) for r in res.reports],
        actions=[None if r.chosen_actions is None else list(r.chosen_actions) for r in res.reports])


def format_r_matrix(R: np.ndarray) -> str:
    """Lower-triangular CSV: row i lists R[i][0..i] at full float precision."""
    return "".join(",".join(repr(float(v)) for v in R[i, :i + 1]) + "\n" for i in range(R.shape[0]))


def write_outputs(out: Path, settings: RunSettings, outcomes: list[TrialOutcome]):
    out.mkdir(parents=True, exist_ok=True)
    cfg = settings.train
    rows = ["seed,task_id,classes,accuracy,accuracy_task_il,accuracy_class_il\n"]
    for o in outcomes:
        tdir = out / f"trial_{o.seed}"
        tdir.mkdir(exist_ok=True)
        atomic_write_text(tdir / "r_matrix.csv", format_r_matrix(o.R))
        atomic_write_text(tdir / "r_matrix_task.csv", format_r_matrix(o.R_task))
        atomic_write_text(tdir / "r_matrix_class.csv", format_r_matrix(o.R_class))
        for j, classes in enumerate(o.classes):
            accs = (o.R[-1, j], o.R_task[-1, j], o.R_class[-1, j])
            rows.append(f"{o.seed},{j},{' '.join(map(str, classes))},"
                        + ",".join(repr(float(a)) for a in accs) + "\n")
    atomic_write_text(out / "per_task_accuracy.csv", "".join(rows))
    metrics = {
        "mode": cfg.mode,
        "variant": cfg.variant,
        **summarize(outcomes),
        "trials": [{"seed": o.seed, "aa": o.aa, "af": o.af, "widths": o.widths, "actions": o.actions,
                    "classes": o.classes} for o in outcomes],
    }
    atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2) + "\n")


def cmd_run(args) -> int:
    merged, settings = resolve_run(args)
    out = Path(settings.out)
    try:
        data_dir = resolve_data_dir(settings.data)
        bundle = load_dataset(data_dir)
    except (FileNotFoundError, GCLError) as exc:
        print(f"gcl: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    cfg = settings.train
    if "per_task" not in merged and "classes_per_task" in bundle.metadata:
        cfg = settings.train = TrainConfig(**{**cfg.to_dict(),
                                              "classes_per_task": int(bundle.metadata["classes_per_task"])})
    if (out / "metrics.json").exists() and not settings.force:
        print(f"gcl: {out} already holds results (use --force)", file=sys.stderr)
        return EXIT_RUNTIME
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", json.dumps(settings.to_dict(), indent=2) + "\n")

    seeds = [cfg.seed + k for k in range(cfg.trials)]
    if settings.parallel_trials > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=settings.parallel_trials) as pool:
            outcomes = list(pool.map(run_one, [bundle] * len(seeds), [cfg] * len(seeds), seeds))
    else:
        outcomes = [run_one(bundle, cfg, s) for s in seeds]
    write_outputs(out, settings, outcomes)
    s = summarize(outcomes)
    print(f"{cfg.variant} {cfg.mode}-IL over {len(seeds)} trial(s): "
          f"AA {100 * s['aa']['mean']:.2f} +/- {100 * s['aa']['std']:.2f}  "
          f"AF {100 * s['af']['mean']:.2f} +/- {100 * s['af']['std']:.2f}  -> {out}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    report = run_selfcheck(corrupt=args.corrupt, seed=args.seed)
    for line in report.lines():
        print(line)
    if report.ok:
        print("selfcheck: all checks passed")
        return EXIT_OK
    print(f"selfcheck: {len(report.failures)} failure(s): {', '.join(report.failures)}", file=sys.stderr)
    return EXIT_RUNTIME


COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run, "selfcheck": cmd_selfcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"gcl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers every failure
        log.debug("run failed", exc_info=True)
        print(f"gcl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
