"""Command-line front end: generate targets and data, train, bench, export.

Exit codes: 0 success, 1 usage or config error, 2 numerical abort during
training, 3 bench sweep finished with some failed cells.

Every command writes a manifest next to its outputs recording the resolved
options; re-running with those options reproduces the artifacts (timing
fields are the one documented exception — they record wall-clock facts, not
derivable content).  The default output directory is ``runs/``, overridable
with the DFALEARN_OUT environment variable or ``--out-dir``.
"""

import argparse
from dataclasses import dataclass
import json
import os
from pathlib import Path
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dfalearn import __version__
from dfalearn.automata import (
    Alphabet,
    DfaFormatError,
    dfa_accepts,
    dfa_from_json,
    dfa_to_json,
    export_dot,
    hopcroft_minimize,
    random_dfa,
)
from dfalearn.data import (
    DatasetBundle,
    DatasetFormatError,
    GenerationError,
    dataset_from_jsonl,
    dataset_to_jsonl,
    make_bundle,
)
from dfalearn.evaluation import accuracy, extract_dfa, weight_count
from dfalearn.harness import (
    RANDOM_EVAL_SIZE,
    RANDOM_TRAIN_SIZES,
    TOMITA_LENGTHS,
    TOMITA_SET_SIZES,
    _noisy_fit_window,
    ablate_label_noise,
    belief_noise,
    bench_random,
    bench_tomita,
    corrupt_bundle,
    tomita_bundle,
    write_bench_outputs,
)
from dfalearn.training import (
    DivergenceError,
    TemperatureSchedule,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    save_history,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_PARTIAL = 3

OUT_DIR_ENV = "DFALEARN_OUT"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here reserves 2 for
    numerical aborts, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class ExperimentConfig:
    """One resolved experiment: exactly one target, plus all knobs."""

    tomita: int | None = None
    dfa_file: str | None = None
    data_dir: str | None = None
    train_size: int | None = None
    dev_size: int | None = None
    test_size: int | None = None
    len_train: int = TOMITA_LENGTHS[0]
    len_dev: int = TOMITA_LENGTHS[1]
    len_test: int = TOMITA_LENGTHS[2]
    flip: float = 0.0
    symbol_noise: float = 0.0
    q_max: int = 10
    seed: int = 0
    data_seed: int | None = None
    n_seeds: int = 5
    best_k: int = 5
    out_dir: str | None = None

    def __post_init__(self):
        targets = [t for t in (self.tomita, self.dfa_file, self.data_dir) if t is not None]
        if len(targets) != 1:
            raise ValueError("exactly one of --tomita / --dfa / --data is required")
        if self.tomita is not None and not 1 <= self.tomita <= 7:
            raise ValueError("--tomita takes a language id in 1..7")
        for name in ("dfa_file", "data_dir"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ValueError(f"{path} does not exist")

    def resolved_out_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_DIR_ENV, "runs"))


def _default_out_dir(args) -> Path:
    out = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV, "runs")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, command: str, options: dict, outputs: list[str]):
    doc = {
        "command": command,
        "version": __version__,
        "options": {k: v for k, v in sorted(options.items()) if not callable(v)},
        "outputs": outputs,
    }
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _train_config_from(args, mode: str = "crisp") -> TrainConfig:
    if args.fit_floor is None:  # default: adapt the fit window to the flip rate
        floor, ceiling = _noisy_fit_window(getattr(args, "flip", 0.0))
    elif args.fit_floor == 0:
        floor, ceiling = None, None
    else:
        floor, ceiling = args.fit_floor, None
    return TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.epochs,
        batch_size=None if args.batch_size == 0 else args.batch_size,
        mode=mode,
        init_permutation_bias=args.perm_bias,
        restarts=args.restarts,
        restart_below=floor,
        restart_above=ceiling,
        stop_at_first_fit=args.first_fit,
        rng_seed=args.seed if hasattr(args, "seed") else 0,
    )


def _schedule_from(args) -> TemperatureSchedule:
    return TemperatureSchedule(start=args.tau_start, decay=args.tau_decay, floor=args.tau_floor)


def _add_train_flags(parser, q_max_default=10):
    group = parser.add_argument_group("training")
    group.add_argument("--qmax", type=int, default=q_max_default, dest="q_max",
                       help="state budget of the relaxed automaton")
    group.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    group.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    group.add_argument("--batch-size", type=int, default=TrainConfig.batch_size,
                       help="minibatch size; 0 means full batch")
    group.add_argument("--restarts", type=int, default=TrainConfig.restarts)
    group.add_argument("--fit-floor", type=float, default=None,
                       help="train accuracy under which an attempt is retried "
                            "(default adapts to --flip; 0 disables)")
    group.add_argument("--first-fit", action="store_true",
                       help="return the first fitting attempt instead of the smallest")
    group.add_argument("--perm-bias", type=float, default=TrainConfig.init_permutation_bias)
    group.add_argument("--tau-start", type=float, default=TemperatureSchedule.start)
    group.add_argument("--tau-decay", type=float, default=TemperatureSchedule.decay)
    group.add_argument("--tau-floor", type=float, default=TemperatureSchedule.floor)


def _add_data_flags(parser):
    group = parser.add_argument_group("dataset")
    group.add_argument("--train-size", type=int, default=None)
    group.add_argument("--dev-size", type=int, default=None)
    group.add_argument("--test-size", type=int, default=None)
    group.add_argument("--len-train", type=int, default=TOMITA_LENGTHS[0])
    group.add_argument("--len-dev", type=int, default=TOMITA_LENGTHS[1])
    group.add_argument("--len-test", type=int, default=TOMITA_LENGTHS[2])
    group.add_argument("--flip", type=float, default=0.0, help="fraction of train labels flipped")
    group.add_argument("--symbol-noise", type=float, default=0.0,
                       help="Gaussian variance on one-hot symbols; yields belief traces")
    group.add_argument("--data-seed", type=int, default=None,
                       help="dataset seed (defaults to a per-target constant)")


def _bundle_from_args(args) -> tuple[DatasetBundle, int]:
    """(bundle, alphabet size) for train-style commands."""
    if args.tomita is not None:
        defaults = TOMITA_SET_SIZES[args.tomita]
        sizes = (
            args.train_size or defaults[0],
            args.dev_size or defaults[1],
            args.test_size or defaults[2],
        )
        bundle = tomita_bundle(
            args.tomita,
            rng_seed=args.data_seed,
            flip_fraction=args.flip,
            symbol_variance=args.symbol_noise,
            sizes=sizes,
            lengths=(args.len_train, args.len_dev, args.len_test),
        )
        return bundle, 2
    if args.dfa is not None:
        target = dfa_from_json(Path(args.dfa).read_text())
        alphabet_size = target.alphabet.size
        sizes = (
            args.train_size or RANDOM_TRAIN_SIZES.get(alphabet_size, 3400),
            args.dev_size or RANDOM_EVAL_SIZE,
            args.test_size or RANDOM_EVAL_SIZE,
        )
        root = args.data_seed if args.data_seed is not None else 2026
        bundle = make_bundle(
            lambda trace: dfa_accepts(target, trace),
            alphabet_size,
            *sizes,
            args.len_train,
            args.len_dev,
            args.len_test,
            rng_seed=root,
            description=Path(args.dfa).stem,
        )
        bundle = corrupt_bundle(bundle, root, args.flip, args.symbol_noise, alphabet_size)
        return bundle, alphabet_size
    data_dir = Path(args.data)
    splits = {}
    for split in ("train", "dev", "test"):
        path = data_dir / f"{split}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        splits[split] = dataset_from_jsonl(path.read_text())
    meta_path = data_dir / "manifest.json"
    metadata = json.loads(meta_path.read_text()).get("options", {}) if meta_path.exists() else {}
    bundle = DatasetBundle(metadata=metadata, **splits)
    first = bundle.train[0]
    alphabet_size = first.beliefs.shape[1] if first.is_belief else metadata.get(
        "alphabet_size", max(max(s.symbols, default=0) for s in bundle.train) + 1
    )
    return bundle, int(alphabet_size)


# --- subcommands -------------------------------------------------------------

def cmd_gen_dfa(args) -> int:
    if args.states < 1 or args.symbols < 1:
        raise ValueError("--states and --symbols must be positive")
    dfa = random_dfa(args.states, Alphabet(args.symbols), rng_seed=args.seed)
    out_dir = _default_out_dir(args)
    name = args.name or f"dfa-{args.states}-{args.symbols}-{args.seed}"
    dfa_path = out_dir / f"{name}.json"
    dfa_path.write_text(dfa_to_json(dfa))
    minimized = hopcroft_minimize(dfa)
    _write_manifest(
        out_dir / f"{name}_manifest.json",
        "gen-dfa",
        {"states": args.states, "symbols": args.symbols, "seed": args.seed,
         "minimized_states": minimized.num_states},
        [dfa_path.name],
    )
    print(f"wrote {dfa_path} (minimal size {minimized.num_states})")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    config = ExperimentConfig(
        tomita=args.tomita,
        dfa_file=args.dfa,
        data_dir=None,
        flip=args.flip,
        symbol_noise=args.symbol_noise,
        data_seed=args.data_seed,
    )
    bundle, alphabet_size = _bundle_from_args(args)
    out_dir = _default_out_dir(args)
    outputs = []
    for split in ("train", "dev", "test"):
        path = out_dir / f"{split}.jsonl"
        path.write_text(dataset_to_jsonl(getattr(bundle, split)))
        outputs.append(path.name)
    options = dict(vars(args))
    options.pop("func", None)
    options["alphabet_size"] = alphabet_size
    options.update(bundle.metadata)
    _write_manifest(out_dir / "manifest.json", "gen-data", options, outputs)
    sizes = tuple(len(getattr(bundle, s)) for s in ("train", "dev", "test"))
    print(f"wrote {sizes[0]}/{sizes[1]}/{sizes[2]} traces to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    ExperimentConfig(  # target validation only; raises toward exit 1
        tomita=args.tomita, dfa_file=args.dfa, data_dir=args.data,
        flip=args.flip, symbol_noise=args.symbol_noise, q_max=args.q_max,
        seed=args.seed, data_seed=args.data_seed, out_dir=args.out_dir,
    )
    mode = "belief" if args.symbol_noise else "crisp"
    bundle, alphabet_size = _bundle_from_args(args)
    if bundle.train and bundle.train[0].is_belief:
        mode = "belief"
    config = _train_config_from(args, mode)
    schedule = _schedule_from(args)
    out_dir = _default_out_dir(args)

    start_state = None
    if args.resume:
        params, optimizer, epoch, _, _ = load_checkpoint(args.resume)
        start_state = (params, optimizer, epoch)

    try:
        result = train(bundle, args.q_max, config, schedule,
                       alphabet_size=alphabet_size, start_state=start_state)
    except DivergenceError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    dfa = extract_dfa(result.params)
    tau = schedule.value(max(result.epochs_run - 1, 0))
    report = {
        "seed": config.rng_seed,
        "q_max": args.q_max,
        "alphabet_size": alphabet_size,
        "train_acc": accuracy(result.params, bundle.train, tau=tau),
        "dev_acc": accuracy(result.params, bundle.dev, tau=tau),
        "test_acc": accuracy(result.params, bundle.test, tau=tau),
        "train_acc_dfa": accuracy(dfa, bundle.train),
        "dev_acc_dfa": accuracy(dfa, bundle.dev),
        "test_acc_dfa": accuracy(dfa, bundle.test),
        "q_hat": dfa.num_states,
        "weights": weight_count(args.q_max, alphabet_size),
        "epochs_run": result.epochs_run,
        "attempts": result.attempts,
        "stopped_early": result.stopped_early,
    }
    save_checkpoint(out_dir / "checkpoint.json", result.params, result.optimizer,
                    epoch=result.epochs_run, tau=tau)
    save_history(out_dir / "history.csv", result.history)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out_dir / "timing.json").write_text(json.dumps({"seconds": result.seconds}) + "\n")
    options = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(out_dir / "train_manifest.json", "train", options,
                    ["checkpoint.json", "history.csv", "report.json"])
    print(f"test acc {report['test_acc_dfa']:.4f}  states {report['q_hat']}  "
          f"(epochs {result.epochs_run}, attempts {result.attempts})")
    return EXIT_OK


def cmd_bench(args) -> int:
    out_dir = _default_out_dir(args)
    if args.first_fit is None:
        # exact minimal sizes matter for the Tomita tables; the big-q_max
        # sweeps only need a fitting machine, so they stop at the first one
        args.first_fit = args.suite in ("random", "ablate-noise")
    config = _train_config_from(args)
    if args.suite == "tomita":
        languages = _parse_ints(args.langs)
        q_max = args.q_max if args.q_max else ({1: 30} if args.flip else {})
        q_map = {l: (q_max if isinstance(q_max, int) else q_max.get(l, 10)) for l in languages}
        rows, summary = bench_tomita(
            languages=languages, n_seeds=args.seeds, q_max=q_map,
            flip_fraction=args.flip, config=config, workers=args.workers, keep_going=True,
        )
        name = args.name or ("tomita" if not args.flip else f"tomita_flip{args.flip:g}")
    elif args.suite == "random":
        rows, summary = bench_random(
            n_targets=args.targets, num_states=args.states, alphabet_size=args.symbols,
            q_max=args.q_max or 100, n_seeds=args.seeds, best_k=args.best_k,
            root_seed=args.data_seed if args.data_seed is not None else 2026,
            config=config, workers=args.workers, keep_going=True,
        )
        name = args.name or f"random_{args.states}_{args.symbols}"
    elif args.suite == "ablate-noise":
        rows, summary = ablate_label_noise(
            language=args.lang, rates=_parse_floats(args.rates),
            q_max=args.q_max or 200, n_seeds=args.seeds, config=config,
            workers=args.workers, keep_going=True,
        )
        name = args.name or f"ablate_noise_t{args.lang}"
    else:  # belief-noise
        rows, summary = belief_noise(
            language=args.lang, variances=_parse_floats(args.variances),
            q_max=args.q_max or 10, n_seeds=args.seeds, config=config,
            workers=args.workers, keep_going=True,
        )
        name = args.name or f"belief_noise_t{args.lang}"

    failures = [r for r in rows if r.get("error")]
    options = {k: v for k, v in vars(args).items() if k != "func"}
    write_bench_outputs(out_dir, name, rows, summary,
                        {"command": f"bench {args.suite}", "options": options,
                         "failures": failures, "version": __version__})
    print(json.dumps(summary, indent=2))
    if failures:
        print(f"{len(failures)} cells failed; see manifest", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_export(args) -> int:
    params, _, _, _, alphabet = load_checkpoint(args.checkpoint)
    dfa = extract_dfa(params, alphabet=alphabet, minimize=not args.no_minimize)
    out_dir = _default_out_dir(args)
    stem = args.name or "extracted"
    dot_path = out_dir / f"{stem}.dot"
    json_path = out_dir / f"{stem}.json"
    dot_path.write_text(export_dot(dfa))
    json_path.write_text(dfa_to_json(dfa))
    print(f"wrote {dot_path} and {json_path} ({dfa.num_states} states)")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_target_flags(parser, with_data=True):
    group = parser.add_argument_group("target")
    group.add_argument("--tomita", type=int, default=None, metavar="N",
                       help="Tomita language id (1..7)")
    group.add_argument("--dfa", type=str, default=None, metavar="FILE",
                       help="target machine as a JSON file")
    if with_data:
        group.add_argument("--data", type=str, default=None, metavar="DIR",
                           help="directory holding train/dev/test.jsonl")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfalearn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"dfalearn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dfa", help="write a random target machine", parents=[])
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--symbols", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_gen_dfa)

    p = sub.add_parser("gen-data", help="write train/dev/test JSONL splits")
    _add_target_flags(p, with_data=False)
    _add_data_flags(p)
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_gen_data, data=None)

    p = sub.add_parser("train", help="fit one model and write its artifacts")
    _add_target_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", type=str, default=None, metavar="CKPT")
    p.add_argument("--config", type=str, default=None,
                   help="TOML file with any of these options; flags win")
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a sweep and write CSV tables")
    p.add_argument("suite", choices=("tomita", "random", "ablate-noise", "belief-noise"))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--langs", type=str, default="1,2,3,4,5,6,7")
    p.add_argument("--lang", type=int, default=5)
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--rates", type=str, default="0,0.05,0.1,0.15")
    p.add_argument("--variances", type=str, default="0.1,0.3")
    p.add_argument("--targets", type=int, default=3)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--symbols", type=int, default=2)
    p.add_argument("--best-k", type=int, default=5)
    p.add_argument("--qmax", type=int, default=0, dest="q_max",
                   help="0 picks the suite's standard value")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--name", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    # the training group, minus --qmax which bench defines itself
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--restarts", type=int, default=TrainConfig.restarts)
    p.add_argument("--fit-floor", type=float, default=None)
    p.add_argument("--first-fit", action=argparse.BooleanOptionalAction, default=None,
                   help="default: on for random/ablate-noise, off otherwise")
    p.add_argument("--perm-bias", type=float, default=TrainConfig.init_permutation_bias)
    p.add_argument("--tau-start", type=float, default=TemperatureSchedule.start)
    p.add_argument("--tau-decay", type=float, default=TemperatureSchedule.decay)
    p.add_argument("--tau-floor", type=float, default=TemperatureSchedule.floor)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="extract a checkpoint's machine as DOT and JSON")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--no-minimize", action="store_true")
    p.add_argument("--name", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_export)

    parser.sub_map = dict(sub.choices)  # for config-file default injection
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Seed parser defaults from --config FILE so explicit flags still win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv
    path = Path(argv[idx + 1])
    if not path.exists():
        parser.error(f"config file {path} does not exist")
    try:
        values = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        parser.error(f"bad config file {path}: {exc}")
    flat = {}
    for key, value in values.items():
        if isinstance(value, dict):  # allow grouping into [tables]; keys stay flat
            flat.update({k.replace("-", "_"): v for k, v in value.items()})
        else:
            flat[key.replace("-", "_")] = value
    for sub in parser.sub_map.values():
        # accept either the flag spelling (qmax, batch-size) or the dest
        dest_by_key = {}
        for action in sub._actions:
            dest_by_key[action.dest] = action.dest
            for opt in action.option_strings:
                dest_by_key[opt.lstrip("-").replace("-", "_")] = action.dest
        mapped = {dest_by_key[k]: v for k, v in flat.items() if k in dest_by_key}
        if mapped:
            sub.set_defaults(**mapped)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DfaFormatError, DatasetFormatError, GenerationError, FileNotFoundError, ValueError) as exc:
        print(f"dfalearn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
