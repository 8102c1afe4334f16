"""Benchmark drivers: dataset recipes, single runs, and sweep tables.

Each sweep is a list of independent (target, seed) cells.  A cell
regenerates its own data from derived seeds, trains, extracts, and scores,
so cells can run in any order or in separate processes; rows are sorted
before aggregation and the result is identical either way.

Target tags name a benchmark cell: ``tomita5``, ``tomita5:flip=0.05``,
``tomita4:symvar=0.1`` (belief traces), ``tomita4:symvar=0.1:onehot``
(same corrupted traces snapped back to the nearest symbol), or
``random-10-2-0`` (third generated machine with 10 states, 2 symbols).
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, replace
import io
import json
from pathlib import Path

import numpy as np

from dfalearn.automata import Alphabet, Dfa, dfa_accepts, hopcroft_minimize, random_dfa
from dfalearn.data import (
    DatasetBundle,
    TraceSample,
    corrupt_symbols_gaussian,
    flip_labels,
    make_bundle,
    nearest_one_hot,
)
from dfalearn.evaluation import (
    RunReport,
    accuracy,
    best_k_of_n,
    extract_dfa,
    weight_count,
)
from dfalearn.seeding import derive_seed
from dfalearn.tomita import TOMITA_MINIMAL_SIZES, tomita_accepts
from dfalearn.training import TemperatureSchedule, TrainConfig, train

__all__ = [
    "TOMITA_SET_SIZES",
    "TOMITA_LENGTHS",
    "BENCH_COLUMNS",
    "tomita_bundle",
    "random_target",
    "random_target_bundle",
    "run_experiment",
    "bench_tomita",
    "bench_random",
    "ablate_label_noise",
    "belief_noise",
    "rows_to_csv",
    "write_bench_outputs",
]

# train/dev/test trace counts per Tomita language, matching the sizes the
# headline tables were produced with
TOMITA_SET_SIZES = {
    1: (325, 20, 20),
    2: (315, 20, 20),
    3: (2701, 20, 20),
    4: (3373, 40, 20),
    5: (1991, 300, 300),
    6: (3423, 300, 300),
    7: (1741, 20, 20),
}

TOMITA_LENGTHS = (30, 60, 90)  # max train length, dev length, test length

# reference train-set sizes for generated machines, by alphabet
RANDOM_TRAIN_SIZES = {2: 3400, 3: 4200}
RANDOM_EVAL_SIZE = 150

BENCH_COLUMNS = ("target", "q_max", "seed", "test_acc", "dev_acc", "q_hat", "weights", "seconds")


def tomita_bundle(
    language: int,
    rng_seed: int | None = None,
    flip_fraction: float = 0.0,
    symbol_variance: float = 0.0,
    sizes: tuple[int, int, int] | None = None,
    lengths: tuple[int, int, int] | None = None,
) -> DatasetBundle:
    """Benchmark dataset for one Tomita language, optionally corrupted.

    Label flips touch only the training split; Gaussian symbol corruption
    turns every split into belief traces (labels stay those of the clean
    strings).  All randomness derives from ``rng_seed``, which defaults to a
    per-language constant so benchmark runs need no bookkeeping.
    ``sizes`` and ``lengths`` override the benchmark split sizes and trace
    lengths, e.g. for quick smoke runs.
    """
    root = 1000 + language if rng_seed is None else rng_seed
    n_train, n_dev, n_test = sizes or TOMITA_SET_SIZES[language]
    len_train, len_dev, len_test = lengths or TOMITA_LENGTHS
    bundle = make_bundle(
        lambda trace: tomita_accepts(language, trace),
        2,
        n_train,
        n_dev,
        n_test,
        len_train,
        len_dev,
        len_test,
        rng_seed=root,
        description=f"tomita{language}",
    )
    return corrupt_bundle(bundle, root, flip_fraction, symbol_variance, alphabet_size=2)


def corrupt_bundle(bundle, root, flip_fraction, symbol_variance, alphabet_size):
    """Apply label flips (train only) and/or symbol noise (all splits)."""
    train, dev, test = bundle.train, bundle.dev, bundle.test
    if flip_fraction:
        train = flip_labels(train, flip_fraction, derive_seed(root, "flip"))
    if symbol_variance:
        train = corrupt_symbols_gaussian(
            train, alphabet_size, symbol_variance, derive_seed(root, "corrupt", 0)
        )
        dev = corrupt_symbols_gaussian(
            dev, alphabet_size, symbol_variance, derive_seed(root, "corrupt", 1)
        )
        test = corrupt_symbols_gaussian(
            test, alphabet_size, symbol_variance, derive_seed(root, "corrupt", 2)
        )
    metadata = dict(
        bundle.metadata, flip_fraction=flip_fraction, symbol_variance=symbol_variance
    )
    return DatasetBundle(train=train, dev=dev, test=test, metadata=metadata)


def random_target(num_states: int, alphabet_size: int, index: int, root_seed: int = 2026) -> Dfa:
    """The ``index``-th benchmark machine of a given shape."""
    return random_dfa(
        num_states, Alphabet(alphabet_size), derive_seed(root_seed, "target", index)
    )


def random_target_bundle(
    target: Dfa,
    index: int,
    root_seed: int = 2026,
    train_size: int | None = None,
) -> DatasetBundle:
    if train_size is None:
        train_size = RANDOM_TRAIN_SIZES.get(target.alphabet.size, 3400)
    len_train, len_dev, len_test = TOMITA_LENGTHS if target.num_states < 30 else (50, 100, 150)
    return make_bundle(
        lambda trace: dfa_accepts(target, trace),
        target.alphabet.size,
        train_size,
        RANDOM_EVAL_SIZE,
        RANDOM_EVAL_SIZE,
        len_train,
        len_dev,
        len_test,
        rng_seed=derive_seed(root_seed, "data", index),
        description=f"random-{target.num_states}-{target.alphabet.size}-{index}",
    )


def run_experiment(
    bundle: DatasetBundle,
    q_max: int,
    seed: int,
    config: TrainConfig = TrainConfig(),
    schedule: TemperatureSchedule = TemperatureSchedule(),
) -> RunReport:
    """Train on the bundle with one seed and score every artifact."""
    config = replace(config, rng_seed=seed)
    result = train(bundle, q_max, config, schedule)
    dfa = extract_dfa(result.params)
    tau = schedule.value(max(result.epochs_run - 1, 0))
    return RunReport(
        seed=seed,
        q_max=q_max,
        alphabet_size=result.params.alphabet_size,
        train_acc=accuracy(result.params, bundle.train, tau=tau),
        dev_acc=accuracy(result.params, bundle.dev, tau=tau),
        test_acc=accuracy(result.params, bundle.test, tau=tau),
        train_acc_dfa=accuracy(dfa, bundle.train),
        dev_acc_dfa=accuracy(dfa, bundle.dev),
        test_acc_dfa=accuracy(dfa, bundle.test),
        q_hat=dfa.num_states,
        weights=weight_count(q_max, result.params.alphabet_size),
        seconds=result.seconds,
        config={
            "mode": config.mode,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "max_epochs": config.max_epochs,
            "attempts": result.attempts,
            "epochs_run": result.epochs_run,
        },
    )


# --- sweeps ------------------------------------------------------------------

def _noisy_fit_window(flip_fraction: float) -> tuple[float, float | None]:
    """Train-accuracy band a genuine fit must land in when labels are flipped.

    A machine matching the clean language agrees with a flipped train set on
    about 1 - flip of the labels (binomial wobble of a few tenths of a
    percent at these set sizes), so the fit floor sits just under that mark
    — and the ceiling just over it, because scoring well above 1 - flip is
    only possible by memorizing the flipped labels, which a large state
    budget is happy to do.  Clean data keeps the plain floor and no ceiling.
    """
    if flip_fraction == 0.0:
        return 0.995, None
    floor = max(1.0 - flip_fraction - 0.01, 0.5)
    return floor, min(1.0 - flip_fraction + 0.02, 1.0)


def _run_cell(cell: dict) -> dict:
    """One (target, seed) bench cell; must stay picklable for worker pools."""
    tag = cell["target"]
    config = TrainConfig(**cell["config"])
    bundle = _bundle_for_tag(tag, cell)
    report = run_experiment(bundle, cell["q_max"], cell["seed"], config)
    row = {
        "target": tag,
        "q_max": cell["q_max"],
        "seed": cell["seed"],
        "test_acc": report.test_acc_dfa,
        "dev_acc": report.dev_acc_dfa,
        "q_hat": report.q_hat,
        "weights": report.weights,
        "seconds": round(report.seconds, 3),
    }
    row.update({k: v for k, v in cell.items() if k.startswith("extra_")})
    return row


def _bundle_for_tag(tag: str, cell: dict) -> DatasetBundle:
    base, _, modifiers = tag.partition(":")
    if base.startswith("tomita"):
        language = int(base[len("tomita"):])
        flip = cell.get("flip", 0.0)
        variance = cell.get("symbol_variance", 0.0)
        bundle = tomita_bundle(language, flip_fraction=flip, symbol_variance=variance)
        if modifiers.endswith("onehot"):
            bundle = DatasetBundle(
                train=nearest_one_hot_samples(bundle.train),
                dev=nearest_one_hot_samples(bundle.dev),
                test=nearest_one_hot_samples(bundle.test),
                metadata=dict(bundle.metadata, discretized=True),
            )
        return bundle
    if base.startswith("random-"):
        num_states, alphabet_size, index = (int(v) for v in base.split("-")[1:])
        target = random_target(num_states, alphabet_size, index, cell.get("root_seed", 2026))
        return random_target_bundle(target, index, cell.get("root_seed", 2026))
    raise ValueError(f"unknown bench target {tag!r}")


def nearest_one_hot_samples(samples) -> list:
    """Snap belief traces back to crisp symbol traces, keeping labels."""
    out = []
    for s in samples:
        if not s.is_belief:
            out.append(s)
        else:
            out.append(
                TraceSample(label=s.label, symbols=tuple(nearest_one_hot(row) for row in s.beliefs))
            )
    return out


def _safe_cell(cell: dict) -> dict:
    try:
        return _run_cell(cell)
    except Exception as exc:  # a failed cell must not kill the sweep
        return {
            "target": cell["target"],
            "q_max": cell["q_max"],
            "seed": cell["seed"],
            "error": f"{type(exc).__name__}: {exc}",
        }


def _run_cells(cells: list[dict], workers: int = 1, keep_going: bool = False) -> list[dict]:
    run = _safe_cell if keep_going else _run_cell
    cells = sorted(cells, key=lambda c: (c["target"], c["seed"]))
    if workers <= 1:
        rows = [run(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, cells))
    return sorted(rows, key=lambda r: (r["target"], r["seed"]))


def _good(rows: list[dict]) -> list[dict]:
    return [r for r in rows if "error" not in r]


def bench_tomita(
    languages=range(1, 8),
    n_seeds: int = 5,
    q_max: int | dict = 10,
    flip_fraction: float = 0.0,
    config: TrainConfig = TrainConfig(),
    workers: int = 1,
    keep_going: bool = False,
) -> tuple[list[dict], list[dict]]:
    """Headline Tomita sweep; returns (per-run rows, per-language summary)."""
    floor, ceiling = _noisy_fit_window(flip_fraction)
    cells = []
    for language in languages:
        cell_q = q_max[language] if isinstance(q_max, dict) else q_max
        tag = f"tomita{language}" + (f":flip={flip_fraction:g}" if flip_fraction else "")
        for seed in range(n_seeds):
            cells.append(
                {
                    "target": tag,
                    "q_max": cell_q,
                    "seed": seed,
                    "flip": flip_fraction,
                    "config": _config_fields(
                        replace(config, restart_below=floor, restart_above=ceiling)
                    ),
                }
            )
    rows = _run_cells(cells, workers, keep_going)
    summary = summarize_by_target(_good(rows), expected_sizes={
        f"tomita{l}" + (f":flip={flip_fraction:g}" if flip_fraction else ""): TOMITA_MINIMAL_SIZES[l]
        for l in languages
    })
    return rows, summary


def bench_random(
    n_targets: int = 3,
    num_states: int = 10,
    alphabet_size: int = 2,
    q_max: int = 100,
    n_seeds: int = 10,
    best_k: int = 5,
    root_seed: int = 2026,
    config: TrainConfig | None = None,
    workers: int = 1,
    keep_going: bool = False,
) -> tuple[list[dict], list[dict]]:
    """Generated-machine sweep with best-k-of-n aggregation per target."""
    if config is None:
        # exact minimality is not scored here; first fitting attempt is enough
        config = TrainConfig(stop_at_first_fit=True, restarts=4)
    cells = []
    minimized = {}
    for index in range(n_targets):
        target = random_target(num_states, alphabet_size, index, root_seed)
        tag = f"random-{num_states}-{alphabet_size}-{index}"
        minimized[tag] = hopcroft_minimize(target).num_states
        for seed in range(n_seeds):
            cells.append(
                {
                    "target": tag,
                    "q_max": q_max,
                    "seed": seed,
                    "root_seed": root_seed,
                    "config": _config_fields(config),
                }
            )
    rows = _run_cells(cells, workers, keep_going)
    summary = []
    for tag in sorted(minimized):
        reports = [_row_report(r) for r in _good(rows) if r["target"] == tag]
        if not reports:
            summary.append({"target": tag, "target_min_states": minimized[tag],
                            "error": "all runs failed"})
            continue
        stats = best_k_of_n(reports, min(best_k, len(reports)))
        summary.append(
            {
                "target": tag,
                "target_min_states": minimized[tag],
                "k": stats.k,
                "mean_test_acc": stats.mean_test_acc,
                "std_test_acc": stats.std_test_acc,
                "mean_q_hat": stats.mean_q_hat,
                "std_q_hat": stats.std_q_hat,
                "mean_seconds": stats.mean_seconds,
            }
        )
    return rows, summary


def ablate_label_noise(
    language: int = 5,
    rates=(0.0, 0.05, 0.10, 0.15),
    q_max: int = 200,
    n_seeds: int = 5,
    config: TrainConfig | None = None,
    workers: int = 1,
    keep_going: bool = False,
) -> tuple[list[dict], list[dict]]:
    """Flip-rate robustness curve on one language (median over seeds)."""
    if config is None:
        # generous attempt budget: at high flip rates the fit window rejects
        # memorized attempts outright, and unused attempts cost nothing
        config = TrainConfig(stop_at_first_fit=True, restarts=6)
    cells = []
    for rate in rates:
        floor, ceiling = _noisy_fit_window(rate)
        tag = f"tomita{language}" + (f":flip={rate:g}" if rate else "")
        for seed in range(n_seeds):
            cells.append(
                {
                    "target": tag,
                    "q_max": q_max,
                    "seed": seed,
                    "flip": rate,
                    "extra_flip": rate,
                    "config": _config_fields(
                        replace(config, restart_below=floor, restart_above=ceiling)
                    ),
                }
            )
    rows = _run_cells(cells, workers, keep_going)
    summary = []
    for rate in rates:
        group = [r for r in _good(rows) if r.get("extra_flip") == rate]
        summary.append(
            {
                "flip": rate,
                "median_test_acc": float(np.median([r["test_acc"] for r in group])),
                "median_q_hat": float(np.median([r["q_hat"] for r in group])),
                "max_q_hat": max(r["q_hat"] for r in group),
            }
        )
    return rows, summary


def belief_noise(
    language: int = 4,
    variances=(0.1, 0.3),
    q_max: int = 10,
    n_seeds: int = 5,
    config: TrainConfig = TrainConfig(),
    workers: int = 1,
    keep_going: bool = False,
) -> tuple[list[dict], list[dict]]:
    """Soft-symbol training versus snapping the same noisy traces to one-hots."""
    cells = []
    for variance in variances:
        for discretize in (False, True):
            tag = f"tomita{language}:symvar={variance:g}" + (":onehot" if discretize else "")
            mode_config = replace(config, mode="crisp" if discretize else "belief")
            for seed in range(n_seeds):
                cells.append(
                    {
                        "target": tag,
                        "q_max": q_max,
                        "seed": seed,
                        "symbol_variance": variance,
                        "extra_variance": variance,
                        "extra_discretized": discretize,
                        "config": _config_fields(mode_config),
                    }
                )
    rows = _run_cells(cells, workers, keep_going)
    summary = []
    for variance in variances:
        soft = [r["test_acc"] for r in _good(rows)
                if r.get("extra_variance") == variance and not r["extra_discretized"]]
        hard = [r["test_acc"] for r in _good(rows)
                if r.get("extra_variance") == variance and r["extra_discretized"]]
        summary.append(
            {
                "variance": variance,
                "mean_test_acc_belief": float(np.mean(soft)),
                "mean_test_acc_onehot": float(np.mean(hard)),
            }
        )
    return rows, summary


def summarize_by_target(rows: list[dict], expected_sizes: dict | None = None) -> list[dict]:
    summary = []
    for tag in sorted({r["target"] for r in rows}):
        group = [r for r in rows if r["target"] == tag]
        accs = np.array([r["test_acc"] for r in group])
        sizes = np.array([r["q_hat"] for r in group])
        entry = {
            "target": tag,
            "runs": len(group),
            "mean_test_acc": float(accs.mean()),
            "std_test_acc": float(accs.std(ddof=1)) if len(group) > 1 else 0.0,
            "mean_q_hat": float(sizes.mean()),
            "mean_seconds": float(np.mean([r["seconds"] for r in group])),
        }
        if expected_sizes and tag in expected_sizes:
            want = expected_sizes[tag]
            entry["expected_states"] = want
            entry["exact_runs"] = int(sum(1 for r in group if r["test_acc"] == 1.0 and r["q_hat"] == want))
        summary.append(entry)
    return summary


def _row_report(row: dict) -> RunReport:
    """Lift a bench row back into a RunReport for the aggregation helpers."""
    alphabet_size = _alphabet_from_weights(row["weights"], row["q_max"])
    return RunReport(
        seed=row["seed"],
        q_max=row["q_max"],
        alphabet_size=alphabet_size,
        train_acc=1.0,
        dev_acc=row["dev_acc"],
        test_acc=row["test_acc"],
        train_acc_dfa=1.0,
        dev_acc_dfa=row["dev_acc"],
        test_acc_dfa=row["test_acc"],
        q_hat=row["q_hat"],
        weights=row["weights"],
        seconds=row["seconds"],
    )


def _alphabet_from_weights(weights: int, q_max: int) -> int:
    return (weights - 2 * q_max) // (q_max * q_max)


def _config_fields(config: TrainConfig) -> dict:
    fields = asdict(config)
    fields.pop("rng_seed", None)  # the cell's seed wins
    return fields


# --- tabular output ----------------------------------------------------------

def rows_to_csv(rows: list[dict], columns=BENCH_COLUMNS) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()


def write_bench_outputs(out_dir, name: str, rows: list[dict], summary: list[dict], manifest: dict):
    """Write rows CSV, summary JSON + CSV, and a manifest; returns the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows_path = out_dir / f"{name}.csv"
    summary_path = out_dir / f"{name}_summary.json"
    summary_csv_path = out_dir / f"{name}_summary.csv"
    manifest_path = out_dir / f"{name}_manifest.json"
    rows_path.write_text(rows_to_csv(rows))
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    cols: list[str] = []
    for entry in summary:
        for key in entry:
            if key not in cols:
                cols.append(key)
    summary_csv_path.write_text(rows_to_csv(summary, columns=cols) if cols else "")
    manifest_path.write_text(
        json.dumps({**manifest, "rows": rows_path.name, "summary": summary_path.name,
                    "summary_csv": summary_csv_path.name},
                   indent=2, default=str)
        + "\n"
    )
    return rows_path, summary_path, manifest_path
