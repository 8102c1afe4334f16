"""The annealed training loop, its schedule, and run artifacts.

One epoch = one temperature value, a full gradient pass over the training
set, and a metrics row.  The temperature starts at 1 and shrinks
geometrically to a floor; as it drops, the softened automaton hardens toward
its own argmax, and training stops once the loss has flatlined and the
discretized automaton scores the same as the continuous one on the training
set (or at the epoch cap).
"""

import csv
from dataclasses import dataclass, field
import io
import json
import time

import numpy as np

from dfalearn.automata import Alphabet
from dfalearn.data import DatasetBundle, TraceSample
from dfalearn.evaluation import accuracy, extract_dfa
from dfalearn.model import (
    AdamState,
    ModelParams,
    PackedTraces,
    adam_step,
    backward,
    batch_outputs,
    init_params,
)
from dfalearn.seeding import derive_seed

__all__ = [
    "TemperatureSchedule",
    "TrainConfig",
    "TrainResult",
    "DivergenceError",
    "train",
    "history_to_csv",
    "save_history",
    "save_checkpoint",
    "load_checkpoint",
]

HISTORY_COLUMNS = ("epoch", "tau", "train_loss", "train_acc", "dev_acc", "dev_acc_discrete")


@dataclass(frozen=True)
class TemperatureSchedule:
    """Geometric anneal: tau(e) = max(floor, start * decay^e)."""

    start: float = 1.0
    decay: float = 0.999
    floor: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if self.floor <= 0.0:
            raise ValueError(f"floor must be positive, got {self.floor}")
        if self.start < self.floor:
            raise ValueError("start temperature below the floor")

    def value(self, epoch: int) -> float:
        return max(self.floor, self.start * self.decay**epoch)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    max_epochs: int = 200
    batch_size: int | None = 64  # None = full batch
    window: int = 10  # epochs over which loss improvement is measured
    loss_tol: float = 1e-5
    acc_match_tol: float = 1e-3  # continuous vs discretized train accuracy
    mode: str = "crisp"  # or "belief"
    rng_seed: int = 0
    init_permutation_bias: float = 1.5  # see init_params
    restarts: int = 8  # extra attempts from fresh derived inits
    restart_below: float | None = 0.995  # discretized train acc that counts as a fit
    restart_above: float | None = None  # train acc above this is memorization, not a fit
    stop_at_first_fit: bool = False  # True: return the first fitting attempt

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.mode not in ("crisp", "belief"):
            raise ValueError(f"mode must be 'crisp' or 'belief', got {self.mode!r}")
        if self.restarts < 0:
            raise ValueError(f"restarts must be >= 0, got {self.restarts}")
        if self.restart_below is not None and not 0.0 < self.restart_below <= 1.0:
            raise ValueError(f"restart_below must be in (0, 1], got {self.restart_below}")
        if self.restart_above is not None:
            if self.restart_below is None:
                raise ValueError("restart_above needs restart_below (it refines the fit test)")
            if not self.restart_below <= self.restart_above <= 1.0:
                raise ValueError(
                    f"restart_above must be in [restart_below, 1], got {self.restart_above}"
                )


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, epoch: int, tau: float, grad_norm_trans: float, grad_norm_accept: float):
        self.epoch = epoch
        self.tau = tau
        self.grad_norm_trans = grad_norm_trans
        self.grad_norm_accept = grad_norm_accept
        super().__init__(
            f"non-finite loss at epoch {epoch} (tau={tau:.6g}, "
            f"|grad_trans|={grad_norm_trans:.4g}, |grad_accept|={grad_norm_accept:.4g})"
        )


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: AdamState
    history: list[dict] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False
    seconds: float = 0.0
    attempts: int = 1  # 1 = converged without restarting


def _resolve_alphabet_size(bundle: DatasetBundle, explicit: int | None) -> int:
    if explicit is not None:
        return explicit
    meta = bundle.metadata.get("alphabet_size")
    if meta:
        return int(meta)
    samples = bundle.train or bundle.dev
    if samples and samples[0].is_belief:
        return samples[0].beliefs.shape[1]
    top = max((max(s.symbols) for s in bundle.train if s.symbols), default=0)
    return top + 1


def _check_mode(samples: list[TraceSample], config: TrainConfig, split: str):
    want_belief = config.mode == "belief"
    for s in samples:
        if s.is_belief != want_belief:
            raise ValueError(
                f"{split} split sample mode does not match config mode {config.mode!r}"
            )


def train(
    bundle: DatasetBundle,
    q_max: int,
    config: TrainConfig = TrainConfig(),
    schedule: TemperatureSchedule = TemperatureSchedule(),
    alphabet_size: int | None = None,
    start_state: tuple[ModelParams, AdamState, int] | None = None,
) -> TrainResult:
    """Fit the relaxed automaton to ``bundle.train``; metrics per epoch.

    Deterministic given the config seed.  ``start_state`` resumes from a
    checkpoint's (params, optimizer, next epoch); a resumed run retraces the
    remainder of its attempt exactly because each epoch's randomness is
    derived from (seed, epoch), never from a running stream.

    A single gradient run is not reliable enough to identify the target
    machine: depending on the init it may settle in an undersized optimum
    (discretized train accuracy stuck below ``config.restart_below``) or fit
    the data with spurious extra states.  So up to ``config.restarts`` extra
    attempts run from fresh derived inits, and the winner is the attempt
    whose extracted machine fits the training set with the fewest states —
    the smallest-consistent-machine rule, which needs no knowledge of the
    target.  When labels are noisy, ``config.restart_above`` caps the fit
    test from above: a machine agreeing with flipped labels more often than
    the clean language possibly could has memorized noise rather than
    generalized, so it triggers a restart just like an underfit.  Attempts
    that never fit rank below any that do, nearest the window first.
    With ``stop_at_first_fit`` the loop returns the first fitting attempt
    instead (cheaper, for large q_max where exact minimality is not the
    point).  Resumed runs never restart.  ``result.attempts`` records how
    many attempts were spent.
    """
    t0 = time.perf_counter()
    alpha = _resolve_alphabet_size(bundle, alphabet_size)
    _check_mode(bundle.train, config, "train")
    _check_mode(bundle.dev, config, "dev")
    attempts = 1 if start_state is not None or config.restart_below is None else config.restarts + 1
    best: TrainResult | None = None
    best_key: tuple | None = None
    for attempt in range(attempts):
        root = config.rng_seed if attempt == 0 else derive_seed(config.rng_seed, "restart", attempt)
        result = _train_once(
            bundle, q_max, config, schedule, alpha, root, start_state if attempt == 0 else None
        )
        fit = result.history[-1]["train_acc_discrete"] if result.history else 1.0
        floor, ceiling = config.restart_below, config.restart_above
        fits = floor is None or (fit >= floor and (ceiling is None or fit <= ceiling))
        q_hat = extract_dfa(result.params).num_states
        if fits:
            key = (0, q_hat, -fit, attempt)
        else:
            # distance outside [floor, ceiling]: near misses beat far ones, so
            # the fallback when nothing fits is the least-wrong attempt
            violation = max((floor or 0.0) - fit, fit - (ceiling if ceiling is not None else 1.0))
            key = (1, violation, -fit, attempt)
        if best_key is None or key < best_key:
            best, best_key = result, key
        if fits and (config.stop_at_first_fit or config.restart_below is None):
            break
    best.attempts = attempt + 1
    best.seconds = time.perf_counter() - t0
    return best


def _train_once(
    bundle: DatasetBundle,
    q_max: int,
    config: TrainConfig,
    schedule: TemperatureSchedule,
    alpha: int,
    root_seed: int,
    start_state: tuple[ModelParams, AdamState, int] | None,
) -> TrainResult:
    t0 = time.perf_counter()
    if start_state is None:
        params = init_params(
            q_max, alpha, derive_seed(root_seed, "init"), config.init_permutation_bias
        )
        optimizer = AdamState.fresh(params)
        first_epoch = 0
    else:
        params, optimizer, first_epoch = start_state
        if params.q_max != q_max or params.alphabet_size != alpha:
            raise ValueError("checkpoint shape does not match the requested run")

    pack_train = PackedTraces(bundle.train, alpha)
    pack_dev = PackedTraces(bundle.dev, alpha)
    train_labels = np.array([s.label for s in bundle.train], dtype=bool)
    dev_labels = np.array([s.label for s in bundle.dev], dtype=bool)

    if config.batch_size is None:
        chunks = [pack_train]
        chunk_sizes = np.array([pack_train.size])
    else:
        by_length = sorted(bundle.train, key=len, reverse=True)
        chunks = [
            PackedTraces(by_length[i : i + config.batch_size], alpha)
            for i in range(0, len(by_length), config.batch_size)
        ]
        chunk_sizes = np.array([c.size for c in chunks])

    result = TrainResult(params=params, optimizer=optimizer)
    losses: list[float] = []
    for epoch in range(first_epoch, config.max_epochs):
        tau = schedule.value(epoch)
        if config.batch_size is None:
            loss, grad_t, grad_a = backward(params, tau, pack_train)
            _guard_finite(loss, grad_t, grad_a, epoch, tau)
            y_train = batch_outputs(params, tau, pack_train)
            updates = [(grad_t, grad_a)]
        else:
            order = np.random.default_rng(
                derive_seed(root_seed, "batch-order", epoch)
            ).permutation(len(chunks))
            batch_losses = []
            for ci in order:
                chunk = chunks[int(ci)]
                loss_c, grad_t, grad_a = backward(params, tau, chunk)
                _guard_finite(loss_c, grad_t, grad_a, epoch, tau)
                adam_step(params, grad_t, grad_a, optimizer, config.learning_rate)
                batch_losses.append((chunk.size, loss_c))
            loss = float(
                sum(n * l for n, l in batch_losses) / chunk_sizes.sum()
            )
            y_train = batch_outputs(params, tau, pack_train)
            updates = []

        train_acc = float(np.mean((y_train > 0.5) == train_labels)) if pack_train.size else 1.0
        dev_acc = (
            float(np.mean((batch_outputs(params, tau, pack_dev) > 0.5) == dev_labels))
            if pack_dev.size
            else 1.0
        )
        dfa = extract_dfa(params)
        train_acc_disc = accuracy(dfa, bundle.train) if bundle.train else 1.0
        dev_acc_disc = accuracy(dfa, bundle.dev) if bundle.dev else 1.0
        result.history.append(
            {
                "epoch": epoch,
                "tau": tau,
                "train_loss": loss,
                "train_acc": train_acc,
                "dev_acc": dev_acc,
                "dev_acc_discrete": dev_acc_disc,
                "train_acc_discrete": train_acc_disc,
            }
        )
        losses.append(loss)
        result.epochs_run = epoch + 1

        flat = (
            len(losses) > config.window
            and losses[-1 - config.window] - losses[-1] < config.loss_tol
        )
        agrees = abs(train_acc - train_acc_disc) <= config.acc_match_tol
        if flat and agrees:
            result.stopped_early = True
            break
        for grad_t, grad_a in updates:
            adam_step(params, grad_t, grad_a, optimizer, config.learning_rate)

    result.seconds = time.perf_counter() - t0
    return result


def _guard_finite(loss, grad_t, grad_a, epoch, tau):
    if np.isfinite(loss) and np.all(np.isfinite(grad_t)) and np.all(np.isfinite(grad_a)):
        return
    finite_t = np.linalg.norm(grad_t[np.isfinite(grad_t)])
    finite_a = np.linalg.norm(grad_a[np.isfinite(grad_a)])
    raise DivergenceError(epoch, tau, float(finite_t), float(finite_a))


def history_to_csv(history: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=HISTORY_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(history)
    return out.getvalue()


def save_history(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(history_to_csv(history))


def _render_json(obj) -> str:
    """JSON text with every real emitted at 17 significant digits."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return format(obj, ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _render_json(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_render_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_render_json(v)}" for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_checkpoint(
    path,
    params: ModelParams,
    optimizer: AdamState,
    epoch: int,
    tau: float,
    alphabet: Alphabet | None = None,
) -> None:
    """Write a resumable snapshot: logits, optimizer moments, position in the anneal."""
    names = list(alphabet.names) if alphabet else [str(i) for i in range(params.alphabet_size)]
    doc = {
        "q_max": params.q_max,
        "alphabet": names,
        "trans_logits": params.trans_logits,
        "accept_logits": params.accept_logits,
        "optimizer": {
            "m_trans": optimizer.m_trans,
            "v_trans": optimizer.v_trans,
            "m_accept": optimizer.m_accept,
            "v_accept": optimizer.v_accept,
            "step": optimizer.step,
        },
        "epoch": epoch,
        "tau": tau,
    }
    with open(path, "w") as fh:
        fh.write(_render_json(doc) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, AdamState, int, float, Alphabet]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    try:
        params = ModelParams(
            q_max=int(doc["q_max"]),
            trans_logits=np.array(doc["trans_logits"], dtype=np.float64),
            accept_logits=np.array(doc["accept_logits"], dtype=np.float64),
        )
        opt = doc["optimizer"]
        optimizer = AdamState(
            m_trans=np.array(opt["m_trans"], dtype=np.float64),
            v_trans=np.array(opt["v_trans"], dtype=np.float64),
            m_accept=np.array(opt["m_accept"], dtype=np.float64),
            v_accept=np.array(opt["v_accept"], dtype=np.float64),
            step=int(opt["step"]),
        )
        alphabet = Alphabet(len(doc["alphabet"]), tuple(doc["alphabet"]))
        epoch = int(doc["epoch"])
        tau = float(doc["tau"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
    return params, optimizer, epoch, tau, alphabet
