"""Trace datasets: sampling, balancing, corruption, serialization.

Traces come in two modes.  Crisp samples carry integer symbol indices;
belief samples carry one probability vector over the alphabet per position
(each entrywise >= 0 and summing to 1 within 1e-6).  Samples produced by the
generators in this module always satisfy those bounds; the raw-noise escape
hatch on :func:`corrupt_symbols_gaussian` is the one deliberate exception.

All generators are pure functions of (config, seed).
"""

from dataclasses import dataclass, field
import json
from typing import Callable, Sequence

import numpy as np

from dfalearn.seeding import derive_seed

__all__ = [
    "TraceSample",
    "DatasetBundle",
    "GenerationError",
    "DatasetFormatError",
    "sample_balanced_train",
    "sample_fixed_length",
    "flip_labels",
    "corrupt_symbols_gaussian",
    "nearest_one_hot",
    "make_bundle",
    "dataset_to_jsonl",
    "dataset_from_jsonl",
]

_SIMPLEX_TOL = 1e-6


class GenerationError(RuntimeError):
    """Raised when a sampler cannot satisfy its class quotas."""


class DatasetFormatError(ValueError):
    """Raised on malformed serialized datasets; message carries the line number."""


@dataclass(frozen=True, eq=False)
class TraceSample:
    """One labeled trace, in exactly one of crisp or belief mode."""

    label: int
    symbols: tuple[int, ...] | None = None
    beliefs: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if (self.symbols is None) == (self.beliefs is None):
            raise ValueError("exactly one of symbols/beliefs must be set")
        if self.symbols is not None:
            syms = tuple(int(s) for s in self.symbols)
            if any(s < 0 for s in syms):
                raise ValueError("symbol indices must be nonnegative")
            object.__setattr__(self, "symbols", syms)
        else:
            beliefs = np.array(self.beliefs, dtype=np.float64)
            if beliefs.ndim != 2:
                raise ValueError(f"beliefs must be (length, alphabet), got shape {beliefs.shape}")
            if not np.all(np.isfinite(beliefs)):
                raise ValueError("beliefs must be finite")
            beliefs.setflags(write=False)
            object.__setattr__(self, "beliefs", beliefs)

    @property
    def is_belief(self) -> bool:
        return self.beliefs is not None

    def __len__(self) -> int:
        return len(self.symbols) if self.symbols is not None else self.beliefs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TraceSample):
            return NotImplemented
        if self.label != other.label or self.is_belief != other.is_belief:
            return False
        if self.is_belief:
            return self.beliefs.shape == other.beliefs.shape and np.array_equal(
                self.beliefs, other.beliefs
            )
        return self.symbols == other.symbols


@dataclass(frozen=True)
class DatasetBundle:
    """Train/dev/test splits plus the provenance needed to regenerate them."""

    train: list[TraceSample]
    dev: list[TraceSample]
    test: list[TraceSample]
    metadata: dict = field(default_factory=dict)


def on_simplex(beliefs: np.ndarray) -> bool:
    """True iff every row is entrywise nonnegative and sums to 1 within 1e-6."""
    return bool(
        beliefs.min(initial=0.0) >= 0.0
        and (beliefs.size == 0 or np.abs(beliefs.sum(axis=-1) - 1.0).max() <= _SIMPLEX_TOL)
    )


def sample_balanced_train(
    oracle: Callable[[Sequence[int]], bool],
    alphabet_size: int,
    len_max: int,
    target_size: int,
    rng_seed: int,
) -> list[TraceSample]:
    """Class-balanced training set of random traces with lengths in [1, len_max].

    Draws (length, string) pairs uniformly — length first, then i.i.d.
    symbols — and labels them with the oracle.  Exact duplicates are rejected
    while distinct strings remain reachable; once a class's reachable pool is
    exhausted (no progress for a long streak, or the overall attempt budget of
    500x the target size runs out), the rest of that class's quota is filled
    by resampling from its collected pool, keeping the final set balanced at
    |#pos - #neg| <= 1.  A class with no reachable member at all raises
    :class:`GenerationError` naming it.
    """
    if len_max < 1:
        raise ValueError(f"len_max must be >= 1, got {len_max}")
    if target_size < 2:
        raise ValueError(f"target_size must be >= 2, got {target_size}")
    rng = np.random.default_rng(rng_seed)
    quotas = {1: target_size // 2, 0: target_size - target_size // 2}
    pools: dict[int, list[tuple[int, ...]]] = {0: [], 1: []}
    seen: set[tuple[int, ...]] = set()

    budget = 500 * target_size
    stale_limit = max(2000, 20 * target_size)
    stale = 0
    for _ in range(budget):
        if stale >= stale_limit:
            break
        if all(len(pools[c]) >= quotas[c] for c in (0, 1)):
            break
        length = int(rng.integers(1, len_max + 1))
        trace = tuple(int(s) for s in rng.integers(0, alphabet_size, size=length))
        label = int(bool(oracle(trace)))
        if trace not in seen and len(pools[label]) < quotas[label]:
            seen.add(trace)
            pools[label].append(trace)
            stale = 0
        else:
            stale += 1

    for cls in (0, 1):
        short = quotas[cls] - len(pools[cls])
        if short <= 0:
            continue
        if not pools[cls]:
            name = "positive" if cls == 1 else "negative"
            raise GenerationError(
                f"class starvation: no {name} trace found with length <= {len_max} "
                f"after {budget} attempts"
            )
        # distinct strings ran out before the quota; top up with repeats
        extra = rng.integers(0, len(pools[cls]), size=short)
        pools[cls].extend(pools[cls][int(i)] for i in extra)

    samples = [TraceSample(label=c, symbols=t) for c in (1, 0) for t in pools[c]]
    order = rng.permutation(len(samples))
    return [samples[int(i)] for i in order]


def sample_fixed_length(
    oracle: Callable[[Sequence[int]], bool],
    alphabet_size: int,
    length: int,
    size: int,
    rng_seed: int,
) -> list[TraceSample]:
    """Uniform random traces of exactly ``length``, labeled by the oracle."""
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(size):
        trace = tuple(int(s) for s in rng.integers(0, alphabet_size, size=length))
        out.append(TraceSample(label=int(bool(oracle(trace))), symbols=trace))
    return out


def flip_labels(samples: list[TraceSample], fraction: float, rng_seed: int) -> list[TraceSample]:
    """Flip exactly floor(fraction * N) labels, positions drawn without replacement."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(samples)
    k = int(fraction * n)
    rng = np.random.default_rng(rng_seed)
    flip_at = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
    out = []
    for i, s in enumerate(samples):
        if i in flip_at:
            out.append(TraceSample(label=1 - s.label, symbols=s.symbols, beliefs=s.beliefs))
        else:
            out.append(s)
    return out


def corrupt_symbols_gaussian(
    samples: list[TraceSample],
    alphabet_size: int,
    variance: float,
    rng_seed: int,
    project: bool = True,
) -> list[TraceSample]:
    """Add zero-mean Gaussian noise to each one-hot symbol vector.

    With ``project`` (the default) the noisy vectors are pushed back onto the
    probability simplex: negatives clamp to 0 and rows renormalize, an
    all-zero row falling back to uniform.  ``project=False`` returns the raw
    noisy vectors, which in general are not probability vectors.
    """
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    rng = np.random.default_rng(rng_seed)
    sigma = float(np.sqrt(variance))
    out = []
    for s in samples:
        if s.is_belief:
            raise ValueError("corrupt_symbols_gaussian expects crisp-mode samples")
        onehot = np.zeros((len(s.symbols), alphabet_size))
        onehot[np.arange(len(s.symbols)), list(s.symbols)] = 1.0
        noisy = onehot + rng.normal(0.0, sigma, size=onehot.shape)
        if project:
            noisy = np.clip(noisy, 0.0, None)
            sums = noisy.sum(axis=1, keepdims=True)
            dead = sums[:, 0] == 0.0
            noisy[dead] = 1.0 / alphabet_size
            sums[dead] = 1.0
            noisy = noisy / sums
        out.append(TraceSample(label=s.label, beliefs=noisy))
    return out


def nearest_one_hot(belief) -> int:
    """Index of the closest one-hot vector (ties to the lowest index)."""
    return int(np.argmax(np.asarray(belief)))


def make_bundle(
    oracle: Callable[[Sequence[int]], bool],
    alphabet_size: int,
    train_size: int,
    dev_size: int,
    test_size: int,
    len_train: int,
    len_dev: int,
    len_test: int,
    rng_seed: int,
    description: str = "",
) -> DatasetBundle:
    """Standard three-way split: balanced short train, fixed-length dev/test."""
    train = sample_balanced_train(
        oracle, alphabet_size, len_train, train_size, derive_seed(rng_seed, "train")
    )
    dev = sample_fixed_length(
        oracle, alphabet_size, len_dev, dev_size, derive_seed(rng_seed, "dev")
    )
    test = sample_fixed_length(
        oracle, alphabet_size, len_test, test_size, derive_seed(rng_seed, "test")
    )
    metadata = {
        "seed": rng_seed,
        "alphabet_size": alphabet_size,
        "sizes": {"train": train_size, "dev": dev_size, "test": test_size},
        "lengths": {"train_max": len_train, "dev": len_dev, "test": len_test},
        "target": description,
        "noise": None,
        "dedup": "train strings deduplicated while distinct strings last; "
        "dev/test sampled independently and may overlap train",
    }
    return DatasetBundle(train=train, dev=dev, test=test, metadata=metadata)


def _belief_line(sample: TraceSample) -> str:
    rows = ", ".join(
        "[" + ", ".join(format(v, ".17g") for v in row) + "]" for row in sample.beliefs
    )
    return f'{{"beliefs": [{rows}], "label": {sample.label}}}'


def dataset_to_jsonl(samples: list[TraceSample]) -> str:
    """One JSON object per line; belief reals carry 17 significant digits."""
    lines = []
    for s in samples:
        if s.is_belief:
            lines.append(_belief_line(s))
        else:
            lines.append(json.dumps({"symbols": list(s.symbols), "label": s.label}))
    return "\n".join(lines) + ("\n" if lines else "")


def dataset_from_jsonl(text: str) -> list[TraceSample]:
    """Inverse of :func:`dataset_to_jsonl`; errors carry the 1-based line number."""
    samples: list[TraceSample] = []
    mode = None  # "symbols" or "beliefs", fixed by the first line
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "label" not in doc:
            raise DatasetFormatError(f"line {lineno}: expected an object with a 'label' field")
        has_sym = "symbols" in doc
        has_bel = "beliefs" in doc
        if has_sym == has_bel:
            raise DatasetFormatError(
                f"line {lineno}: need exactly one of 'symbols' or 'beliefs'"
            )
        line_mode = "symbols" if has_sym else "beliefs"
        if mode is None:
            mode = line_mode
        elif mode != line_mode:
            raise DatasetFormatError(
                f"line {lineno}: mixed {mode!r} and {line_mode!r} samples in one file"
            )
        try:
            if has_sym:
                samples.append(TraceSample(label=doc["label"], symbols=tuple(doc["symbols"])))
            else:
                beliefs = np.array(doc["beliefs"], dtype=np.float64)
                if beliefs.ndim == 1 and beliefs.size == 0:
                    beliefs = beliefs.reshape(0, 0)
                samples.append(TraceSample(label=doc["label"], beliefs=beliefs))
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return samples
