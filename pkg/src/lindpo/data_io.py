"""Synthetic preference data and on-disk formats.

Datasets are JSON lines, one pair per line::

    {"x0_w": [...], "x0_l": [...], "c": [...]}

Metrics are CSV with the columns in ``METRIC_COLUMNS``; checkpoints are JSON.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import step_rng
from .errors import ConfigError, ContractError, ParseError
from .objectives import PreferencePair

METRIC_COLUMNS = ("step", "loss", "implicit_acc", "mean_delta", "mean_weight", "pref_mass")


@dataclass(frozen=True)
class Mode:
    center: tuple
    std: float
    preferred: bool


@dataclass(frozen=True)
class ToyTaskSpec:
    modes: tuple = (
        Mode((2.0, 0.0), 0.3, True),
        Mode((-2.0, 0.0), 0.3, False),
    )
    cond_dim: int = 2
    pairs: int = 4096
    seed: int = 0
    label_flip_prob: float = 0.0
    # draw the two candidates of a pair from different modes
    distinct_modes: bool = True

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(tuple(m[0]), float(m[1]), bool(m[2])) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        if not any(m.preferred for m in modes) or all(m.preferred for m in modes):
            raise ConfigError("need at least one preferred and one non-preferred mode")
        if any(not m.std > 0 for m in modes):
            raise ConfigError("mode std must be positive")
        if len({len(m.center) for m in modes}) != 1:
            raise ConfigError("all mode centers must share one dimension")
        if self.cond_dim not in (0, len(modes)):
            raise ConfigError(f"cond_dim must be 0 or the number of modes ({len(modes)})")
        if self.pairs < 0:
            raise ConfigError("pairs must be non-negative")
        if not 0.0 <= self.label_flip_prob <= 1.0:
            raise ConfigError("label_flip_prob must lie in [0, 1]")

    @property
    def dim(self):
        return len(self.modes[0].center)

    @property
    def centers(self):
        return np.array([m.center for m in self.modes], dtype=np.float64)

    @property
    def preferred_indices(self):
        return [i for i, m in enumerate(self.modes) if m.preferred]

    def condition(self, index):
        """One-hot condition selecting mode ``index`` as the preferred center."""
        c = np.zeros(self.cond_dim)
        if self.cond_dim:
            c[index] = 1.0
        return c

    def preferred_from_condition(self, c):
        if self.cond_dim == 0 or c is None or np.size(c) == 0:
            return self.preferred_indices[0]
        return int(np.argmax(np.asarray(c).ravel()))


def parse_modes(text):
    """Parse ``"x,y,std,pref;x,y,std,pref"`` (pref is 1/0 or true/false)."""
    modes = []
    for chunk in filter(None, (s.strip() for s in text.split(";"))):
        fields = [f.strip() for f in chunk.split(",")]
        if len(fields) < 3:
            raise ConfigError(f"mode {chunk!r} needs center coordinates, std and a preferred flag")
        *center, std, pref = fields
        try:
            center = tuple(float(v) for v in center)
            std = float(std)
        except ValueError:
            raise ConfigError(f"mode {chunk!r} has a non-numeric field") from None
        if pref.lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ConfigError(f"preferred flag must be 1/0 or true/false, got {pref!r}")
        modes.append(Mode(center, std, pref.lower() in ("1", "true", "yes")))
    return tuple(modes)


def reward(x, spec, preferred_index):
    d = np.asarray(x, dtype=np.float64) - spec.centers[preferred_index]
    return -float(d @ d)


def _draw_candidate(rng, spec, mode_index):
    m = spec.modes[mode_index]
    return np.asarray(m.center) + m.std * rng.standard_normal(spec.dim)


def gen_pair(spec, index):
    """Pair ``index`` of the dataset; depends only on ``(spec.seed, index)``.

    Candidates come from two different modes unless ``spec.distinct_modes`` is
    off, in which case each is an independent draw from the uniform mixture.
    The winner is the candidate with the higher reward.
    """
    rng = step_rng(spec.seed, index)
    prefs = spec.preferred_indices
    p = prefs[rng.integers(len(prefs))]
    k = len(spec.modes)
    i = rng.integers(k)
    j = (i + 1 + rng.integers(k - 1)) % k if spec.distinct_modes else rng.integers(k)
    a, b = _draw_candidate(rng, spec, i), _draw_candidate(rng, spec, j)
    if reward(b, spec, p) > reward(a, spec, p):
        a, b = b, a
    if spec.label_flip_prob and rng.uniform() < spec.label_flip_prob:
        a, b = b, a
    return PreferencePair(a, b, spec.condition(p))


def gen_dataset(spec):
    return [gen_pair(spec, i) for i in range(spec.pairs)]


def save_dataset(pairs, path):
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps({"x0_w": p.x0_w.tolist(), "x0_l": p.x0_l.tolist(), "c": p.c.tolist()}))
            fh.write("\n")


def load_dataset(path):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                pair = PreferencePair(doc["x0_w"], doc["x0_l"], doc.get("c", []))
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
            except (KeyError, TypeError) as exc:
                raise ParseError(f"missing or invalid field {exc}", lineno) from None
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if pairs and (pair.x0_w.shape != pairs[0].x0_w.shape or pair.c.shape != pairs[0].c.shape):
                raise ParseError("dimension differs from earlier pairs", lineno)
            pairs.append(pair)
    return pairs


def pref_mass(samples, spec, c=None):
    """Fraction of samples strictly closer to the preferred center than to every other center."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] == 0 or x.size == 0:
        raise ContractError("need at least one sample")
    p = spec.preferred_from_condition(c)
    d2 = ((x[:, None, :] - spec.centers[None, :, :]) ** 2).sum(axis=-1)
    others = np.delete(d2, p, axis=1)
    return float(np.mean(d2[:, p] < others.min(axis=1)))


# -- files ---------------------------------------------------------------------


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


class MetricsWriter:
    """Append-only CSV writer for metric rows."""

    def __init__(self, path, append=False):
        self.path = Path(path)
        if not append or not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def write(self, row):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(getattr(row, k)) for k in METRIC_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METRIC_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"metrics file lacks columns {missing}")
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in reader]


def save_samples_csv(samples, fh):
    w = csv.writer(fh)
    for row in np.atleast_2d(samples):
        w.writerow([repr(float(v)) for v in row])
