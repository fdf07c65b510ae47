"""Shape dictionary, nearest-descriptor matching and classification runs."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, DuplicateLabel, EddyscopeError, LengthMismatch
from .forward import SensorArray, TargetInstance, add_noise, msr_forward
from .localization import SearchGrid, noise_projector, music_values, steering
from .recovery import DEFAULT_TAU, kronecker_solvers, recover_cpt, recovered_descriptor
from .tensor_core import (Descriptor, PhysicalConfig, descriptor_from_cpts,
                          normalize_singular_values)

log = logging.getLogger(__name__)

PROVENANCES = ("solver", "paper_table", "file")

# Three largest singular values of M at omega = 133.5 for the reference
# shapes, and their normalized counterparts as printed.
REFERENCE_TABLE = {
    "cube": (2.2485, 2.2485, 2.2484),
    "cylinder": (0.5997, 0.5997, 0.3429),
    "ellipsoid": (2.6159, 2.1916, 2.1916),
    "L-shape": (0.1316, 0.1278, 0.0941),
    "prism": (3.0423, 2.8299, 2.3296),
    "sphere": (0.8282, 0.8277, 0.8277),
}
REFERENCE_TABLE_NORMALIZED = {
    "cube": (1.0, 1.0, 1.0),
    "cylinder": (1.0, 1.0, 0.5717),
    "ellipsoid": (1.0, 0.8378, 0.8377),
    "L-shape": (1.0, 0.9715, 0.7151),
    "prism": (1.0, 0.9302, 0.7657),
    "sphere": (1.0, 0.9993, 0.9993),
}
REFERENCE_TABLE_OMEGA = 133.5


@dataclass(frozen=True, eq=False)
class DictionaryEntry:
    name: str
    descriptor: Descriptor
    provenance: str = "solver"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")

    def to_dict(self) -> dict:
        d = self.descriptor.to_dict()
        return {"label": self.name, "frequencies": d["frequencies"],
                "values": d["values"], "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "DictionaryEntry":
        return cls(d["label"], Descriptor(np.asarray(d["values"], float),
                                          tuple(d.get("frequencies", ()))),
                   d.get("provenance", "file"))


@dataclass(frozen=True, eq=False)
class ShapeDictionary:
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        labels = [e.name for e in entries]
        dup = {x for x in labels if labels.count(x) > 1}
        if dup:
            raise DuplicateLabel(f"duplicate labels {sorted(dup)}")
        if len({len(e.descriptor) for e in entries}) > 1:
            raise LengthMismatch("dictionary descriptors differ in length")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list:
        return [e.name for e in self.entries]

    def __getitem__(self, label: str) -> DictionaryEntry:
        for e in self.entries:
            if e.name == label:
                return e
        raise KeyError(label)

    def restricted(self, frequencies) -> "ShapeDictionary":
        """Entries cut down to a subset of their frequencies, renormalized.

        Normalization only divides by a positive constant, so the kept
        values can be renormalized without the original tensors.
        """
        out = []
        for e in self.entries:
            have = list(e.descriptor.frequencies)
            try:
                idx = [have.index(float(w)) for w in frequencies]
            except ValueError as exc:
                raise LengthMismatch(f"entry {e.name!r} lacks a requested frequency") from exc
            S = e.descriptor.values.reshape(-1, 3)[idx]
            out.append(DictionaryEntry(e.name, normalize_singular_values(S, frequencies),
                                       e.provenance))
        return ShapeDictionary(tuple(out))

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ShapeDictionary":
        return cls(tuple(DictionaryEntry.from_dict(d) for d in json.loads(text)))

    @classmethod
    def load(cls, path) -> "ShapeDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def build_dictionary(shapes, omegas, provenance: str = "solver") -> ShapeDictionary:
    """One entry per ``(label, [CptTensor per frequency])`` pair."""
    omegas = [float(w) for w in omegas]
    entries = []
    seen = set()
    for label, cpts in shapes:
        if label in seen:
            raise DuplicateLabel(f"duplicate label {label!r}")
        seen.add(label)
        entries.append(DictionaryEntry(label, descriptor_from_cpts(list(cpts), omegas),
                                       provenance))
    return ShapeDictionary(tuple(entries))


def table_dictionary() -> ShapeDictionary:
    """Single-frequency dictionary from the tabulated singular values."""
    return ShapeDictionary(tuple(
        DictionaryEntry(label, normalize_singular_values([values], [REFERENCE_TABLE_OMEGA]),
                        "paper_table")
        for label, values in REFERENCE_TABLE.items()))


@dataclass(frozen=True)
class MatchResult:
    best: str
    distances: dict
    tied: tuple = field(default=())


def match(d_hat: Descriptor, dictionary: ShapeDictionary) -> MatchResult:
    """Nearest entry in Euclidean distance; ties go to the smallest label."""
    if len(dictionary) == 0:
        raise DomainError("dictionary is empty")
    dist = {}
    for e in dictionary:
        if len(e.descriptor) != len(d_hat):
            raise LengthMismatch(f"descriptor length {len(d_hat)} does not match "
                                 f"entry {e.name!r} ({len(e.descriptor)})")
        dist[e.name] = float(np.linalg.norm(e.descriptor.values - d_hat.values))
    low = min(dist.values())
    tied = tuple(sorted(k for k, v in dist.items() if v == low))
    return MatchResult(tied[0], dist, tied if len(tied) > 1 else ())


def trial_seed(seed_base: int, *key) -> int:
    """Independent 64-bit seed for one noise draw."""
    ss = np.random.SeedSequence([int(seed_base) % 2**63, *[int(k) for k in key]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class ClassificationSetup:
    """Everything a trial needs, shipped once to each worker."""

    cpts: list
    omegas: list
    z: np.ndarray
    array: SensorArray
    config: PhysicalConfig
    dictionary: ShapeDictionary
    grid: SearchGrid
    seed_base: int = 0
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.clean = []
        for cpt, w in zip(self.cpts, self.omegas):
            target = TargetInstance(self.z, cpt, self.config.with_omega(w))
            self.clean.append([msr_forward(target, self.array.with_q(np.eye(3)[l]))
                               for l in range(3)])
        self.sigma1 = [[float(A.singular_values()[0]) for A in triple]
                       for triple in self.clean]
        self._steer = None

    @property
    def steer(self):
        if self._steer is None:
            self._steer = steering(self.grid.points, self.array.sources, self.array.p)
        return self._steer

    def run_trial(self, level_index: int, level: float, trial: int) -> tuple:
        """``(descriptor, z_hat)`` of one noisy realization."""
        noisy = []
        for f, triple in enumerate(self.clean):
            noisy.append([add_noise(A, level * self.sigma1[f][l],
                                    trial_seed(self.seed_base, level_index, trial, f, l))
                          for l, A in enumerate(triple)])
        # Locate from the vertical-receiver data at the first frequency.
        proj = noise_projector(noisy[0][2], ("fixed", 3))
        z_hat = self.grid.points[int(np.argmax(music_values(proj, self.steer)))]
        solvers = kronecker_solvers(z_hat, self.array, self.tau)
        recs = [recover_cpt(triple, z_hat, self.array, solvers=solvers) for triple in noisy]
        return recovered_descriptor(recs), z_hat


_WORKER_SETUP = None


def _init_worker(setup):
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _worker(args):
    return _evaluate(_WORKER_SETUP, *args)


def _evaluate(setup: ClassificationSetup, level_index, level, trial):
    try:
        d_hat, z_hat = setup.run_trial(level_index, level, trial)
        m = match(d_hat, setup.dictionary)
        return trial, [m.distances[k] for k in setup.dictionary.labels], m.best, None
    except EddyscopeError as exc:
        return trial, None, None, f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True, eq=False)
class ClassificationResult:
    labels: list
    noise_levels: np.ndarray
    mean_distance: np.ndarray  # (levels, labels)
    accuracy: np.ndarray
    best: list  # argmin label of mean distances per level
    failures: list  # (level, trial, message)
    trials: int
    true_label: str | None = None

    def rows(self):
        """``(noise_level, label, mean_distance, accuracy)`` rows."""
        for i, lv in enumerate(self.noise_levels):
            for j, lab in enumerate(self.labels):
                yield float(lv), lab, float(self.mean_distance[i, j]), float(self.accuracy[i])


def classify_experiment(setup: ClassificationSetup, noise_levels, trials: int,
                        true_label: str | None = None, jobs: int = 1
                        ) -> ClassificationResult:
    """Run the whole pipeline ``trials`` times per noise level.

    Mean distances and accuracy are reduced in trial order, so the result
    does not depend on ``jobs``.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    labels = setup.dictionary.labels
    levels = np.asarray(noise_levels, float)
    means = np.zeros((len(levels), len(labels)))
    acc = np.zeros(len(levels))
    best, failures = [], []
    pool = None
    if jobs > 1:
        setup.steer  # build once before pickling
        pool = ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(setup,))
    try:
        for i, lv in enumerate(levels):
            tasks = [(i, lv, t) for t in range(trials)]
            if pool is None:
                out = [_evaluate(setup, *a) for a in tasks]
            else:
                out = list(pool.map(_worker, tasks, chunksize=max(1, trials // (4 * jobs))))
            out.sort(key=lambda r: r[0])
            good = [r for r in out if r[1] is not None]
            failures += [(float(lv), r[0], r[3]) for r in out if r[1] is None]
            if good:
                means[i] = np.mean([r[1] for r in good], axis=0)
                if true_label is not None:
                    acc[i] = np.mean([r[2] == true_label for r in good])
            else:
                means[i] = np.nan
            order = sorted(range(len(labels)), key=lambda j: (means[i, j], labels[j]))
            best.append(labels[order[0]])
            log.info("noise %.3g: best %s accuracy %.3f", lv, best[-1], acc[i])
    finally:
        if pool is not None:
            pool.shutdown()
    return ClassificationResult(labels, levels, means, acc, best, failures, trials,
                                true_label)


def default_jobs() -> int:
    return os.cpu_count() or 1
