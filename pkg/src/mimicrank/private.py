"""Noisy teacher ensembles: partition the data, train independent teachers,
perturb each teacher's score with Laplace noise, aggregate by mean, and
train a student on the aggregated labels only.

The student never sees the partitioned training data; its entire input is
the noisy aggregate score stream. Aggregation sums teacher contributions
left to right so the noise-free path is bit-reproducible.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from . import seeding
from .distill import (
    DEFAULT_PAIRS_PER_QUERY,
    DEFAULT_POOL_SIZE,
    mimic_train,
)
from .ranker import init_params, load_model, save_model, score, train

NOISE_TAG = 7  # extends (seed, query position) into the per-query noise stream

ENSEMBLE_MANIFEST = "manifest.json"


@dataclass(frozen=True)
class PrivacyConfig:
    n_partitions: int = 3
    noise_scale: float = 0.05  # Laplace scale b; 0 disables noise
    seed: int = 0

    def __post_init__(self):
        if self.n_partitions < 1:
            raise ValueError("n_partitions must be at least 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


@dataclass
class TeacherEnsemble:
    teachers: list
    config: PrivacyConfig

    def __post_init__(self):
        if len(self.teachers) != self.config.n_partitions:
            raise ValueError(
                f"{len(self.teachers)} teachers != {self.config.n_partitions} partitions"
            )
        first = self.teachers[0].vocabulary
        for i, t in enumerate(self.teachers[1:], start=1):
            if t.vocabulary != first:
                raise ValueError(f"teacher {i} vocabulary differs from teacher 0")


def partition_data(instances, n, seed):
    """Seeded shuffle then round-robin: disjoint shards, sizes differ ≤ 1."""
    if n < 1:
        raise ValueError("need at least one partition")
    if n > len(instances):
        raise ValueError(
            f"{n} partitions over {len(instances)} instances would leave "
            "a teacher with no data"
        )
    order = seeding.rng(seed).permutation(len(instances))
    shards = [[] for _ in range(n)]
    for j, idx in enumerate(order):
        shards[j % n].append(instances[idx])
    return shards


def train_teachers(shards, model_config, index, epochs, base_seed,
                   embedding_file=None, privacy_config=None):
    """One architecturally identical teacher per shard, seed base_seed + i."""
    if privacy_config is None:
        privacy_config = PrivacyConfig(n_partitions=len(shards))
    if len(shards) != privacy_config.n_partitions:
        raise ValueError("shard count != configured partitions")
    teachers = []
    for i, shard in enumerate(shards):
        if not shard:
            raise ValueError(f"partition {i} is empty")
        params = init_params(
            model_config, index.vocabulary, index,
            embedding_file=embedding_file, seed=base_seed + i,
        )
        train(params, model_config, shard, epochs, seed=base_seed + i)
        teachers.append(params)
    return TeacherEnsemble(teachers=teachers, config=privacy_config)


# ---------------------------------------------------------------------------
# Laplace mechanism


def laplace_sample(scale, u):
    """Inverse-CDF Laplace draw: −scale·sgn(u)·ln(1−2|u|), u ∈ (−0.5, 0.5].

    scale 0 always yields 0. The right endpoint u=0.5 maps to +infinity
    (measure-zero in exact arithmetic; draw_uniform never produces it).
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if not -0.5 < u <= 0.5:
        raise ValueError(f"u={u} outside (-0.5, 0.5]")
    if scale == 0.0 or u == 0.0:
        return 0.0
    if u == 0.5:
        return math.inf
    sgn = 1.0 if u > 0 else -1.0
    return -scale * sgn * math.log(1.0 - 2.0 * abs(u))


def draw_uniform(rng):
    """u uniform on the open interval (−0.5, 0.5); the endpoint is redrawn."""
    u = 0.5 - rng.random()
    while u == 0.5:
        u = 0.5 - rng.random()
    return u


def noisy_teacher_scores(ensemble, query_terms, doc_terms, rng=None):
    """Per-teacher scores with per-teacher noise, in teacher order."""
    scale = ensemble.config.noise_scale
    if scale > 0.0 and rng is None:
        raise ValueError("noise_scale > 0 requires an rng")
    out = []
    for teacher in ensemble.teachers:
        s = score(teacher, query_terms, doc_terms)
        if scale > 0.0:
            s = s + laplace_sample(scale, draw_uniform(rng))
        out.append(s)
    return out


def noisy_aggregate(ensemble, query_terms, doc_terms, rng=None):
    """(1/n)·Σ_i (score_i + Laplace(scale)); noise injected before the mean.

    Summation is left to right over teacher index, so with noise_scale 0
    the result equals teacher_mean bitwise.
    """
    acc = 0.0
    for s in noisy_teacher_scores(ensemble, query_terms, doc_terms, rng):
        acc += s
    return acc / len(ensemble.teachers)


def teacher_mean(ensemble, query_terms, doc_terms):
    """Noise-free mean of teacher scores, same summation order."""
    acc = 0.0
    for teacher in ensemble.teachers:
        acc += score(teacher, query_terms, doc_terms)
    return acc / len(ensemble.teachers)


def pairwise_agreement(score_a, score_b, pairs):
    """Fraction of (q, d1, d2) triples where two scorers order the pair alike.

    A tie from either scorer counts as disagreement unless both tie.
    """
    if not pairs:
        return None
    agree = 0
    for q, d1, d2 in pairs:
        pref_a = _pref(score_a(q, d1), score_a(q, d2))
        pref_b = _pref(score_b(q, d1), score_b(q, d2))
        if pref_a == pref_b:
            agree += 1
    return agree / len(pairs)


def _pref(s1, s2):
    if s1 > s2:
        return 1
    if s1 < s2:
        return -1
    return 0


# ---------------------------------------------------------------------------
# Private distillation


def pate_distill(ensemble, student_config, unlabeled, index, epochs, seed,
                 pool_size=DEFAULT_POOL_SIZE,
                 pairs_per_query=DEFAULT_PAIRS_PER_QUERY,
                 heldout_fraction=0.1, embedding_file=None):
    """distill() with the noisy ensemble as the labeler.

    Per-query noise streams are derived from (privacy seed, query position),
    so annotation order and worker scheduling cannot change the labels.
    Pairs whose noisy scores tie are discarded exactly like any other tie.
    """
    privacy_seed = ensemble.config.seed

    def noisy_labels(query, pool, qpos):
        rng = seeding.rng(privacy_seed, qpos, NOISE_TAG)
        return [
            noisy_aggregate(ensemble, query.terms, index.doc_terms(d), rng)
            for d in pool
        ]

    return mimic_train(
        noisy_labels, student_config, unlabeled, index, epochs, seed,
        pool_size=pool_size, pairs_per_query=pairs_per_query,
        heldout_fraction=heldout_fraction, embedding_file=embedding_file,
    )


# ---------------------------------------------------------------------------
# Ensemble checkpoints


def save_ensemble(directory, ensemble, teacher_seeds=None, shard_hashes=None):
    """Directory of per-teacher checkpoints plus a manifest.

    The manifest records n, noise_scale, seeds, and optional shard content
    hashes; it is written with sorted keys and no timestamps so rewrites
    are byte-identical.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, teacher in enumerate(ensemble.teachers):
        name = f"teacher_{i:02d}.ckpt"
        save_model(directory / name, teacher)
        files.append(name)
    manifest = {
        "kind": "teacher-ensemble",
        "n_partitions": ensemble.config.n_partitions,
        "noise_scale": ensemble.config.noise_scale,
        "seed": ensemble.config.seed,
        "teacher_seeds": teacher_seeds,
        "teacher_files": files,
        "shard_hashes": shard_hashes,
    }
    with open(directory / ENSEMBLE_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory / ENSEMBLE_MANIFEST


def load_ensemble(directory):
    directory = Path(directory)
    with open(directory / ENSEMBLE_MANIFEST, encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = PrivacyConfig(
        n_partitions=manifest["n_partitions"],
        noise_scale=manifest["noise_scale"],
        seed=manifest["seed"],
    )
    teachers = [load_model(directory / name) for name in manifest["teacher_files"]]
    return TeacherEnsemble(teachers=teachers, config=config), manifest


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
