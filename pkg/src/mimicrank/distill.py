"""Teacher-student training: a trained ranker labels unlabeled queries and
a fresh (usually smaller) model learns from those labels.

The student path deliberately has no access to relevance judgments or to
the teacher's original training data: everything it sees is (query terms,
document terms, label scores), where the labels come from whatever labeler
is plugged in. The private-aggregation variant reuses the same machinery
with a noisy ensemble labeler, so the two paths are identical by
construction up to the labeling function.
"""

from dataclasses import dataclass
from pathlib import Path

from . import seeding
from .corpus import annotate_pools
from .ranker import RankModelParams, init_params, load_model, score, train

DEFAULT_POOL_SIZE = 100
DEFAULT_PAIRS_PER_QUERY = 20

# fixed tags extending the caller's seed into independent sub-streams
ANNOTATE_TAG = 0
SPLIT_TAG = 1
INIT_TAG = 2
TRAIN_TAG = 3


@dataclass
class AnnotationJob:
    teacher: RankModelParams
    unlabeled: list
    pool_size: int = DEFAULT_POOL_SIZE
    pairs_per_query: int = DEFAULT_PAIRS_PER_QUERY
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 2:
            raise ValueError("pool_size must be at least 2")


@dataclass
class DistillResult:
    student: RankModelParams
    fidelity: float  # held-out sign agreement with the labels; None if no holdout
    annotation: object  # AnnotationReport from the labeling stage
    epoch_losses: list
    train_count: int
    heldout_count: int
    instances: list  # the soft-labeled instances the student trained on


def _resolve_teacher(teacher):
    if isinstance(teacher, (str, Path)):
        return load_model(teacher)
    return teacher


def teacher_annotate(job, index):
    """Label BM25-pooled candidates with teacher scores; sample pairs.

    Tied teacher scores within a sampled pair discard the pair (counted in
    the report), exactly as BM25 annotation discards tied BM25 scores.
    """
    teacher = _resolve_teacher(job.teacher)

    def teacher_labels(query, pool, qpos):
        return [score(teacher, query.terms, index.doc_terms(d)) for d in pool]

    return annotate_pools(
        index, job.unlabeled, teacher_labels, job.pool_size,
        job.pairs_per_query, job.seed,
    )


def _split_holdout(instances, fraction, seed):
    if fraction <= 0.0 or len(instances) < 2:
        return list(instances), []
    n = len(instances)
    n_held = max(1, int(round(fraction * n)))
    if n_held >= n:
        n_held = n - 1
    order = seeding.rng(seed, SPLIT_TAG).permutation(n)
    held = [instances[i] for i in order[:n_held]]
    kept = [instances[i] for i in order[n_held:]]
    return kept, held


def label_agreement(params, instances):
    """Fraction of instances whose label preference the model reproduces.

    Model ties count as disagreement (the model expresses no preference).
    """
    if not instances:
        return None
    agree = 0
    for inst in instances:
        s1 = score(params, inst.query_terms, inst.doc1_terms)
        s2 = score(params, inst.query_terms, inst.doc2_terms)
        label_prefers_first = inst.s1 > inst.s2
        if s1 != s2 and (s1 > s2) == label_prefers_first:
            agree += 1
    return agree / len(instances)


def mimic_train(label_fn, student_config, unlabeled, index, epochs, seed,
                pool_size=DEFAULT_POOL_SIZE,
                pairs_per_query=DEFAULT_PAIRS_PER_QUERY,
                heldout_fraction=0.1, embedding_file=None):
    """Generic mimic pipeline: label pools, hold out pairs, train a student.

    label_fn(query, pool doc indices, query position) -> score list. Every
    sub-stage derives its randomness from `seed` plus a fixed tag, so two
    labelers that return identical scores produce byte-identical students.
    """
    instances, report = annotate_pools(
        index, unlabeled, label_fn, pool_size, pairs_per_query,
        seeding.entropy(seed, ANNOTATE_TAG),
    )
    if not instances:
        raise ValueError(
            "labeling produced no training pairs "
            f"({report.queries_skipped} of {report.queries_total} queries skipped, "
            f"{report.ties_discarded} tied pairs discarded)"
        )
    train_set, heldout = _split_holdout(instances, heldout_fraction, seed)
    student = init_params(
        student_config, index.vocabulary, index,
        embedding_file=embedding_file, seed=seeding.entropy(seed, INIT_TAG),
    )
    result = train(student, student_config, train_set, epochs,
                   seed=seeding.entropy(seed, TRAIN_TAG))
    fidelity = label_agreement(student, heldout)
    return DistillResult(
        student=student,
        fidelity=fidelity,
        annotation=report,
        epoch_losses=result.epoch_losses,
        train_count=len(train_set),
        heldout_count=len(heldout),
        instances=instances,
    )


def distill(teacher, student_config, unlabeled, index, epochs, seed,
            pool_size=DEFAULT_POOL_SIZE, pairs_per_query=DEFAULT_PAIRS_PER_QUERY,
            heldout_fraction=0.1, embedding_file=None):
    """Train a student on a single teacher's preferences.

    teacher: RankModelParams or a checkpoint path. The fidelity field of
    the result is the held-out pair agreement between student and teacher.
    """
    teacher_params = _resolve_teacher(teacher)

    def teacher_labels(query, pool, qpos):
        return [score(teacher_params, query.terms, index.doc_terms(d)) for d in pool]

    return mimic_train(
        teacher_labels, student_config, unlabeled, index, epochs, seed,
        pool_size=pool_size, pairs_per_query=pairs_per_query,
        heldout_fraction=heldout_fraction, embedding_file=embedding_file,
    )
