"""Weighted bag-of-embeddings ranker trained with a pairwise hinge loss.

A query or document is represented as the weighted sum of its term
embeddings (per-term scalar weights initialized from IDF). The scorer is a
dense ReLU stack over [query repr ‖ doc repr] ending in a single tanh unit,
trained on score-labeled document pairs and applied pointwise at inference.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import nn, seeding
from .serialize import read_container, write_container
from .corpus import Vocabulary

MODEL_MAGIC = b"MRMD"
MODEL_VERSION = 1


@dataclass(frozen=True)
class RankModelConfig:
    embedding_dim: int = 500
    hidden_layers: int = 3
    hidden_size: int = 512
    dropout_keep: float = 0.8
    learning_rate: float = 1e-3
    batch_size: int = 512
    train_embeddings: bool = True
    train_term_weights: bool = True

    def __post_init__(self):
        for name in ("embedding_dim", "hidden_layers", "hidden_size", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")


TEACHER_CONFIG = RankModelConfig(
    embedding_dim=500, hidden_layers=3, hidden_size=512, dropout_keep=0.8,
    learning_rate=1e-3, batch_size=512,
)
STUDENT_CONFIG = RankModelConfig(
    embedding_dim=300, hidden_layers=3, hidden_size=128, dropout_keep=0.9,
    learning_rate=1e-3, batch_size=512,
)


@dataclass
class RankModelParams:
    config: RankModelConfig
    vocabulary: Vocabulary
    embedding: np.ndarray  # (|V|, m)
    term_weights: np.ndarray  # (|V|,)
    layers: list

    def __post_init__(self):
        m = self.config.embedding_dim
        if self.embedding.shape != (len(self.vocabulary), m):
            raise ValueError(
                f"embedding shape {self.embedding.shape} != "
                f"({len(self.vocabulary)}, {m})"
            )
        if self.term_weights.shape != (len(self.vocabulary),):
            raise ValueError("term_weights must have one entry per vocabulary term")
        if self.layers[0].in_dim != 2 * m:
            raise ValueError(
                f"first dense layer expects {self.layers[0].in_dim} inputs, "
                f"need {2 * m} (query repr ‖ doc repr)"
            )
        if self.layers[-1].out_dim != 1 or self.layers[-1].activation != "tanh":
            raise ValueError("output layer must be a single tanh unit")

    def copy(self):
        return RankModelParams(
            config=self.config,
            vocabulary=self.vocabulary,
            embedding=self.embedding.copy(),
            term_weights=self.term_weights.copy(),
            layers=[
                nn.DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
                for l in self.layers
            ],
        )


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss.

    Carries the parameters as of the last completed epoch so callers can
    keep the most recent good checkpoint.
    """

    def __init__(self, message, last_good, epoch):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


def term_index_counts(vocabulary, terms, _cache=None):
    """Canonical (sorted unique term indices, counts) for a term multiset.

    OOV terms are dropped. The sorted-unique form fixes the summation order
    so representations are bit-identical regardless of input term order.
    """
    if _cache is not None and terms in _cache:
        return _cache[terms]
    idx = [vocabulary.index_of(t) for t in terms]
    idx = [i for i in idx if i is not None]
    if idx:
        uniq, counts = np.unique(np.asarray(idx, dtype=np.int64), return_counts=True)
        pair = (uniq, counts.astype(np.float64))
    else:
        pair = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))
    if _cache is not None:
        _cache[terms] = pair
    return pair


def represent(params, terms, _cache=None):
    """Weighted bag of embeddings: Σ count(t)·ω(t)·ε(t); empty/OOV → zeros."""
    idx, counts = term_index_counts(params.vocabulary, tuple(terms), _cache)
    if idx.size == 0:
        return np.zeros(params.config.embedding_dim)
    w = counts * params.term_weights[idx]
    return w @ params.embedding[idx]


def score(params, query_terms, doc_terms):
    """Pointwise score in (−1, 1); inference only, no dropout."""
    x = np.concatenate([represent(params, query_terms), represent(params, doc_terms)])
    out, _ = nn.forward(params.layers, x)
    return float(out[0])


def hinge_loss(instances, pair_scores):
    """(1/|b|) Σ max{0, 1 − sign(s1−s2)·(S1−S2)} over the batch.

    pair_scores: (S1, S2) arrays aligned with instances. Label ties are
    rejected: sign(0) would turn the term into a gradient-free constant.
    """
    s1_labels = np.array([inst.s1 for inst in instances])
    s2_labels = np.array([inst.s2 for inst in instances])
    if (s1_labels == s2_labels).any():
        raise ValueError("tied label scores in batch")
    sign = np.where(s1_labels > s2_labels, 1.0, -1.0)
    big_s1, big_s2 = (np.asarray(a, dtype=np.float64) for a in pair_scores)
    terms = np.maximum(0.0, 1.0 - sign * (big_s1 - big_s2))
    return float(terms.mean())


def compute_loss_and_grads(params, batch, train=False, rng=None, _cache=None):
    """Shared-parameter forward on (q,d1) and (q,d2), hinge loss, gradients.

    Returns (loss, grads) where grads is a dict with d_embedding,
    d_term_weights, and d_layers (a GradientStore-shaped pair of lists).
    Dropout runs only when train=True.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    m = params.config.embedding_dim
    if _cache is None:
        _cache = {}
    q_arrays = [term_index_counts(params.vocabulary, inst.query_terms, _cache) for inst in batch]
    d1_arrays = [term_index_counts(params.vocabulary, inst.doc1_terms, _cache) for inst in batch]
    d2_arrays = [term_index_counts(params.vocabulary, inst.doc2_terms, _cache) for inst in batch]

    def rep(pair):
        idx, counts = pair
        if idx.size == 0:
            return np.zeros(m)
        return (counts * params.term_weights[idx]) @ params.embedding[idx]

    q_reps = np.stack([rep(p) for p in q_arrays])
    x1 = np.concatenate([q_reps, np.stack([rep(p) for p in d1_arrays])], axis=1)
    x2 = np.concatenate([q_reps, np.stack([rep(p) for p in d2_arrays])], axis=1)

    keep = params.config.dropout_keep if train else 1.0
    out1, cache1 = nn.forward(params.layers, x1, dropout_keep=keep, train=train, rng=rng)
    out2, cache2 = nn.forward(params.layers, x2, dropout_keep=keep, train=train, rng=rng)
    big_s1, big_s2 = out1[:, 0], out2[:, 0]

    sign = np.array([1.0 if inst.s1 > inst.s2 else -1.0 for inst in batch])
    margins = 1.0 - sign * (big_s1 - big_s2)
    active = margins > 0.0  # subgradient 0 exactly at the kink
    loss = float(np.maximum(0.0, margins).mean())

    d_s1 = np.where(active, -sign, 0.0) / n
    d_s2 = np.where(active, sign, 0.0) / n
    store1 = nn.backward(cache1, d_s1[:, None])
    store2 = nn.backward(cache2, d_s2[:, None])

    d_layers_w = [a + b for a, b in zip(store1.d_weights, store2.d_weights)]
    d_layers_b = [a + b for a, b in zip(store1.d_biases, store2.d_biases)]

    d_embedding = np.zeros_like(params.embedding)
    d_term_weights = np.zeros_like(params.term_weights)

    def scatter(pair, d_rep):
        idx, counts = pair
        if idx.size == 0:
            return
        w = counts * params.term_weights[idx]
        d_embedding[idx] += w[:, None] * d_rep
        d_term_weights[idx] += counts * (params.embedding[idx] @ d_rep)

    dx1, dx2 = store1.d_input, store2.d_input
    for i in range(n):
        scatter(q_arrays[i], dx1[i, :m] + dx2[i, :m])
        scatter(d1_arrays[i], dx1[i, m:])
        scatter(d2_arrays[i], dx2[i, m:])

    grads = {
        "d_embedding": d_embedding,
        "d_term_weights": d_term_weights,
        "d_layer_weights": d_layers_w,
        "d_layer_biases": d_layers_b,
    }
    return loss, grads


def _trainable(params):
    """Flat (names, arrays) of what the optimizer updates, fixed order."""
    names, arrays = [], []
    if params.config.train_embeddings:
        names.append("embedding")
        arrays.append(params.embedding)
    if params.config.train_term_weights:
        names.append("term_weights")
        arrays.append(params.term_weights)
    for i, layer in enumerate(params.layers):
        names.append(f"layer_{i}_weights")
        arrays.append(layer.weights)
        names.append(f"layer_{i}_bias")
        arrays.append(layer.bias)
    return names, arrays


def _grad_list(params, grads):
    out = []
    if params.config.train_embeddings:
        out.append(grads["d_embedding"])
    if params.config.train_term_weights:
        out.append(grads["d_term_weights"])
    for dw, db in zip(grads["d_layer_weights"], grads["d_layer_biases"]):
        out.append(dw)
        out.append(db)
    return out


@dataclass
class TrainResult:
    params: RankModelParams
    epoch_losses: list


def train(params, config, instances, epochs, seed):
    """Seeded epoch shuffles, fixed-size batches (last partial kept), Adam.

    Mutates params in place and also returns them. A non-finite loss aborts
    with TrainingDiverged carrying the last epoch-boundary snapshot.
    """
    if not instances:
        raise ValueError("no training instances")
    _, arrays = _trainable(params)
    state = nn.adam_state(arrays, learning_rate=config.learning_rate)
    epoch_losses = []
    cache = {}
    n = len(instances)
    last_good = params.copy()
    for epoch in range(epochs):
        order = seeding.rng(seed, epoch, 0).permutation(n)
        dropout_rng = seeding.rng(seed, epoch, 1)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [instances[i] for i in order[start:start + config.batch_size]]
            loss, grads = compute_loss_and_grads(
                params, batch, train=True, rng=dropout_rng, _cache=cache
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good, epoch
                )
            total += loss * len(batch)
            nn.optimizer_step(arrays, _grad_list(params, grads), state)
        epoch_losses.append(total / n)
        last_good = params.copy()
    return TrainResult(params, epoch_losses)


def rank_by_scores(scored, cutoff, score_transform=None):
    """Order (doc_id, score) pairs: score desc, doc_id asc; truncate.

    score_transform, when given, must be strictly increasing; it is applied
    only at the comparison site, so any such transform yields the same
    permutation (the ordering depends on score order alone).
    """
    key = score_transform if score_transform is not None else (lambda s: s)
    ordered = sorted(scored, key=lambda pair: (-key(pair[1]), pair[0]))
    return ordered[:cutoff] if cutoff is not None else ordered


def rank(params, query_terms, candidates, cutoff=None, score_transform=None):
    """Score candidates (doc_id, terms) pointwise and order them."""
    if not candidates:
        raise ValueError("no candidates to rank")
    scored = [(doc_id, score(params, query_terms, terms)) for doc_id, terms in candidates]
    return rank_by_scores(scored, cutoff, score_transform)


# ---------------------------------------------------------------------------
# Initialization


def load_embedding_file(path):
    """Text embeddings: optional `<count> <dim>` header, then `token v1..vm`.

    Returns (dict token -> vector, dim).
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header line
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed vector") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension {vec.size} != {dim}"
                )
            vectors[token] = vec
    return vectors, dim


def init_params(config, vocabulary, index, embedding_file=None, seed=0):
    """Random ±0.1 embeddings overridden by file vectors; ω from IDF.

    The embedding file, when given, must match config.embedding_dim exactly;
    tokens absent from the file keep their random rows.
    """
    emb_rng = seeding.rng(seed, 0)
    dense_rng = seeding.rng(seed, 1)
    n_vocab = len(vocabulary)
    embedding = emb_rng.uniform(-0.1, 0.1, size=(n_vocab, config.embedding_dim))
    if embedding_file is not None:
        vectors, dim = load_embedding_file(embedding_file)
        if dim is not None and dim != config.embedding_dim:
            raise ValueError(
                f"embedding file dimension {dim} != configured "
                f"{config.embedding_dim}"
            )
        for t, term in enumerate(vocabulary.terms):
            vec = vectors.get(term)
            if vec is not None:
                embedding[t] = vec
    term_weights = np.array([index.idf(term) for term in vocabulary.terms])
    dims = [2 * config.embedding_dim] + [config.hidden_size] * config.hidden_layers + [1]
    acts = ["relu"] * config.hidden_layers + ["tanh"]
    layers = nn.init_layers(dims, acts, dense_rng)
    return RankModelParams(
        config=config,
        vocabulary=vocabulary,
        embedding=embedding,
        term_weights=term_weights,
        layers=layers,
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(path, params):
    meta = {
        "kind": "rank-model",
        "config": dataclasses.asdict(params.config),
        "vocabulary": list(params.vocabulary.terms),
        "activations": [layer.activation for layer in params.layers],
    }
    arrays = [("embedding", params.embedding), ("term_weights", params.term_weights)]
    arrays.extend(nn.layers_to_arrays(params.layers, prefix="layer_"))
    write_container(path, MODEL_MAGIC, MODEL_VERSION, meta, arrays)


def load_model(path):
    _, meta, arrays = read_container(path, MODEL_MAGIC, MODEL_VERSION)
    config = RankModelConfig(**meta["config"])
    layers = nn.layers_from_arrays(meta["activations"], arrays, prefix="layer_")
    return RankModelParams(
        config=config,
        vocabulary=Vocabulary(meta["vocabulary"]),
        embedding=arrays["embedding"],
        term_weights=arrays["term_weights"],
        layers=layers,
    )
