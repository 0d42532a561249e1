"""Private aggregation: disjoint teachers, noisy consensus, clean student.

Training pairs are split round-robin into disjoint shards, one teacher per
shard. Consumers only ever see the ensemble's aggregate score with Laplace
noise added per teacher, so no single teacher's behavior (and hence no
single shard's data) is exposed. With the noise turned off the aggregate
equals the plain teacher mean bitwise; with noise on, agreement with the
mean degrades as the scale grows. The student distilled from the noisy
aggregate never touches the shards at all.

Run with: python3 demos/private_ensemble.py  (seconds)
"""

import dataclasses

import numpy as np

from mimicrank.corpus import annotate_queries, build_index
from mimicrank.private import (
    PrivacyConfig,
    noisy_aggregate,
    pairwise_agreement,
    partition_data,
    pate_distill,
    teacher_mean,
    train_teachers,
)
from mimicrank.ranker import RankModelConfig
from mimicrank.toydata import mini_collection

collection = mini_collection()
index = build_index(collection.documents)
instances, _ = annotate_queries(index, collection.train_queries,
                                pool_size=30, pairs_per_query=15, seed=3)

shards = partition_data(instances, 3, seed=5)
print("shard sizes:", [len(s) for s in shards])

model_config = RankModelConfig(embedding_dim=12, hidden_layers=1,
                               hidden_size=16, dropout_keep=1.0,
                               learning_rate=5e-3, batch_size=64)
privacy = PrivacyConfig(n_partitions=3, noise_scale=0.2, seed=5)
ensemble = train_teachers(shards, model_config, index, epochs=8,
                          base_seed=5, privacy_config=privacy)

# pairs to probe agreement on: the annotated pools themselves
pairs = [(i.query_terms, i.doc1_terms, i.doc2_terms) for i in instances[:400]]
quiet = dataclasses.replace(
    ensemble, config=PrivacyConfig(n_partitions=3, noise_scale=0.0, seed=5))
exact = pairwise_agreement(
    lambda q, d: noisy_aggregate(quiet, q, d),
    lambda q, d: teacher_mean(ensemble, q, d), pairs)
print(f"aggregate vs mean, noise 0.0: agreement {exact}")

rng = np.random.default_rng(11)
noisy = pairwise_agreement(
    lambda q, d: noisy_aggregate(ensemble, q, d, rng),
    lambda q, d: teacher_mean(ensemble, q, d), pairs)
print(f"aggregate vs mean, noise {privacy.noise_scale}: agreement {noisy:.4f}")

result = pate_distill(ensemble, model_config, collection.unlabeled_queries,
                      index, epochs=8, seed=13, pool_size=30,
                      pairs_per_query=20)
print(f"student trained on {result.train_count} noisy-labeled pairs, "
      f"held-out agreement {result.fidelity:.4f}")
