"""Shared fixtures plus the acceptance-verdict summary hook."""

import pytest

from mimicrank.corpus import annotate_queries, build_index
from mimicrank.ranker import RankModelConfig, init_params, train
from mimicrank.toydata import synthetic_collection


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    verdicts = item.config.stash.setdefault(_ACCEPTANCE_KEY, {})
    number, label = marker.args
    if report.when == "call":
        verdicts[number] = (label, report.passed)
    elif report.failed:  # setup or teardown error
        verdicts[number] = (label, False)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_ACCEPTANCE_KEY, None)
    if not verdicts:
        return
    terminalreporter.ensure_newline()
    for number in sorted(verdicts):
        label, passed = verdicts[number]
        terminalreporter.write_line(
            f"[acceptance] criterion {number} ({label}): "
            f"{'PASS' if passed else 'FAIL'}"
        )


_ACCEPTANCE_KEY = pytest.StashKey()

MICRO_TEACHER_CONFIG = RankModelConfig(
    embedding_dim=8, hidden_layers=1, hidden_size=16,
    dropout_keep=1.0, learning_rate=5e-3, batch_size=64,
)
MICRO_STUDENT_CONFIG = RankModelConfig(
    embedding_dim=6, hidden_layers=1, hidden_size=8,
    dropout_keep=1.0, learning_rate=5e-3, batch_size=64,
)


@pytest.fixture(scope="session")
def micro_collection():
    return synthetic_collection(
        n_docs=90, n_topics=3, n_train=12, n_unlabeled=12, n_eval=6,
        seed=5, topic_terms=12, background_terms=40, doc_len_range=(15, 31),
    )


@pytest.fixture(scope="session")
def micro_index(micro_collection):
    return build_index(micro_collection.documents)


@pytest.fixture(scope="session")
def micro_teacher(micro_collection, micro_index):
    instances, _ = annotate_queries(
        micro_index, micro_collection.train_queries,
        pool_size=20, pairs_per_query=10, seed=17,
    )
    params = init_params(MICRO_TEACHER_CONFIG, micro_index.vocabulary,
                         micro_index, seed=23)
    train(params, MICRO_TEACHER_CONFIG, instances, epochs=5, seed=29)
    return params
