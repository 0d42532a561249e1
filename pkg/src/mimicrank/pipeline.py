"""Config-driven end-to-end runs: index, annotate, train, rank, evaluate.

Every run directory is reproducible from its manifest: the manifest records
the resolved configuration, its hash, and the seed plan (all component
seeds are fixed offsets from one master seed). No artifact embeds
timestamps or machine-local paths, so reruns are byte-identical.
"""

import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, seeding
from .corpus import (
    INDEX_VERSION,
    annotate_pools,
    annotate_queries,
    build_index,
    read_annotations,
    read_corpus,
    read_queries,
    save_index,
    write_annotations,
)
from .distill import distill
from .evaluation import evaluate, format_metric_table, read_qrels, write_run
from .nn import NETWORK_VERSION
from .private import (
    PrivacyConfig,
    file_sha256,
    load_ensemble,
    noisy_aggregate,
    pairwise_agreement,
    partition_data,
    pate_distill,
    save_ensemble,
    teacher_mean,
    train_teachers,
)
from .ranker import (
    MODEL_VERSION,
    RankModelConfig,
    STUDENT_CONFIG,
    TEACHER_CONFIG,
    init_params,
    load_model,
    rank_by_scores,
    save_model,
    score,
    train,
)

MODES = ("weak", "supervised", "distill", "pate")

# component seeds = master seed + fixed offset (recorded in the manifest)
SEED_OFFSETS = {
    "weak_annotation": 1000,
    "supervised_pairs": 1500,
    "partition": 2000,
    "teacher_base": 3000,
    "distill": 4000,
    "privacy_noise": 5000,
}

EVAL_NOISE_TAG = 8  # per-eval-query noise streams, distinct from annotation's


class ConfigError(ValueError):
    pass


def seed_plan(master_seed):
    return {name: master_seed + off for name, off in SEED_OFFSETS.items()}


@dataclass
class RunConfig:
    corpus: Path
    out: Path
    seed: int
    queries_train: Path = None
    queries_unlabeled: Path = None
    queries_eval: Path = None
    qrels: Path = None
    embeddings: Path = None
    teacher: RankModelConfig = TEACHER_CONFIG
    student: RankModelConfig = STUDENT_CONFIG
    n_partitions: int = 3
    noise_scale: float = 0.05
    pool_size: int = 100
    pairs_per_query: int = 20
    teacher_epochs: int = 10
    student_epochs: int = 10
    rank_pool_size: int = 100
    rank_cutoff: int = 100
    heldout_fraction: float = 0.1
    eval_k: int = 20
    skip_empty: bool = False


_MODEL_FIELDS = {
    "embedding_dim": int,
    "hidden_layers": int,
    "hidden_size": int,
    "dropout_keep": float,
    "learning_rate": float,
    "batch_size": int,
}

_SCHEMA = {
    "corpus": ("corpus", "path"),
    "queries.train": ("queries_train", "path"),
    "queries.unlabeled": ("queries_unlabeled", "path"),
    "queries.eval": ("queries_eval", "path"),
    "qrels": ("qrels", "path"),
    "embeddings": ("embeddings", "path"),
    "out": ("out", "outpath"),
    "seed": ("seed", int),
    "privacy.n_partitions": ("n_partitions", int),
    "privacy.noise_scale": ("noise_scale", float),
    "annotate.pool_size": ("pool_size", int),
    "annotate.pairs_per_query": ("pairs_per_query", int),
    "epochs.teacher": ("teacher_epochs", int),
    "epochs.student": ("student_epochs", int),
    "rank.pool_size": ("rank_pool_size", int),
    "rank.cutoff": ("rank_cutoff", int),
    "distill.heldout_fraction": ("heldout_fraction", float),
    "evaluate.k": ("eval_k", int),
    "evaluate.skip_empty": ("skip_empty", bool),
}


def _parse_bool(raw, key):
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _read_flat(path):
    """Flat `dotted.key = value` lines; '#' starts a comment."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in stripped.split("=", 1))
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    return raw


def _resolve(raw, base):
    """Typed (kwargs, teacher_overrides, student_overrides) from raw strings."""
    kwargs = {}
    teacher_kwargs = {}
    student_kwargs = {}
    for key, value in raw.items():
        for prefix, sink in (("teacher.", teacher_kwargs), ("student.", student_kwargs)):
            if key.startswith(prefix):
                field = key[len(prefix):]
                if field not in _MODEL_FIELDS:
                    raise ConfigError(f"unknown config key {key!r}")
                try:
                    sink[field] = _MODEL_FIELDS[field](value)
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
                break
        else:
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            dest, kind = _SCHEMA[key]
            if kind == "path":
                kwargs[dest] = (base / value).resolve()
            elif kind == "outpath":
                kwargs[dest] = Path(value) if Path(value).is_absolute() else base / value
            elif kind is bool:
                kwargs[dest] = _parse_bool(value, key)
            else:
                try:
                    kwargs[dest] = kind(value)
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
    return kwargs, teacher_kwargs, student_kwargs


def parse_config(path, overrides=None):
    """Read a config file into a RunConfig; paths are relative to the file.

    overrides: optional {key: value} applied after the file (CLI flags).
    Unknown keys are rejected by name.
    """
    path = Path(path)
    raw = _read_flat(path)
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    kwargs, teacher_kwargs, student_kwargs = _resolve(raw, path.parent)
    if "corpus" not in kwargs:
        raise ConfigError("config must set corpus")
    if "seed" not in kwargs:
        raise ConfigError("config must set seed (or pass --seed)")
    if kwargs["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    if "out" not in kwargs:
        raise ConfigError("config must set out (or pass --out)")
    kwargs["teacher"] = dataclasses.replace(TEACHER_CONFIG, **teacher_kwargs)
    kwargs["student"] = dataclasses.replace(STUDENT_CONFIG, **student_kwargs)
    return RunConfig(**kwargs)


def read_model_configs(path):
    """teacher.*/student.* sections of a config file, other keys ignored.

    Every key is still validated against the full schema so typos fail here
    exactly as they would in a pipeline run.
    """
    path = Path(path)
    _, teacher_kwargs, student_kwargs = _resolve(_read_flat(path), path.parent)
    return (
        dataclasses.replace(TEACHER_CONFIG, **teacher_kwargs),
        dataclasses.replace(STUDENT_CONFIG, **student_kwargs),
    )


def config_hash(config):
    """Hash of everything that can influence results (the out path cannot)."""
    entries = []
    for field in dataclasses.fields(RunConfig):
        if field.name == "out":
            continue
        value = getattr(config, field.name)
        if isinstance(value, RankModelConfig):
            for sub, subval in sorted(dataclasses.asdict(value).items()):
                entries.append(f"{field.name}.{sub}={subval}")
        elif isinstance(value, Path):
            entries.append(f"{field.name}={value.name}")
        else:
            entries.append(f"{field.name}={value}")
    canon = "\n".join(sorted(entries)) + "\n"
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _require(config, mode, *fields):
    for name in fields:
        if getattr(config, name) is None:
            key = {v[0]: k for k, v in _SCHEMA.items()}[name]
            raise ConfigError(f"mode {mode!r} requires config key {key!r}")
    for name in ("corpus", "queries_train", "queries_unlabeled", "queries_eval",
                 "qrels", "embeddings"):
        value = getattr(config, name)
        if value is not None and not Path(value).exists():
            raise FileNotFoundError(f"config path {name}: {value} does not exist")


class _StageRunner:
    """Runs named stages; on failure drops a FAILED marker and re-raises."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.completed = []

    def run(self, name, fn):
        try:
            result = fn()
        except Exception as exc:
            marker = self.out_dir / "FAILED"
            marker.write_text(
                f"stage: {name}\nerror: {type(exc).__name__}: {exc}\n"
                f"completed: {', '.join(self.completed) or '(none)'}\n",
                encoding="utf-8",
            )
            raise
        self.completed.append(name)
        return result


def bm25_run(index, queries, cutoff):
    run = {}
    for q in queries:
        doc_idxs, scores = index.search(q.terms, cutoff)
        run[q.query_id] = [(index.doc_ids[d], s) for d, s in zip(doc_idxs, scores)]
    return run


def model_run(index, queries, scorer, pool_size, cutoff, jobs=1):
    """BM25 recall pool re-ranked by scorer(query_terms, doc_terms, qpos).

    Results are independent of jobs as long as the scorer is a pure function
    of its arguments (each query is scored whole by one worker).
    """

    def one(args):
        qpos, q = args
        pool, _ = index.search(q.terms, pool_size)
        scored = [
            (index.doc_ids[d], scorer(q.terms, index.doc_terms(d), qpos))
            for d in pool
        ]
        return q.query_id, rank_by_scores(scored, cutoff)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            pairs = list(ex.map(one, enumerate(queries)))
    else:
        pairs = [one(item) for item in enumerate(queries)]
    return dict(pairs)


def model_scorer(params):
    return lambda q_terms, d_terms, qpos: score(params, q_terms, d_terms)


def _eval_pairs(index, queries, depth=6):
    """Deterministic (q, d1, d2) sample: adjacent docs in each BM25 pool."""
    pairs = []
    for q in queries:
        pool, _ = index.search(q.terms, depth)
        for i in range(len(pool) - 1):
            pairs.append(
                (q.terms, index.doc_terms(pool[i]), index.doc_terms(pool[i + 1]))
            )
    return pairs


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(config, mode, jobs=1):
    """Execute one pipeline mode into config.out; returns the report dict."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    _require(config, mode, "queries_eval", "qrels")
    if mode in ("weak", "supervised", "distill", "pate"):
        _require(config, mode, "queries_train")
    if mode in ("supervised", "distill", "pate"):
        _require(config, mode, "queries_unlabeled")

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    failed_marker = out / "FAILED"
    if failed_marker.exists():
        failed_marker.unlink()
    for sub in ("annotations", "checkpoints", "runs"):
        (out / sub).mkdir(exist_ok=True)

    plan = seed_plan(config.seed)
    input_hashes = {
        name: file_sha256(value)
        for name, value in (
            ("corpus", config.corpus),
            ("queries.train", config.queries_train),
            ("queries.unlabeled", config.queries_unlabeled),
            ("queries.eval", config.queries_eval),
            ("qrels", config.qrels),
            ("embeddings", config.embeddings),
        )
        if value is not None
    }
    manifest = {
        "mode": mode,
        "seed": config.seed,
        "seed_plan": plan,
        "config_hash": config_hash(config),
        "input_hashes": input_hashes,
        "config": {
            k: (v.name if isinstance(v, Path) else v)
            for k, v in dataclasses.asdict(config).items()
            if k != "out"
        },
        "versions": {
            "package": __version__,
            "index_format": INDEX_VERSION,
            "model_format": MODEL_VERSION,
            "network_format": NETWORK_VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    _write_json(out / "manifest.json", manifest)

    stages = _StageRunner(out)
    report = {"mode": mode, "config_hash": manifest["config_hash"]}

    # index
    def build():
        documents = read_corpus(config.corpus)
        index = build_index(documents)
        save_index(out / "index.bin", index)
        return index

    index = stages.run("build-index", build)

    train_queries = read_queries(config.queries_train)
    eval_queries = read_queries(config.queries_eval)
    qrels = read_qrels(config.qrels)

    # teacher training pairs
    def annotate():
        if mode == "supervised":
            def grade_labels(query, pool, qpos):
                judged = qrels.get(query.query_id, {})
                return [float(judged.get(index.doc_ids[d], 0)) for d in pool]

            instances, ann_report = annotate_pools(
                index, train_queries, grade_labels, config.pool_size,
                config.pairs_per_query, plan["supervised_pairs"], jobs=jobs,
            )
        else:
            instances, ann_report = annotate_queries(
                index, train_queries, config.pool_size, config.pairs_per_query,
                seed=plan["weak_annotation"], jobs=jobs,
            )
        path = out / "annotations" / "train.tsv"
        write_annotations(path, instances)
        # the file is the artifact of record: reload it so training consumes
        # exactly what a later rerun would read
        loaded, dropped = read_annotations(path, train_queries, index)
        report["annotation"] = ann_report.as_dict()
        report["annotation"]["rounded_ties_dropped"] = dropped
        if not loaded:
            raise ConfigError("annotation produced no usable training pairs")
        return loaded

    instances = stages.run("annotate", annotate)

    # teachers
    ensemble = None

    def train_single_teacher():
        shard = partition_data(instances, 1, plan["partition"])[0]
        params = init_params(
            config.teacher, index.vocabulary, index,
            embedding_file=config.embeddings, seed=plan["teacher_base"],
        )
        result = train(params, config.teacher, shard, config.teacher_epochs,
                       seed=plan["teacher_base"])
        save_model(out / "checkpoints" / "teacher.ckpt", params)
        report["teacher_epoch_losses"] = result.epoch_losses
        return load_model(out / "checkpoints" / "teacher.ckpt")

    def train_ensemble():
        n = config.n_partitions
        shards = partition_data(instances, n, plan["partition"])
        (out / "shards").mkdir(exist_ok=True)
        hashes = []
        for i, shard in enumerate(shards):
            shard_path = out / "shards" / f"shard_{i:02d}.tsv"
            write_annotations(shard_path, shard)
            hashes.append(file_sha256(shard_path))
        privacy = PrivacyConfig(n_partitions=n, noise_scale=config.noise_scale,
                                seed=plan["privacy_noise"])
        ens = train_teachers(
            shards, config.teacher, index, config.teacher_epochs,
            base_seed=plan["teacher_base"], embedding_file=config.embeddings,
            privacy_config=privacy,
        )
        seeds = [plan["teacher_base"] + i for i in range(n)]
        save_ensemble(out / "checkpoints" / "ensemble", ens,
                      teacher_seeds=seeds, shard_hashes=hashes)
        report["shard_sizes"] = [len(s) for s in shards]
        report["shard_hashes"] = hashes
        # reload from disk: downstream consumes the persisted artifact
        loaded, _ = load_ensemble(out / "checkpoints" / "ensemble")
        return loaded

    if mode == "pate":
        ensemble = stages.run("train-teachers", train_ensemble)
        teacher = None
    else:
        teacher = stages.run("train-teacher", train_single_teacher)

    # student
    student = None
    if mode in ("supervised", "distill", "pate"):
        unlabeled = read_queries(config.queries_unlabeled)

        def distill_student():
            if mode == "pate":
                result = pate_distill(
                    ensemble, config.student, unlabeled, index,
                    config.student_epochs, plan["distill"],
                    pool_size=config.pool_size,
                    pairs_per_query=config.pairs_per_query,
                    heldout_fraction=config.heldout_fraction,
                    embedding_file=config.embeddings,
                )
            else:
                result = distill(
                    teacher, config.student, unlabeled, index,
                    config.student_epochs, plan["distill"],
                    pool_size=config.pool_size,
                    pairs_per_query=config.pairs_per_query,
                    heldout_fraction=config.heldout_fraction,
                    embedding_file=config.embeddings,
                )
            write_annotations(out / "annotations" / "soft.tsv", result.instances)
            save_model(out / "checkpoints" / "student.ckpt", result.student)
            report["soft_annotation"] = result.annotation.as_dict()
            report["fidelity"] = result.fidelity
            report["student_epoch_losses"] = result.epoch_losses
            report["student_pairs"] = {
                "train": result.train_count, "heldout": result.heldout_count,
            }
            return load_model(out / "checkpoints" / "student.ckpt")

        student = stages.run("distill", distill_student)

    # run files
    def write_runs():
        runs = {}
        runs["bm25"] = bm25_run(index, eval_queries, config.rank_cutoff)
        if teacher is not None:
            runs["teacher"] = model_run(
                index, eval_queries, model_scorer(teacher),
                config.rank_pool_size, config.rank_cutoff, jobs,
            )
        if ensemble is not None:
            for i, t in enumerate(ensemble.teachers):
                runs[f"teacher_{i:02d}"] = model_run(
                    index, eval_queries, model_scorer(t),
                    config.rank_pool_size, config.rank_cutoff, jobs,
                )
            runs["aggregate"] = model_run(
                index, eval_queries,
                lambda q, d, qpos: teacher_mean(ensemble, q, d),
                config.rank_pool_size, config.rank_cutoff, jobs,
            )

            # one noise stream per eval query; draws advance positionally
            # through the query's candidate pool, so this run is sequential
            rngs = {}

            def noisy_scorer(q_terms, d_terms, qpos):
                rng = rngs.get(qpos)
                if rng is None:
                    rng = rngs[qpos] = seeding.rng(
                        plan["privacy_noise"], qpos, EVAL_NOISE_TAG
                    )
                return noisy_aggregate(ensemble, q_terms, d_terms, rng)

            if ensemble.config.noise_scale > 0:
                runs["aggregate_noisy"] = model_run(
                    index, eval_queries, noisy_scorer,
                    config.rank_pool_size, config.rank_cutoff, jobs=1,
                )
            else:
                runs["aggregate_noisy"] = runs["aggregate"]
        if student is not None:
            runs["student"] = model_run(
                index, eval_queries, model_scorer(student),
                config.rank_pool_size, config.rank_cutoff, jobs,
            )
        for name, run in runs.items():
            write_run(out / "runs" / f"{name}.run", run, tag=name)
        return runs

    runs = stages.run("rank", write_runs)

    # metrics: the sole consumer of qrels on the distill and pate paths
    def evaluate_all():
        reports = {
            name: evaluate(run, qrels, k=config.eval_k, skip_empty=config.skip_empty)
            for name, run in runs.items()
        }
        metrics = {}
        if ensemble is not None:
            teacher_names = [f"teacher_{i:02d}" for i in range(len(ensemble.teachers))]
            avg = _AvgRow(
                mean_ap=sum(reports[n].mean_ap for n in teacher_names)
                / len(teacher_names),
                mean_p_at_k=sum(reports[n].mean_p_at_k for n in teacher_names)
                / len(teacher_names),
                mean_ndcg_at_k=sum(reports[n].mean_ndcg_at_k for n in teacher_names)
                / len(teacher_names),
            )
            metrics["teachers_avg"] = {
                "map": avg.mean_ap,
                "p_at_k": avg.mean_p_at_k,
                "ndcg_at_k": avg.mean_ndcg_at_k,
            }
            rows = [
                ("teachers avg", avg),
                ("aggregate non-noisy", reports["aggregate"]),
                ("aggregate noisy", reports["aggregate_noisy"]),
                ("student", reports["student"]),
            ]
            # exactness property: the noise-free aggregate must order pairs
            # exactly like the plain teacher mean
            pairs = _eval_pairs(index, eval_queries)
            quiet = PrivacyConfig(
                n_partitions=ensemble.config.n_partitions, noise_scale=0.0,
                seed=ensemble.config.seed,
            )
            quiet_ensemble = dataclasses.replace(ensemble, config=quiet)
            report["agreement_nonnoisy_vs_mean"] = pairwise_agreement(
                lambda q, d: noisy_aggregate(quiet_ensemble, q, d),
                lambda q, d: teacher_mean(ensemble, q, d),
                pairs,
            )
            report["noisy_vs_nonnoisy"] = {
                "map_delta": reports["aggregate_noisy"].mean_ap
                - reports["aggregate"].mean_ap,
                "ndcg_delta": reports["aggregate_noisy"].mean_ndcg_at_k
                - reports["aggregate"].mean_ndcg_at_k,
            }
        else:
            rows = [("bm25", reports["bm25"]), ("teacher", reports["teacher"])]
            if student is not None:
                rows.append(("student", reports["student"]))

        table = format_metric_table(rows, k=config.eval_k)
        (out / "metrics.txt").write_text(table, encoding="utf-8")
        for name, rep in reports.items():
            metrics[name] = {
                "map": rep.mean_ap,
                "p_at_k": rep.mean_p_at_k,
                "ndcg_at_k": rep.mean_ndcg_at_k,
                "query_count": rep.query_count,
                "warnings": rep.warnings,
            }
        _write_json(out / "metrics.json", metrics)
        report["metrics"] = metrics
        _write_json(out / "report.json", report)
        return table

    table = stages.run("evaluate", evaluate_all)
    report["metrics_table"] = table
    return report


@dataclass
class _AvgRow:
    mean_ap: float
    mean_p_at_k: float
    mean_ndcg_at_k: float
