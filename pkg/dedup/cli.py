"""
Command-line interface: ingest, train, dedup, eval, bench, inspect.

Results go to stdout (JSON objects, one per line, or the comparison table);
logs go to stderr. Exit codes: 0 success, 1 usage, 2 data, 3 artifact.
"""

import argparse
import json
import logging
import signal
import statistics
import sys
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np
import psutil
from dotenv import load_dotenv

from dedup import __version__
from dedup.config import ConfigManager, DedupConfig, load_snapshot
from dedup.core.adapters import ADAPTERS, get_adapter
from dedup.core.dataset import (
    DatasetSplit,
    append_dataset,
    chronological_split,
    iter_lines,
    read_dataset,
    write_dataset,
)
from dedup.core.state import CategoryStore, StateDir
from dedup.core.synthetic import generate_dataset, random_traces
from dedup.core.trace import parse_report
from dedup.exceptions import (
    ConfigError,
    DedupError,
    MissingArtifactError,
    ParseError,
    ResourceLimitError,
)
from dedup.models.embedder import EmbedderModel, train_embedder
from dedup.models.nn import AGGREGATIONS, aggregation_width, weights_header
from dedup.models.reranker import RerankerModel, train_reranker
from dedup.modules.evaluation import (
    calibrate_threshold,
    evaluate_pipeline,
    format_table,
    measure_latency,
    replay_validation,
    write_reports,
)
from dedup.modules.index import EmbeddingStore
from dedup.modules.pipeline import (
    DedupEngine,
    LerchPipeline,
    NeuralPipeline,
    RemotePipeline,
    SimilarityPipeline,
    edit_pipeline,
    lcs_pipeline,
    prefix_pipeline,
)
from dedup.modules.remote import RemoteEmbedderClient
from dedup.modules.tokenizer import BpeVocab, TraceTokenizer, train_bpe
from dedup.utils.container import read_header
from dedup.utils.logger import log_event, setup_logging

logger = logging.getLogger("dedup.cli")


def emit(obj: Dict[str, Any]) -> None:
    """Write one JSON object line to stdout."""
    sys.stdout.write(json.dumps(obj, ensure_ascii=False) + "\n")
    sys.stdout.flush()


class InterruptGuard:
    """
    Turn SIGINT and SIGTERM into ``KeyboardInterrupt`` for the guarded block.

    A signal that arrives inside ``critical()`` is held until that section
    finishes, so one decision is never left half applied. Handlers are only
    installed on the main thread.
    """

    SIGNALS = (signal.SIGINT, signal.SIGTERM)

    def __init__(self):
        self.pending = False
        self._busy = False
        self._previous: Dict[int, Any] = {}

    def _handle(self, signum, frame) -> None:
        if self._busy:
            self.pending = True
            return
        raise KeyboardInterrupt

    def __enter__(self) -> "InterruptGuard":
        if threading.current_thread() is threading.main_thread():
            for signum in self.SIGNALS:
                self._previous[signum] = signal.signal(signum, self._handle)
        return self

    def __exit__(self, *exc) -> bool:
        for signum, handler in self._previous.items():
            signal.signal(signum, handler)
        self._previous.clear()
        return False

    @contextmanager
    def critical(self) -> Iterator[None]:
        self._busy = True
        try:
            yield
        finally:
            self._busy = False
        if self.pending:
            self.pending = False
            raise KeyboardInterrupt


def parse_overrides(pairs: Optional[Sequence[str]]) -> Dict[str, Any]:
    """Turn ``key=value`` strings into dotted-key overrides with JSON-typed values."""
    overrides: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not of the form key=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key.strip()] = value
    return overrides


def inference_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    if getattr(args, "k", None) is not None:
        overrides["pipeline.k"] = args.k
    if getattr(args, "search_mode", None):
        overrides["pipeline.search_mode"] = args.search_mode
    if getattr(args, "no_reranker", False):
        overrides["pipeline.use_reranker"] = False
    return overrides


def load_state_config(state: StateDir, args: argparse.Namespace) -> DedupConfig:
    """Snapshot written by ``train`` plus inference-time flags."""
    state.require(state.config_path)
    return load_snapshot(state.config_path, overrides=inference_overrides(args))


def load_tokenizer(state: StateDir, config: DedupConfig) -> TraceTokenizer:
    state.require(state.vocab_path)
    vocab = BpeVocab.load(state.vocab_path)
    return TraceTokenizer(vocab, config.tokenizer.max_frames, config.tokenizer.max_tokens_per_frame)


def load_reranker(state: StateDir, config: DedupConfig) -> Optional[RerankerModel]:
    if not config.pipeline.use_reranker:
        return None
    if not state.reranker_path.exists():
        logger.warning("No reranker weights in state; running retrieval only")
        return None
    return RerankerModel.load(state.reranker_path)


def load_split(state: StateDir, config: DedupConfig) -> DatasetSplit:
    state.require(state.dataset_path)
    summary = read_dataset(state.dataset_path, strict=True)
    return chronological_split(summary.reports, config.eval.ratios)


def neural_pipeline(config: DedupConfig, tokenizer: TraceTokenizer, embedder: EmbedderModel,
                    reranker: Optional[RerankerModel], name: Optional[str] = None) -> NeuralPipeline:
    return NeuralPipeline(tokenizer, embedder, reranker, k=config.pipeline.k,
                          search_mode=config.pipeline.search_mode, index_config=config.index, name=name)


def cmd_ingest(args: argparse.Namespace) -> int:
    """Convert inputs into the native dataset of the state directory."""
    state = StateDir(args.state).ensure()
    malformed: List = []
    if args.adapter == "synthetic":
        reports = generate_dataset(
            n_categories=args.categories,
            reports_per_category=args.per_category,
            seed=args.seed,
        )
    else:
        if not args.inputs:
            raise ConfigError(f"adapter '{args.adapter}' needs at least one input path")
        reports = []
        for path in args.inputs:
            if not Path(path).is_file():
                raise ConfigError(f"cannot read input {path}")
            if args.adapter == "native":
                summary = read_dataset(path, strict=args.strict)
                reports.extend(summary.reports)
                malformed.extend(summary.malformed)
            else:
                converted, bad = get_adapter(args.adapter).convert(path, strict=args.strict)
                reports.extend(converted)
                malformed.extend(bad)

    with state.lock():
        written = write_dataset(state.dataset_path, reports)
    summary = {
        "command": "ingest",
        "adapter": args.adapter,
        "reports": written,
        "categories": len({r.category_id for r in reports if r.category_id is not None}),
        "malformed": len(malformed),
        "malformed_lines": [number for number, _ in malformed],
        "dataset": str(state.dataset_path),
    }
    log_event("ingest finished", reports=written, malformed=len(malformed))
    emit(summary)
    return 0


def _calibrate(pipeline: SimilarityPipeline, split: DatasetSplit) -> Dict[str, Optional[float]]:
    try:
        threshold, f1 = calibrate_threshold(replay_validation(split, pipeline))
    except DedupError as e:
        logger.warning(f"{pipeline.name}: calibration impossible ({e}); threshold falls back to the score floor")
        threshold, f1 = pipeline.score_floor, None
    logger.info(f"{pipeline.name}: threshold={threshold} f1={f1}")
    return {"threshold": threshold, "f1": f1}


def cmd_train(args: argparse.Namespace) -> int:
    """Split, train tokenizer and models, build the index, calibrate thresholds."""
    state = StateDir(args.state)
    state.require(state.dataset_path)

    overrides = parse_overrides(args.set)
    if args.no_reranker:
        overrides["pipeline.use_reranker"] = False
    manager = ConfigManager(args.config, profile=args.profile, overrides=overrides)
    config = manager.config
    ablation = _ablation_modes(args.ablation)

    with state.lock():
        try:
            state.remove_training_artifacts()
            split = load_split(state, config)
            logger.info(f"Split sizes: {split.sizes()}")

            vocab = train_bpe(split.train, config.tokenizer.vocab_size)
            vocab.save(state.vocab_path)
            tokenizer = TraceTokenizer(vocab, config.tokenizer.max_frames, config.tokenizer.max_tokens_per_frame)

            embedder, embedder_history = train_embedder(split, tokenizer, config.embedder)
            embedder.save(state.embedder_path)

            reranker = None
            reranker_history: Dict[str, Any] = {}
            if config.pipeline.use_reranker:
                reranker, reranker_history = train_reranker(split, tokenizer, config.reranker)
                reranker.save(state.reranker_path)

            thresholds = {"embedder": _calibrate(neural_pipeline(config, tokenizer, embedder, None), split)}
            final = neural_pipeline(config, tokenizer, embedder, reranker)
            if reranker is not None:
                thresholds["reranked"] = _calibrate(final, split)
            state.save_thresholds(thresholds)

            final.reset(list(split.history))
            final.store.save(state.index_path)
            write_dataset(state.history_path, split.history)
            CategoryStore.from_reports(split.history).save(state.categories_path)

            for mode in ablation:
                cfg = config.embedder.model_copy(update={"aggregation": mode})
                model, _ = train_embedder(split, tokenizer, cfg)
                state.ablation_dir.mkdir(parents=True, exist_ok=True)
                model.save(state.ablation_dir / f"{mode}.weights")

            manager.save(state.config_path)
        except BaseException:
            logger.error("Training failed; removing partial artifacts")
            state.remove_training_artifacts()
            raise

    summary = {
        "command": "train",
        "splits": split.sizes(),
        "vocab_size": vocab.size,
        "embedder": {"best_epoch": embedder_history.get("best_epoch"), "best_mrr": embedder_history.get("best_mrr")},
        "reranker": {"best_epoch": reranker_history.get("best_epoch")} if reranker is not None else None,
        "thresholds": thresholds,
        "ablation": ablation,
    }
    emit(summary)
    return 0


def _ablation_modes(value: Optional[str]) -> List[str]:
    if not value:
        return []
    modes = list(AGGREGATIONS) if value == "all" else [m.strip() for m in value.split(",") if m.strip()]
    unknown = [m for m in modes if m not in AGGREGATIONS]
    if unknown:
        raise ConfigError(f"unknown aggregation modes {unknown}; expected {list(AGGREGATIONS)}")
    return modes


def cmd_dedup(args: argparse.Namespace) -> int:
    """Process incoming reports one by one and persist the updated state."""
    state = StateDir(args.state)
    config = load_state_config(state, args)
    state.require(state.embedder_path, state.index_path, state.categories_path, state.history_path)

    with state.lock():
        tokenizer = load_tokenizer(state, config)
        embedder = EmbedderModel.load(state.embedder_path)
        reranker = load_reranker(state, config)
        pipeline = neural_pipeline(config, tokenizer, embedder, reranker)
        history = read_dataset(state.history_path, strict=True).reports
        pipeline.use_store(EmbeddingStore.load(state.index_path, config.index), history)
        categories = CategoryStore.load(state.categories_path)
        threshold = state.load_threshold(pipeline.name)
        engine = DedupEngine(pipeline, threshold, categories)

        source = sys.stdin if args.input == "-" else open(args.input, "r", encoding="utf-8")
        processed = []
        with InterruptGuard() as guard:
            try:
                for number, line in enumerate(source, start=1):
                    if not line.strip():
                        continue
                    try:
                        report = parse_report(line, line_number=number)
                    except ParseError as e:
                        emit({"error": str(e), "line": number, "field": e.field})
                        continue
                    if report.report_id in pipeline.category_of:
                        emit({"error": f"report '{report.report_id}' already stored", "line": number})
                        continue
                    with guard.critical():
                        decision = engine.process(report)
                        processed.append(report.with_category(decision.category_id))
                        emit(decision.to_dict())
                    log_event("dedup decision", level=logging.DEBUG, **decision.to_dict())
            finally:
                if source is not sys.stdin:
                    source.close()
                # persist every decision made so far, interrupted or not
                with guard.critical():
                    if processed:
                        pipeline.store.save(state.index_path)
                        categories.save(state.categories_path)
                        append_dataset(state.history_path, processed)
                    log_event("dedup finished", processed=len(processed), categories=len(categories))
    return 0


def build_variant(name: str, config: DedupConfig, state: StateDir,
                  cache: Dict[str, Any]) -> SimilarityPipeline:
    """Pipeline for one eval variant; neural artifacts are loaded on demand."""
    if name == "lerch":
        return LerchPipeline()
    if name == "edit":
        return edit_pipeline()
    if name == "prefix":
        return prefix_pipeline()
    if name == "lcs":
        return lcs_pipeline()
    if name == "remote":
        if not config.remote.enabled:
            raise ConfigError("variant 'remote' needs remote.enabled and an endpoint")
        return RemotePipeline(RemoteEmbedderClient(config.remote), k=config.pipeline.k)

    if "tokenizer" not in cache:
        cache["tokenizer"] = load_tokenizer(state, config)
    tokenizer = cache["tokenizer"]
    if name.startswith("embedder-"):
        mode = name.split("-", 1)[1]
        path = state.ablation_dir / f"{mode}.weights"
        state.require(path)
        return neural_pipeline(config, tokenizer, EmbedderModel.load(path), None, name=name)
    if "embedder" not in cache:
        state.require(state.embedder_path)
        cache["embedder"] = EmbedderModel.load(state.embedder_path)
    if name == "embedder":
        return neural_pipeline(config, tokenizer, cache["embedder"], None)
    if name == "reranked":
        state.require(state.reranker_path)
        return neural_pipeline(config, tokenizer, cache["embedder"], RerankerModel.load(state.reranker_path))
    raise ConfigError(f"unknown pipeline variant '{name}'")


def cmd_eval(args: argparse.Namespace) -> int:
    """Replay the test split through every requested variant and write the comparison."""
    state = StateDir(args.state)
    if state.config_path.exists():
        config = load_state_config(state, args)
    else:
        config = ConfigManager(args.config, profile=args.profile, overrides=inference_overrides(args)).config

    variants = [v.strip() for v in args.pipelines.split(",")] if args.pipelines else list(config.eval.pipelines)
    variants += [f"embedder-{m}" for m in _ablation_modes(args.aggregations)]
    split = load_split(state, config)
    dump_events = args.dump_events or config.eval.dump_events

    reports, events = [], {}
    cache: Dict[str, Any] = {}
    for name in variants:
        pipeline = build_variant(name, config, state, cache)
        logger.info(f"Evaluating {name}")
        report, variant_events = evaluate_pipeline(split, pipeline, warmup=config.eval.warmup_queries)
        reports.append(report)
        if dump_events:
            events[name] = variant_events

    output = Path(args.output) if args.output else state.eval_dir
    table = write_reports(output, reports, events)
    sys.stdout.write(format_table(table) + "\n")
    return 0


def _check_memory(size: int, dim: int, fraction: float) -> None:
    # vectors with growth headroom plus the graph's neighbour lists
    needed = size * (dim * 4 * 2 + 64 * 8)
    available = psutil.virtual_memory().available
    if needed > available * fraction:
        raise ResourceLimitError(
            f"a store of {size} vectors needs ~{needed / 2**20:.0f} MiB, "
            f"over {fraction:.0%} of the {available / 2**20:.0f} MiB available"
        )


def cmd_bench(args: argparse.Namespace) -> int:
    """Latency of retrieval only and of retrieval plus reranking on a filler store."""
    if args.queries < 1:
        raise ConfigError("bench needs at least one query")
    if args.size < 1:
        raise ConfigError("bench needs a store of at least one report")
    state = StateDir(args.state)
    trained = state.config_path.exists() and state.embedder_path.exists() and state.vocab_path.exists()
    if trained:
        config = load_state_config(state, args)
        embedder = EmbedderModel.load(state.embedder_path)
        dim = embedder.embedding_dim
    else:
        config = ConfigManager(args.config, profile=args.profile, overrides=inference_overrides(args)).config
        dim = aggregation_width(config.embedder.hidden_dim, config.embedder.aggregation)
    _check_memory(args.size, dim, config.bench.memory_fraction)

    fillers = random_traces(args.size, seed=args.seed)
    queries = random_traces(args.queries, seed=args.seed + 1)
    if trained:
        tokenizer = load_tokenizer(state, config)
        reranker = RerankerModel.load(state.reranker_path) if state.reranker_path.exists() else None
    else:
        logger.warning(f"No trained models in {state.root}; benchmarking freshly initialised ones")
        vocab = train_bpe(fillers[:min(len(fillers), 500)], config.tokenizer.vocab_size)
        tokenizer = TraceTokenizer(vocab, config.tokenizer.max_frames, config.tokenizer.max_tokens_per_frame)
        embedder = EmbedderModel.from_config(vocab.size, config.embedder)
        reranker = RerankerModel.from_config(vocab.size, config.reranker)

    variants = {"retrieval": None}
    if reranker is not None:
        variants["reranked"] = reranker
    results: Dict[str, Any] = {}
    for name, model in variants.items():
        pipeline = neural_pipeline(config, tokenizer, embedder, model, name=name)
        pipeline.reset(fillers)
        runs = [measure_latency(pipeline, queries, warmup=config.eval.warmup_queries)
                for _ in range(config.bench.repeats)]
        means = [run["total"]["mean_ms"] for run in runs]
        results[name] = {
            "stages": runs[-1],
            "mean_ms": float(np.mean(means)),
            "stdev_ms": float(statistics.pstdev(means)),
            "repeats": len(runs),
        }
    emit({"command": "bench", "size": args.size, "queries": args.queries, "k": config.pipeline.k,
          "results": results})
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    """Print the header of every artifact in the state directory."""
    state = StateDir(args.state)
    if not state.root.exists():
        raise MissingArtifactError(f"state directory {state.root} does not exist")
    found = 0
    for path in [state.embedder_path, state.reranker_path, state.index_path,
                 *sorted(state.ablation_dir.glob("*.weights"))]:
        if path.exists():
            header = weights_header(path) if path.suffix == ".weights" else read_header(path)[0]
            metadata = dict(header.get("metadata", {}))
            metadata.pop("report_ids", None)
            metadata.pop("categories", None)
            emit({"artifact": path.name, "kind": header.get("kind"), "version": header.get("version"),
                  "metadata": metadata, "arrays": {a["name"]: a["shape"] for a in header.get("arrays", [])}})
            found += 1
    if state.vocab_path.exists():
        with open(state.vocab_path, "r", encoding="utf-8") as f:
            vocab = json.load(f)
        emit({"artifact": state.vocab_path.name, "kind": "vocab", "version": vocab.get("version"),
              "vocab_size": vocab.get("vocab_size"), "merges": len(vocab.get("merges", []))})
        found += 1
    if state.categories_path.exists():
        store = CategoryStore.load(state.categories_path)
        engine_made = sum(1 for r in store.categories.values() if r.created_by == "engine")
        emit({"artifact": state.categories_path.name, "kind": "categories", "categories": len(store),
              "engine_created": engine_made})
        found += 1
    if state.threshold_path.exists():
        with open(state.threshold_path, "r", encoding="utf-8") as f:
            emit({"artifact": state.threshold_path.name, "kind": "threshold", **json.load(f)})
        found += 1
    if state.dataset_path.exists():
        emit({"artifact": state.dataset_path.name, "kind": "dataset",
              "lines": sum(1 for _ in iter_lines(state.dataset_path))})
        found += 1
    if found == 0:
        raise MissingArtifactError(f"no artifacts in {state.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trace-dedup", description="Stack-trace deduplication engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-c", "--config", default=None, help="Path to configuration file")
    parser.add_argument("-p", "--profile", default=None, help="Configuration profile")
    parser.add_argument("-s", "--state", default="state", help="State directory")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="Convert reports into the native dataset")
    ingest.add_argument("inputs", nargs="*", help="Input files")
    ingest.add_argument("--adapter", default="native", choices=["native", "synthetic", *sorted(ADAPTERS)])
    ingest.add_argument("--strict", action="store_true", help="Fail on the first malformed record")
    ingest.add_argument("--categories", type=int, default=50, help="Synthetic categories")
    ingest.add_argument("--per-category", type=int, default=40, help="Synthetic reports per category")
    ingest.add_argument("--seed", type=int, default=0, help="Synthetic generator seed")
    ingest.set_defaults(func=cmd_ingest)

    train = sub.add_parser("train", help="Train tokenizer and models, build index, calibrate")
    train.add_argument("--no-reranker", action="store_true", help="Skip reranker training")
    train.add_argument("--ablation", default=None,
                       help="Also train embedders with these aggregations (comma list or 'all')")
    train.add_argument("--set", action="append", metavar="KEY=VALUE", help="Configuration override")
    train.set_defaults(func=cmd_train)

    for name, func, text in (("dedup", cmd_dedup, "Deduplicate incoming reports"),
                             ("eval", cmd_eval, "Evaluate pipeline variants on the test split"),
                             ("bench", cmd_bench, "Measure query latency")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--k", type=int, default=None, help="Candidates passed to the reranker")
        cmd.add_argument("--search-mode", choices=["auto", "exact", "ann"], default=None)
        cmd.add_argument("--no-reranker", action="store_true", help="Retrieval only")
        cmd.set_defaults(func=func)
        if name == "dedup":
            cmd.add_argument("input", nargs="?", default="-", help="JSON-lines reports, '-' for stdin")
        elif name == "eval":
            cmd.add_argument("--pipelines", default=None, help="Comma list of variants")
            cmd.add_argument("--aggregations", default=None, help="Ablation embedders to include")
            cmd.add_argument("--dump-events", action="store_true", help="Write per-variant event logs")
            cmd.add_argument("--output", default=None, help="Report directory (default <state>/eval)")
        else:
            cmd.add_argument("--size", type=int, default=10000, help="Store size")
            cmd.add_argument("--queries", type=int, default=100, help="Timed queries")
            cmd.add_argument("--seed", type=int, default=0)

    inspect = sub.add_parser("inspect", help="Print artifact headers")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and map errors to exit codes."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        logging_config = ConfigManager(args.config, profile=args.profile).config.logging
    except DedupError:
        logging_config = None
    setup_logging(logging_config, level="DEBUG" if args.verbose else None)

    try:
        return args.func(args)
    except DedupError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 1
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        return 1
