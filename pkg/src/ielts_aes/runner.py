"""Experiment orchestration: config loading, bounded-parallel scoring with
response caching and resume, trace emission, and metric assembly.

A run is fully described by one JSON config file; secrets only ever enter
through environment variables named in that config. Re-running an unchanged
config replays every completion from the cache and reproduces the report
byte-for-byte, which is also what makes interrupted runs resumable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .bands import RoundingRule
from .dataset import (
    DatasetSplit,
    Essay,
    IngestResult,
    apply_split_manifest,
    ingest_primary,
    load_split_manifest,
)
from .gateway import (
    CachingBackend,
    CallUsage,
    CostRecord,
    LlmBackend,
    ModelPricing,
    OpenAIBackend,
    ResponseCache,
    ScriptedBackend,
    estimate_cost,
)
from .metrics import MetricsReport, PairedScores, ScorePair, compute_metrics
from .prompting import template_fingerprint
from .retrieval import HashingEmbedder, RetrievalIndex, build_index
from .strategies import (
    DecodeParams,
    ScoredResult,
    StrategyConfig,
    pick_fixed_exemplars,
    score_essay,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class BackendDef:
    id: str
    kind: str  # scripted | openai
    model: str = ""
    fixtures: str | None = None
    base_url: str = ""
    api_key_env: str | None = None
    pricing: ModelPricing = field(default_factory=ModelPricing)


@dataclass
class ExperimentConfig:
    """One experiment: dataset, backends, strategies, execution knobs."""

    primary_path: Path
    split_manifest_path: Path
    backends: dict[str, BackendDef]
    strategies: list[StrategyConfig]
    concurrency: int
    cache_dir: Path
    output_dir: Path
    seed: int
    embedder_dim: int
    embedder_ngram: int
    auxiliary_path: Path | None = None
    index_path: Path | None = None
    config_hash: str = ""
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        base = path.parent

        def resolve(value: str | None) -> Path | None:
            if value is None:
                return None
            candidate = Path(value)
            return candidate if candidate.is_absolute() else base / candidate

        dataset = raw.get("dataset") or {}
        if "primary" not in dataset or "split_manifest" not in dataset:
            raise ConfigError("config needs dataset.primary and dataset.split_manifest")

        backends: dict[str, BackendDef] = {}
        for backend_id, spec in (raw.get("backends") or {}).items():
            kind = spec.get("kind")
            if kind not in ("scripted", "openai"):
                raise ConfigError(f"backend {backend_id!r} has unknown kind {kind!r}")
            pricing_spec = spec.get("pricing") or {}
            backends[backend_id] = BackendDef(
                id=backend_id,
                kind=kind,
                model=spec.get("model", ""),
                fixtures=str(resolve(spec["fixtures"])) if spec.get("fixtures") else None,
                base_url=spec.get("base_url", ""),
                api_key_env=spec.get("api_key_env"),
                pricing=ModelPricing(
                    prompt_per_1k=float(pricing_spec.get("prompt_per_1k", 0.0)),
                    output_per_1k=float(pricing_spec.get("output_per_1k", 0.0)),
                ),
            )

        decode_spec = raw.get("decode") or {}
        decode = DecodeParams(
            temperature=float(decode_spec.get("temperature", 0.0)),
            max_tokens=int(decode_spec.get("max_tokens", 512)),
            seed=decode_spec.get("seed", 0),
        )
        seed = int(raw.get("seed", 0))

        strategies: list[StrategyConfig] = []
        names: set[str] = set()
        for spec in raw.get("strategies") or []:
            name = spec.get("name") or spec.get("kind")
            if name in names:
                raise ConfigError(f"duplicate strategy name {name!r}")
            names.add(name)
            cfg = StrategyConfig(
                name=name,
                kind=spec["kind"],
                k_shots=int(spec["k_shots"]) if "k_shots" in spec else None,
                exemplar_source=spec.get("exemplar_source"),
                backend=spec.get("backend", ""),
                criterion_backends=dict(spec.get("criterion_backends") or {}),
                rounding=RoundingRule.parse(spec.get("rounding", "nearest-half-ties-up")),
                model=spec.get("model", ""),
                decode=decode,
                fixed_exemplar_ids=list(spec.get("fixed_exemplar_ids") or []),
                exemplar_seed=int(spec.get("exemplar_seed", seed)),
                declared_cost_hours=spec.get("declared_cost_hours"),
                gpu_count=int(spec.get("gpu_count", 1)),
            )
            strategies.append(cfg)
        if not strategies:
            raise ConfigError("config defines no strategies")

        for cfg in strategies:
            referenced = {cfg.backend} | set(cfg.criterion_backends.values())
            for backend_id in referenced:
                if backend_id and backend_id not in backends:
                    raise ConfigError(
                        f"strategy {cfg.name!r} references undefined backend {backend_id!r}"
                    )
            if not cfg.backend:
                raise ConfigError(f"strategy {cfg.name!r} has no backend")

        concurrency = int(raw.get("concurrency", 1))
        if concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

        embedder_spec = raw.get("embedder") or {}
        config_hash = hashlib.sha256(
            json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ).hexdigest()[:16]

        return cls(
            primary_path=resolve(dataset["primary"]),
            split_manifest_path=resolve(dataset["split_manifest"]),
            auxiliary_path=resolve(dataset.get("auxiliary")),
            backends=backends,
            strategies=strategies,
            concurrency=concurrency,
            cache_dir=resolve(raw.get("cache_dir", ".ielts-aes-cache")),
            output_dir=resolve(raw.get("output_dir", "out")),
            seed=seed,
            embedder_dim=int(embedder_spec.get("dim", 512)),
            embedder_ngram=int(embedder_spec.get("ngram", 3)),
            index_path=resolve(raw.get("index_path")),
            config_hash=config_hash,
            raw=raw,
        )


def build_backends(
    cfg: ExperimentConfig, offline: bool = False
) -> tuple[dict[str, LlmBackend], dict[str, ScriptedBackend]]:
    """Instantiate configured backends wrapped in the response cache.

    Returns (by id, scripted inner handles for call accounting).
    """
    cache = ResponseCache(cfg.cache_dir)
    backends: dict[str, LlmBackend] = {}
    scripted: dict[str, ScriptedBackend] = {}
    for backend_id, spec in cfg.backends.items():
        if spec.kind == "scripted":
            if not spec.fixtures:
                inner: LlmBackend = ScriptedBackend(backend_id=backend_id, model=spec.model)
            else:
                inner = ScriptedBackend.from_file(
                    spec.fixtures, backend_id=backend_id, model=spec.model
                )
            scripted[backend_id] = inner  # type: ignore[assignment]
        else:
            if offline:
                raise ConfigError(
                    f"offline run cannot use remote backend {backend_id!r}"
                )
            inner = OpenAIBackend(
                base_url=spec.base_url,
                model=spec.model,
                backend_id=backend_id,
                api_key_env=spec.api_key_env,
            )
        backends[backend_id] = CachingBackend(inner, cache)
    return backends, scripted


def load_dataset(cfg: ExperimentConfig) -> tuple[IngestResult, DatasetSplit, DatasetSplit]:
    ingest = ingest_primary(cfg.primary_path)
    manifest = load_split_manifest(cfg.split_manifest_path)
    train, test = apply_split_manifest(ingest.split, manifest)
    overlap = set(train.ids()) & set(test.ids())
    if overlap:
        raise ConfigError(f"train/test overlap: {sorted(overlap)[:5]}")
    return ingest, train, test


def _needs_retrieval(strategies: list[StrategyConfig]) -> bool:
    return any(s.exemplar_source == "retrieval" and s.k_shots > 0 for s in strategies)


@dataclass
class StrategyRun:
    """Everything produced for one strategy within a run."""

    config: StrategyConfig
    results: list[ScoredResult]
    metrics: MetricsReport
    cost: CostRecord
    backend_calls: int = 0
    cache_hits: int = 0

    @property
    def cost_hours(self) -> float:
        if self.config.declared_cost_hours is not None:
            return float(self.config.declared_cost_hours)
        return self.cost.wall_clock_s / 3600.0


@dataclass
class EvaluationReport:
    """Per-strategy metrics and cost plus run provenance."""

    runs: list[StrategyRun]
    test_essays: list[Essay]
    config_hash: str
    template_versions: str
    started_at: float = 0.0
    finished_at: float = 0.0

    def run_named(self, name: str) -> StrategyRun:
        for run in self.runs:
            if run.config.name == name:
                return run
        raise KeyError(name)


def pairs_from_results(
    results: list[ScoredResult], golds: dict[str, Essay]
) -> PairedScores:
    pairs: list[ScorePair] = []
    excluded: list[tuple[str, str]] = []
    for result in results:
        gold = golds.get(result.essay_id)
        if gold is None or gold.overall is None:
            excluded.append((result.essay_id, "missing-gold"))
            continue
        if result.parse_failed or result.overall is None:
            excluded.append((result.essay_id, result.failure or "parse-failed"))
            continue
        pairs.append(
            ScorePair(essay_id=result.essay_id, predicted=result.overall, gold=gold.overall)
        )
    return PairedScores(pairs=pairs, excluded=excluded)


def _cost_for(results: list[ScoredResult], pricing: dict[str, ModelPricing]) -> CostRecord:
    usages = [
        CallUsage(
            model=call.model,
            prompt_tokens=call.prompt_tokens,
            output_tokens=call.output_tokens,
            latency_s=call.latency_s,
        )
        for result in results
        for call in result.calls
        if call.completion_text is not None
    ]
    return estimate_cost(usages, pricing)


class FailureJournal:
    """Append-only per-essay failure log; survives crashes, never rewritten."""

    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, strategy: str, essay_id: str, failure: str) -> None:
        line = json.dumps(
            {"strategy": strategy, "essay_id": essay_id, "failure": failure},
            sort_keys=True,
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")


def run_strategy(
    cfg: ExperimentConfig,
    strategy: StrategyConfig,
    test: DatasetSplit,
    train: DatasetSplit,
    backends: dict[str, LlmBackend],
    index: RetrievalIndex | None,
    embedder: HashingEmbedder | None,
    journal: FailureJournal | None = None,
) -> list[ScoredResult]:
    """Score every test essay once, in bounded parallel, results in split order."""
    train_by_id = train.by_id()
    fixed_ids = (
        pick_fixed_exemplars(strategy, train.essays)
        if strategy.exemplar_source == "fixed-list" and strategy.k_shots > 0
        else []
    )

    def _score(essay: Essay) -> ScoredResult:
        result = score_essay(
            essay, strategy, backends, index, embedder, train_by_id, fixed_ids
        )
        if result.parse_failed and journal is not None:
            journal.record(strategy.name, essay.id, result.failure or "unknown")
        return result

    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        results = list(pool.map(_score, test.essays))
    return results


def write_traces(output_dir: Path, strategy_name: str, results: list[ScoredResult]) -> Path:
    traces_dir = output_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    path = traces_dir / f"{strategy_name}.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for result in results:
            handle.write(
                json.dumps(result.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n"
            )
    return path


def run_experiment(
    cfg: ExperimentConfig,
    limit: int | None = None,
    offline: bool = False,
    only_strategies: list[str] | None = None,
) -> EvaluationReport:
    """Execute every configured strategy over the test split."""
    started = time.time()
    strategies = cfg.strategies
    if only_strategies:
        known = {s.name for s in strategies}
        missing = set(only_strategies) - known
        if missing:
            raise ConfigError(f"unknown strategies requested: {sorted(missing)}")
        strategies = [s for s in strategies if s.name in only_strategies]

    _, train, test = load_dataset(cfg)
    if limit is not None:
        test = DatasetSplit(name=test.name, essays=test.essays[:limit])
    if not test.essays:
        raise ConfigError("test split is empty")

    backends, scripted = build_backends(cfg, offline=offline)

    index: RetrievalIndex | None = None
    embedder: HashingEmbedder | None = None
    if _needs_retrieval(strategies):
        embedder = HashingEmbedder(dim=cfg.embedder_dim, ngram=cfg.embedder_ngram)
        if cfg.index_path and cfg.index_path.exists():
            index = RetrievalIndex.load(
                cfg.index_path, train.by_id(), expected_embedder_id=embedder.id
            )
        else:
            index = build_index(train.essays, embedder)

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    journal = FailureJournal(cfg.cache_dir / "failures.jsonl")
    golds = test.by_id()

    runs: list[StrategyRun] = []
    pricing = {spec.model: spec.pricing for spec in cfg.backends.values()}
    pricing.setdefault("", ModelPricing())
    for strategy in strategies:
        calls_before = sum(len(b.call_log) for b in scripted.values())
        hits_before = sum(b.hits for b in backends.values() if isinstance(b, CachingBackend))
        results = run_strategy(cfg, strategy, test, train, backends, index, embedder, journal)
        write_traces(cfg.output_dir, strategy.name, results)
        pairs = pairs_from_results(results, golds)
        metrics = compute_metrics(pairs)
        cost = _cost_for(results, {**pricing, strategy.model: pricing.get(strategy.model, ModelPricing())})
        runs.append(
            StrategyRun(
                config=strategy,
                results=results,
                metrics=metrics,
                cost=cost,
                backend_calls=sum(len(b.call_log) for b in scripted.values()) - calls_before,
                cache_hits=sum(
                    b.hits for b in backends.values() if isinstance(b, CachingBackend)
                )
                - hits_before,
            )
        )
        log.info(
            "strategy %s: n=%d acc@0.5=%.4f f1=%.4f",
            strategy.name,
            metrics.n_scored,
            metrics.accuracy.get(0.5, 0.0),
            metrics.macro_f1,
        )

    return EvaluationReport(
        runs=runs,
        test_essays=test.essays,
        config_hash=cfg.config_hash,
        template_versions=template_fingerprint(),
        started_at=started,
        finished_at=time.time(),
    )


def rebuild_report_from_traces(cfg: ExperimentConfig) -> EvaluationReport:
    """Re-assemble an EvaluationReport from previously written trace files."""
    from .bands import BandScore, CriterionSet
    from .strategies import CallTrace

    _, train, test = load_dataset(cfg)
    golds = test.by_id()
    runs: list[StrategyRun] = []
    pricing = {spec.model: spec.pricing for spec in cfg.backends.values()}
    pricing.setdefault("", ModelPricing())
    for strategy in cfg.strategies:
        path = cfg.output_dir / "traces" / f"{strategy.name}.jsonl"
        if not path.exists():
            raise ConfigError(f"no traces for strategy {strategy.name!r} at {path}")
        results: list[ScoredResult] = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                data = json.loads(line)
                criteria = None
                if data.get("criteria"):
                    criteria = CriterionSet(
                        tr=BandScore.from_value(float(data["criteria"]["TR"])),
                        cc=BandScore.from_value(float(data["criteria"]["CC"])),
                        lr=BandScore.from_value(float(data["criteria"]["LR"])),
                        gra=BandScore.from_value(float(data["criteria"]["GRA"])),
                    )
                results.append(
                    ScoredResult(
                        essay_id=data["essay_id"],
                        strategy=data["strategy"],
                        kind=data["kind"],
                        overall=(
                            BandScore.from_value(float(data["overall"]))
                            if data.get("overall")
                            else None
                        ),
                        criteria=criteria,
                        pre_snap_mean=data.get("pre_snap_mean"),
                        feedback=data.get("feedback", ""),
                        exemplar_ids=tuple(data.get("exemplar_ids") or ()),
                        calls=[
                            CallTrace(
                                role=call["role"],
                                backend=call["backend"],
                                model=call["model"],
                                fingerprint=call["fingerprint"],
                                completion_text=call.get("completion_text"),
                                prompt_tokens=call.get("prompt_tokens", 0),
                                output_tokens=call.get("output_tokens", 0),
                                latency_s=call.get("latency_s", 0.0),
                                parsed=call.get("parsed"),
                                error=call.get("error"),
                            )
                            for call in data.get("calls", [])
                        ],
                        parse_failed=bool(data.get("parse_failed")),
                        failure=data.get("failure"),
                        warnings=tuple(data.get("warnings") or ()),
                    )
                )
        pairs = pairs_from_results(results, golds)
        metrics = compute_metrics(pairs)
        cost = _cost_for(
            results, {**pricing, strategy.model: pricing.get(strategy.model, ModelPricing())}
        )
        runs.append(StrategyRun(config=strategy, results=results, metrics=metrics, cost=cost))
    traced = {r.essay_id for run in runs for r in run.results}
    return EvaluationReport(
        runs=runs,
        test_essays=[e for e in test.essays if e.id in traced],
        config_hash=cfg.config_hash,
        template_versions=template_fingerprint(),
    )
