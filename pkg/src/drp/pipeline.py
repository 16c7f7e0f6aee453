"""Difference extraction, reflective validation, summarization and generation.

A run executes, per temperature, the same per-sample chain::

    retrieve target context
    for each representative: retrieve its context, extract, validate
    summarize validated differences
    generate the review

``rag`` mode skips everything between retrieval and generation and
``non_p`` additionally leaves the history out of the generation prompt.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .cluster import ClusterModel, RepresentativeSet, kmeans_fit, select_representatives
from .config import RunConfig
from .corpus import Corpus, ReviewSample, all_users, user_history
from .embed import EmbeddingProvider, make_provider, profile_embedding
from .errors import DrpError, ExtractionParseError, ValidationParseError
from .gateway import ChatRequest, ChatResponse, Gateway, Message, canonical_request_hash
from .prompts import PromptSet, load_prompts
from .retrieve import RetrievedHistory, item_query, retrieve_key_history

log = logging.getLogger(__name__)

DIRECTIONS = ("target_higher", "target_lower", "qualitative")
NO_DIFFERENCES = "NO_DISTINCTIVE_DIFFERENCES"
MAX_DIMENSION_NAME = 64


# ------------------------------------------------------------------- types

@dataclass(frozen=True)
class DifferenceDimension:
    name: str
    definition: str

    def __post_init__(self):
        name = self.name.strip()
        if not name or len(name) > MAX_DIMENSION_NAME:
            raise ValueError(f"dimension name must be 1..{MAX_DIMENSION_NAME} chars: {self.name!r}")
        if not self.definition.strip():
            raise ValueError("dimension definition is empty")
        object.__setattr__(self, "name", name)


@dataclass(frozen=True)
class DifferenceFeature:
    dimension: DifferenceDimension
    description: str
    direction: str = "qualitative"
    evidence: Optional[str] = None

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError("feature description is empty")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"bad direction {self.direction!r}")

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension.name,
            "definition": self.dimension.definition,
            "description": self.description,
            "direction": self.direction,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DifferenceFeature":
        return cls(DifferenceDimension(d["dimension"], d["definition"]),
                   d["description"], d["direction"], d.get("evidence"))


@dataclass
class DifferenceReport:
    target_user: str
    representative_user: str
    features: list[DifferenceFeature]
    raw_output: str
    reasoning_trace: Optional[str]
    extractor_model: str
    temperature: float
    item_id: str = ""

    def __post_init__(self):
        if self.target_user == self.representative_user:
            raise ValueError("target and representative must differ")

    def to_dict(self) -> dict:
        return {
            "target_user": self.target_user,
            "representative_user": self.representative_user,
            "item_id": self.item_id,
            "features": [f.to_dict() for f in self.features],
            "raw_output": self.raw_output,
            "reasoning_trace": self.reasoning_trace,
            "extractor_model": self.extractor_model,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DifferenceReport":
        return cls(d["target_user"], d["representative_user"],
                   [DifferenceFeature.from_dict(f) for f in d["features"]],
                   d["raw_output"], d.get("reasoning_trace"), d["extractor_model"],
                   d["temperature"], d.get("item_id", ""))


@dataclass
class ValidatedReport:
    source: DifferenceReport
    kept: list[DifferenceFeature]
    dropped: list[tuple[DifferenceFeature, str]]
    validator_model: str
    raw_output: str = ""

    def __post_init__(self):
        def key(f: DifferenceFeature):
            return json.dumps(f.to_dict(), sort_keys=True)

        together = sorted(key(f) for f in self.kept + [f for f, _ in self.dropped])
        if together != sorted(key(f) for f in self.source.features):
            raise ValueError("kept + dropped must equal the extracted features")

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "kept": [f.to_dict() for f in self.kept],
            "dropped": [{"feature": f.to_dict(), "reason": r} for f, r in self.dropped],
            "validator_model": self.validator_model,
            "validator_output": self.raw_output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidatedReport":
        return cls(
            DifferenceReport.from_dict(d["source"]),
            [DifferenceFeature.from_dict(f) for f in d["kept"]],
            [(DifferenceFeature.from_dict(x["feature"]), x["reason"]) for x in d["dropped"]],
            d["validator_model"],
            d.get("validator_output", ""),
        )


@dataclass
class UserDifferenceSummary:
    target_user: str
    text: str
    source_report_count: int
    item_id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("summary text is empty")


@dataclass
class GeneratedReview:
    target_user: str
    item_id: str
    text: str
    mode: str
    temperature: float
    prompt_digest: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("generated text is empty")

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------- parsing

_BLOCK_RE = re.compile(r"\[FEATURE\](.*?)\[/FEATURE\]", re.DOTALL | re.IGNORECASE)
_FIELD_RE = re.compile(r"^\s*(DIMENSION|DEFINITION|DESCRIPTION|DIRECTION|EVIDENCE)\s*:\s*(.*)$", re.IGNORECASE)
_VERDICT_RE = re.compile(
    r"VERDICT\s*\[?(\d+)\]?\s*:\s*(KEEP|DROP)\b[ \t\-—–:]*(.*)$", re.IGNORECASE | re.MULTILINE
)


def _block_fields(block: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    current = None
    for line in block.splitlines():
        m = _FIELD_RE.match(line)
        if m:
            current = m.group(1).upper()
            fields[current] = m.group(2).strip()
        elif current and line.strip():
            fields[current] = f"{fields[current]} {line.strip()}".strip()
    return fields


def _normalize_direction(token: str) -> str:
    t = token.strip().strip("`*\"'").lower().replace("-", "_").replace(" ", "_")
    return t if t in DIRECTIONS else "qualitative"


def parse_difference_output(raw: str) -> list[DifferenceFeature]:
    """Parse ``[FEATURE]...[/FEATURE]`` blocks, skipping incomplete ones.

    A block needs DIMENSION and DESCRIPTION. A missing DEFINITION falls back
    to the dimension name; an unknown DIRECTION becomes ``qualitative``;
    over-long dimension names are truncated.
    """
    features = []
    for m in _BLOCK_RE.finditer(raw):
        f = _block_fields(m.group(1))
        name = f.get("DIMENSION", "").strip()[:MAX_DIMENSION_NAME].strip()
        desc = f.get("DESCRIPTION", "").strip()
        if not name or not desc:
            log.debug("skipping incomplete feature block: %r", m.group(0)[:80])
            continue
        features.append(DifferenceFeature(
            DifferenceDimension(name, f.get("DEFINITION", "").strip() or name),
            desc,
            _normalize_direction(f.get("DIRECTION", "")),
            f.get("EVIDENCE") or None,
        ))
    if not features:
        raise ExtractionParseError("no valid [FEATURE] blocks in extractor output", raw)
    return features


def parse_verdicts(raw: str, n_features: int) -> dict[int, tuple[bool, str]]:
    """Map feature index -> (keep, reason). Out-of-range indices are ignored."""
    verdicts: dict[int, tuple[bool, str]] = {}
    for m in _VERDICT_RE.finditer(raw):
        idx = int(m.group(1))
        if not 0 <= idx < n_features:
            continue
        keep = m.group(2).upper() == "KEEP"
        if idx in verdicts and verdicts[idx][0] != keep:
            raise ValidationParseError(f"conflicting verdicts for feature {idx}")
        verdicts[idx] = (keep, m.group(3).strip())
    return verdicts


# -------------------------------------------------------------- formatting

def format_reviews(ctx: RetrievedHistory) -> str:
    return "\n".join(
        f"[{n}] Item: {s.item_title}\n    Review: {s.review_text}"
        for n, s in enumerate(ctx.samples, start=1)
    )


def format_features(features: Sequence[DifferenceFeature]) -> str:
    return "\n".join(
        f"{i}. [{f.dimension.name}] ({f.direction}) {f.dimension.definition} | {f.description}"
        for i, f in enumerate(features)
    )


def format_temperature(t: float) -> str:
    return repr(float(t))


# ---------------------------------------------------------------- pipeline

class Pipeline:
    """Binds a config to a gateway, an embedder and a prompt set."""

    def __init__(self, cfg: RunConfig, gateway: Gateway, embedder: EmbeddingProvider | None = None,
                 prompts: PromptSet | None = None, force_mock: bool = False):
        self.cfg = cfg
        self.gateway = gateway
        self.embedder = embedder or make_provider(
            cfg.embedding.kind, cfg.embedding.dim, cfg.embedding.seed,
            cfg.embedding.base_url, cfg.embedding.model, cfg.embedding.request_timeout_s,
        )
        self.prompts = prompts or load_prompts(cfg.prompt_dir)
        self.force_mock = force_mock

    # -- helpers
    def _request(self, role: str, system: str, user: str, temperature: float) -> ChatRequest:
        spec = self.cfg.role_spec(role, self.force_mock)
        return ChatRequest(spec.model_id, (Message("system", system), Message("user", user)),
                           temperature, spec.max_tokens, self.cfg.seed)

    def _call(self, role: str, request: ChatRequest) -> ChatResponse:
        return self.gateway.cached_complete(request, self.cfg.role_spec(role, self.force_mock), label=role)

    def retrieve(self, history, query: str) -> RetrievedHistory:
        return retrieve_key_history(history, query, self.cfg.retrieval_k, self.cfg.retrieval_mode,
                                    self.embedder)

    # -- Step 1
    def extract_differences(self, target_ctx: RetrievedHistory, rep_ctx: RetrievedHistory,
                            temperature: float, item_id: str = "") -> DifferenceReport:
        if not len(target_ctx) or not len(rep_ctx):
            raise ValueError("extraction needs nonempty contexts")
        p = self.prompts
        req = self._request(
            "extractor",
            p.raw("extractor_system"),
            p.render("extractor_user", item=target_ctx.query_text,
                     target_reviews=format_reviews(target_ctx), rep_reviews=format_reviews(rep_ctx)),
            temperature,
        )
        resp = self._call("extractor", req)
        features = parse_difference_output(resp.content)
        return DifferenceReport(target_ctx.user_id, rep_ctx.user_id, features, resp.content,
                                resp.reasoning_trace, req.model_id, temperature, item_id)

    # -- Step 2
    def validate_differences(self, report: DifferenceReport, target_ctx: RetrievedHistory,
                             rep_ctx: RetrievedHistory, temperature: float) -> ValidatedReport:
        model = self.cfg.role_spec("validator", self.force_mock).model_id
        if not report.features:
            return ValidatedReport(report, [], [], model)
        p = self.prompts
        req = self._request(
            "validator",
            p.raw("validator_system"),
            p.render("validator_user", target_reviews=format_reviews(target_ctx),
                     rep_reviews=format_reviews(rep_ctx), features=format_features(report.features)),
            temperature,
        )
        resp = self._call("validator", req)
        verdicts = parse_verdicts(resp.content, len(report.features))
        if not verdicts:
            log.warning("validator gave no parseable verdicts for %s vs %s; keeping all",
                        report.target_user, report.representative_user)
        kept, dropped = [], []
        for i, f in enumerate(report.features):
            keep, reason = verdicts.get(i, (True, ""))
            if keep:
                kept.append(f)
            else:
                dropped.append((f, reason))
        return ValidatedReport(report, kept, dropped, model, resp.content)

    # -- Step 3a
    def summarize_differences(self, target_ctx: RetrievedHistory, validated: Sequence[ValidatedReport],
                              temperature: float, item_id: str = "") -> UserDifferenceSummary:
        groups = [v for v in validated if v.kept]
        if not groups:
            return UserDifferenceSummary(target_ctx.user_id, NO_DIFFERENCES, len(validated), item_id)
        diff_text = "\n\n".join(
            f"Compared with representative {n} ({v.source.representative_user}):\n"
            + "\n".join(f"- {f.dimension.name} ({f.direction}): {f.description}" for f in v.kept)
            for n, v in enumerate(validated, start=1) if v.kept
        )
        p = self.prompts
        req = self._request(
            "summarizer",
            p.raw("summarizer_system"),
            p.render("summarizer_user", target_reviews=format_reviews(target_ctx), differences=diff_text),
            temperature,
        )
        resp = self._call("summarizer", req)
        return UserDifferenceSummary(target_ctx.user_id, resp.content, len(validated), item_id)

    # -- Step 3b / base generation
    def build_generation_request(self, item: ReviewSample, target_ctx: Optional[RetrievedHistory],
                                 summary: Optional[UserDifferenceSummary], mode: str,
                                 temperature: float) -> ChatRequest:
        p = self.prompts
        history = summary_sec = ""
        if mode in ("rag", "drp"):
            history = "\n" + p.render("generator_history", history=format_reviews(target_ctx)) + "\n"
        if mode == "drp":
            if summary is None:
                raise ValueError("drp generation needs a summary")
            summary_sec = "\n" + p.render("generator_summary", summary=summary.text) + "\n"
        user = p.render("generator_user", item_title=item.item_title,
                        item_description=item.item_description or "(none)",
                        history_section=history, summary_section=summary_sec)
        return self._request("generator", p.raw("generator_system"), user, temperature)

    def generate_review(self, item: ReviewSample, target_ctx: RetrievedHistory,
                        summary: Optional[UserDifferenceSummary], temperature: float,
                        mode: Optional[str] = None) -> GeneratedReview:
        mode = mode or self.cfg.mode
        if not len(target_ctx):
            raise ValueError("generation needs a nonempty target context")
        req = self.build_generation_request(item, target_ctx, summary, mode, temperature)
        resp = self._call("generator", req)
        return GeneratedReview(item.user_id, item.item_id, resp.content, mode, temperature,
                               canonical_request_hash(req))

    # -- Step 0
    def fit_clusters(self, corpus: Corpus) -> ClusterModel:
        users = all_users(corpus)
        profiles = [profile_embedding(user_history(corpus, u), self.embedder) for u in users]
        k = min(self.cfg.cluster_k, len(profiles))
        return kmeans_fit(profiles, k, self.cfg.seed, self.cfg.cluster_max_iters,
                          self.cfg.cluster_tol, self.cfg.cluster_restarts)

    def process_sample(self, corpus: Corpus, sample: ReviewSample, temperature: float,
                       reps: Optional[RepresentativeSet]) -> "SampleOutput":
        query = item_query(sample.item_title, sample.item_description)
        target_ctx = self.retrieve(user_history(corpus, sample.user_id), query)
        out = SampleOutput(sample.user_id, sample.item_id)
        summary = None
        if self.cfg.mode == "drp":
            if reps is None:
                raise ValueError("drp mode needs representatives")
            for rep in reps.members:
                rep_ctx = self.retrieve(user_history(corpus, rep), query)
                report = self.extract_differences(target_ctx, rep_ctx, temperature, sample.item_id)
                out.reports.append(self.validate_differences(report, target_ctx, rep_ctx, temperature))
            summary = self.summarize_differences(target_ctx, out.reports, temperature, sample.item_id)
            out.summary = summary
        out.generation = self.generate_review(sample, target_ctx, summary, temperature)
        return out


@dataclass
class SampleOutput:
    user_id: str
    item_id: str
    reports: list[ValidatedReport] = field(default_factory=list)
    summary: Optional[UserDifferenceSummary] = None
    generation: Optional[GeneratedReview] = None


@dataclass
class TemperatureRun:
    temperature: float
    outputs: list[SampleOutput]
    errors: list[dict]
    stats: dict

    @property
    def generations(self) -> list[GeneratedReview]:
        return [o.generation for o in self.outputs]


@dataclass
class RunResult:
    cfg: RunConfig
    runs: list[TemperatureRun]
    cluster: Optional[ClusterModel]
    representatives: dict[str, list[str]]
    prompts: PromptSet


def _stats_delta(before: dict, after: dict) -> dict:
    return {
        name: {k: v - before.get(name, {}).get(k, 0) for k, v in sorted(counts.items())
               if v - before.get(name, {}).get(k, 0)}
        for name, counts in after.items()
    }


def run_pipeline(corpus: Corpus, cfg: RunConfig, gateway: Gateway,
                 embedder: EmbeddingProvider | None = None, prompts: PromptSet | None = None,
                 force_mock: bool = False) -> RunResult:
    """Run the configured mode over every test sample at every temperature.

    Failing samples are logged and recorded in ``errors``; the run continues.
    """
    pipe = Pipeline(cfg, gateway, embedder, prompts, force_mock)
    samples = corpus.test_samples()
    cluster = None
    reps: dict[str, RepresentativeSet] = {}
    rep_errors: dict[str, str] = {}
    if cfg.mode == "drp":
        cluster = pipe.fit_clusters(corpus)
        for u in sorted({s.user_id for s in samples}):
            try:
                reps[u] = select_representatives(cluster, u, cfg.M, cfg.seed)
            except DrpError as e:
                rep_errors[u] = f"{type(e).__name__}: {e}"

    def work(sample: ReviewSample, t: float):
        if sample.user_id in rep_errors:
            return sample, None, rep_errors[sample.user_id]
        try:
            return sample, pipe.process_sample(corpus, sample, t, reps.get(sample.user_id)), None
        except (DrpError, ValueError) as e:
            log.warning("sample (%s, %s) at T=%s failed: %s", sample.user_id, sample.item_id, t, e)
            return sample, None, f"{type(e).__name__}: {e}"

    runs = []
    with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
        for t in cfg.temperatures:
            before = gateway.snapshot()
            results = list(pool.map(lambda s: work(s, t), samples))
            outputs = [o for _, o, _ in results if o is not None]
            errors = [{"user_id": s.user_id, "item_id": s.item_id, "error": err}
                      for s, _, err in results if err is not None]
            runs.append(TemperatureRun(t, outputs, errors, _stats_delta(before, gateway.snapshot())))
    return RunResult(cfg, runs, cluster,
                     {u: list(r.members) for u, r in sorted(reps.items())}, pipe.prompts)


# ------------------------------------------------------------- bundle I/O

def _dump_jsonl(path: Path, rows: Sequence[dict]) -> str:
    data = "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)
    path.write_text(data, encoding="utf-8")
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k not in ("created_at", "digest")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def write_bundle(result: RunResult, run_dir: str | Path) -> dict:
    """Write generations/reports/summaries per temperature plus ``manifest.json``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    per_temp: dict[str, dict] = {}
    remote_calls = 0
    for run in result.runs:
        tkey = format_temperature(run.temperature)
        gens = [o.generation.to_dict() for o in run.outputs]
        reports = [v.to_dict() for o in run.outputs for v in o.reports]
        summaries = [asdict(o.summary) for o in run.outputs if o.summary is not None]
        for name, rows in (("generations", gens), ("reports", reports), ("summaries", summaries)):
            fname = f"{name}.{tkey}.jsonl"
            files[fname] = _dump_jsonl(run_dir / fname, rows)
        provider = sum(run.stats.get("provider_calls", {}).values())
        remote_calls += provider
        per_temp[tkey] = {
            "stage_calls": run.stats.get("calls", {}),
            "provider_calls": run.stats.get("provider_calls", {}),
            "cache_hits": run.stats.get("cache_hits", {}),
            "n_samples": len(run.outputs) + len(run.errors),
            "n_generated": len(run.outputs),
            "n_summarizer_sentinel": sum(
                1 for o in run.outputs if o.summary is not None and o.summary.text == NO_DIFFERENCES),
            "errors": run.errors,
        }
    manifest = {
        "mode": result.cfg.mode,
        "config": result.cfg.to_json_dict(),
        "prompt_version": result.prompts.version,
        "prompt_digest": result.prompts.digest,
        "temperatures": [format_temperature(r.temperature) for r in result.runs],
        "cluster": None if result.cluster is None else {
            "k": result.cluster.k,
            "inertia": result.cluster.inertia,
            "assignment": dict(sorted(result.cluster.assignment.items())),
        },
        "representatives": result.representatives,
        "per_temperature": per_temp,
        "remote_calls": remote_calls,
        "files": files,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    manifest["digest"] = manifest_digest(manifest)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    if result.cluster is not None:
        result.cluster.save(run_dir / "cluster.json")
    return manifest


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_generations(path: str | Path) -> list[GeneratedReview]:
    return [GeneratedReview(**r) for r in read_jsonl(path)]


def load_reports(path: str | Path) -> list[ValidatedReport]:
    return [ValidatedReport.from_dict(r) for r in read_jsonl(path)]
