"""LLM annotation gateway: prompt assembly, transport, response parsing, and a
replayable response cache.

Prompts combine three strategies (base, persona, chain-of-thought) with two
guideline placements (system or user message); the guideline text is inserted
verbatim, never rewritten.  Every raw model response is appended to a JSONL
cache keyed by a digest of (model, messages, temperature, sample index), so a
run can be replayed bit-for-bit later without network access: with
SILICON_REPLAY=1 (or replay=True) the gateway answers from the cache alone and
a missing key is an error rather than a network call.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from typing import Callable, Mapping, Sequence

import requests

from .core import LabelValue, Role, SiliconError, SourceId, TaskKind, TaskSpec, ValidationError
from .core import AnnotationRecord

__all__ = [
    "GatewayError",
    "TransportError",
    "AuthError",
    "ReplayCacheMiss",
    "Strategy",
    "Placement",
    "RetryPolicy",
    "ModelEndpoint",
    "PromptConfig",
    "ParseFailure",
    "CacheEntry",
    "AnnotationCache",
    "HttpTransport",
    "ScriptedTransport",
    "SampleResult",
    "ItemAnnotation",
    "assemble_prompt",
    "cache_key",
    "parse_response",
    "annotate",
    "annotations_to_records",
    "load_endpoint",
    "load_prompt_config",
    "REPLAY_ENV",
]

REPLAY_ENV = "SILICON_REPLAY"
_DIGEST = "sha256"


class GatewayError(SiliconError):
    """Gateway failure (transport, auth, replay miss)."""


class TransportError(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class ReplayCacheMiss(GatewayError):
    pass


class Strategy(str, Enum):
    BASE = "base"
    PERSONA = "persona"
    COT = "cot"


class Placement(str, Enum):
    SYSTEM = "system"
    USER = "user"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")
        object.__setattr__(self, "backoff", tuple(float(b) for b in self.backoff))


@dataclass(frozen=True)
class ModelEndpoint:
    """An OpenAI-compatible chat-completions endpoint.

    The API key is read from the environment variable named by api_key_env,
    never stored.  supports_n=False issues one request per sample instead of a
    single request with n choices.
    """

    name: str
    base_url: str
    api_key_env: str
    max_in_flight: int = 4
    timeout: float = 60.0
    supports_n: bool = True
    retry: RetryPolicy = RetryPolicy()

    def __post_init__(self):
        if not self.name or not self.base_url or not self.api_key_env:
            raise ValidationError("endpoint needs name, base_url, and api_key_env")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class PromptConfig:
    task: TaskSpec
    guideline_text: str
    strategy: Strategy = Strategy.BASE
    placement: Placement = Placement.SYSTEM
    persona_text: str | None = None
    temperature: float = 1.0
    n_samples: int = 5

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "placement", Placement(self.placement))
        if not self.guideline_text:
            raise ValidationError("guideline_text must be non-empty")
        if self.strategy is Strategy.PERSONA and not self.persona_text:
            raise ValidationError("persona strategy requires persona_text")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")


def _template(name: str) -> str:
    return (resources.files("silicon.templates") / name).read_text(encoding="utf-8").rstrip("\n")


def assemble_prompt(cfg: PromptConfig, item_text: str) -> list[dict[str, str]]:
    """Deterministic chat messages for one item.

    The guideline appears verbatim as its own block.  placement=system puts
    persona/guideline/instructions in the system message and the item alone in
    the user message; placement=user moves all of it into the user message
    above the item, leaving a minimal fixed system message.
    """
    blocks = []
    if cfg.strategy is Strategy.PERSONA:
        blocks.append(cfg.persona_text)
    blocks.append(cfg.guideline_text)
    if cfg.strategy is Strategy.COT:
        blocks.append(_template("cot_instruction.txt"))
    fmt_name = (
        "format_multilabel.txt" if cfg.task.kind is TaskKind.MULTILABEL else "format_single.txt"
    )
    blocks.append(_template(fmt_name).format(labels="; ".join(cfg.task.label_universe)))
    instructions = "\n\n".join(blocks)
    if cfg.placement is Placement.SYSTEM:
        return [
            {"role": "system", "content": instructions},
            {"role": "user", "content": item_text},
        ]
    return [
        {"role": "system", "content": _template("minimal_system.txt")},
        {"role": "user", "content": instructions + "\n\n" + item_text},
    ]


def cache_key(model: str, messages: Sequence[Mapping[str, str]], temperature: float,
              sample_index: int) -> str:
    """Digest identifying one sample of one prompt; stable across runs and machines."""
    canonical = json.dumps(
        {
            "model": model,
            "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
            "temperature": temperature,
            "sample_index": sample_index,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


@dataclass(frozen=True)
class ParseFailure:
    """Total-function stand-in for an unparseable response."""

    reason: str


def _resolve_name(token: str, spec: TaskSpec) -> int | None:
    if token in spec.label_universe:
        return spec.label_universe.index(token)
    folded = [i for i, name in enumerate(spec.label_universe) if name.lower() == token.lower()]
    return folded[0] if len(folded) == 1 else None


_LABELS_BLOCK = re.compile(r"labels\s*:\s*\[([^\]]*)\]", re.IGNORECASE)


def parse_response(raw: str, spec: TaskSpec) -> LabelValue | ParseFailure:
    """Extract a label from model text; never raises.

    Ladder: (1) a line that is exactly a universe label (or, for multilabel
    tasks, exactly a comma-separated list of them); (2) a `labels: [...]`
    block; (3) a case-insensitive substring match that is unique across the
    universe.  Anything else, including ambiguity and empty label sets, is a
    ParseFailure value.
    """
    if not raw or not raw.strip():
        return ParseFailure("empty response")

    for line in raw.splitlines():
        token = line.strip()
        if not token:
            continue
        if token in spec.label_universe:
            return LabelValue.single(spec.label_universe.index(token))
        if spec.kind is TaskKind.MULTILABEL and "," in token:
            parts = [p.strip() for p in token.split(",")]
            if parts and all(p in spec.label_universe for p in parts):
                return LabelValue.of(spec.label_universe.index(p) for p in parts)

    match = _LABELS_BLOCK.search(raw)
    if match:
        inner = match.group(1).strip()
        if not inner:
            return ParseFailure("empty label set")
        indices = []
        for part in inner.split(","):
            token = part.strip().strip("'\"")
            resolved = _resolve_name(token, spec)
            if resolved is None:
                return ParseFailure(f"unknown label {token!r}")
            indices.append(resolved)
        if spec.kind is not TaskKind.MULTILABEL and len(set(indices)) > 1:
            return ParseFailure("multiple labels for a single-label task")
        return LabelValue.of(indices)

    lowered = raw.lower()
    hits = [i for i, name in enumerate(spec.label_universe) if name.lower() in lowered]
    if len(hits) == 1:
        return LabelValue.single(hits[0])
    if not hits:
        return ParseFailure("no label found")
    names = [spec.label_universe[i] for i in hits]
    return ParseFailure(f"ambiguous: matches {names!r}")


@dataclass(frozen=True)
class CacheEntry:
    key: str
    model: str
    temperature: float
    sample_index: int
    raw_response: str
    parsed: tuple[str, ...] | None
    failure: str | None
    created: str

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "model": self.model,
            "temperature": self.temperature,
            "sample_index": self.sample_index,
            "raw_response": self.raw_response,
            "parsed": list(self.parsed) if self.parsed is not None else None,
            "failure": self.failure,
            "created": self.created,
        }


class AnnotationCache:
    """Append-only JSONL response cache.

    The first line is a header naming the digest algorithm; each following
    line is one CacheEntry.  Writes are serialized through one lock; existing
    entries are never rewritten (duplicate keys keep the first occurrence).
    """

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._entries: dict[str, CacheEntry] = {}
        self._header_written = False
        if os.path.exists(self.path):
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as fh:
            lines = [ln for ln in (l.strip() for l in fh) if ln]
        if not lines:
            return
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{self.path}: bad cache header ({exc})") from exc
        if header.get("cache_format") != 1 or header.get("digest") != _DIGEST:
            raise ValidationError(f"{self.path}: unsupported cache header {header!r}")
        self._header_written = True
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                obj = json.loads(line)
                entry = CacheEntry(
                    key=obj["key"],
                    model=obj["model"],
                    temperature=float(obj["temperature"]),
                    sample_index=int(obj["sample_index"]),
                    raw_response=obj["raw_response"],
                    parsed=tuple(obj["parsed"]) if obj.get("parsed") is not None else None,
                    failure=obj.get("failure"),
                    created=obj.get("created", ""),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{self.path}:{lineno}: bad cache entry ({exc})") from exc
            self._entries.setdefault(entry.key, entry)

    def __len__(self):
        return len(self._entries)

    def get(self, key: str) -> CacheEntry | None:
        return self._entries.get(key)

    def put(self, entry: CacheEntry) -> None:
        with self._lock:
            if entry.key in self._entries:
                return
            with open(self.path, "a", encoding="utf-8") as fh:
                if not self._header_written:
                    fh.write(json.dumps({"cache_format": 1, "digest": _DIGEST}) + "\n")
                    self._header_written = True
                fh.write(json.dumps(entry.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
            self._entries[entry.key] = entry


class HttpTransport:
    """POSTs to {base_url}/v1/chat/completions with a bearer token."""

    def __init__(self, endpoint: ModelEndpoint):
        self.endpoint = endpoint
        key = os.environ.get(endpoint.api_key_env, "")
        if not key:
            raise AuthError(f"environment variable {endpoint.api_key_env} is not set")
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"

    def post(self, payload: dict) -> dict:
        try:
            resp = requests.post(
                self._url, headers=self._headers, json=payload, timeout=self.endpoint.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"authentication rejected (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response: {resp.text[:200]}") from exc


class ScriptedTransport:
    """Offline stand-in for HttpTransport; also the fault-injection hook in tests.

    script(messages, call_index, choice_index) -> response text.
    """

    def __init__(self, script: Callable[[list, int, int], str]):
        self.script = script
        self.calls = 0

    def post(self, payload: dict) -> dict:
        n = int(payload.get("n", 1))
        contents = [self.script(payload["messages"], self.calls, i) for i in range(n)]
        self.calls += 1
        return {"choices": [{"message": {"content": c}} for c in contents]}


@dataclass(frozen=True)
class SampleResult:
    sample_index: int
    raw: str
    label: LabelValue | None
    failure: str | None
    from_cache: bool


@dataclass(frozen=True)
class ItemAnnotation:
    item_id: str
    samples: tuple[SampleResult, ...]

    def labels(self) -> list[LabelValue]:
        return [s.label for s in self.samples if s.label is not None]


def _call_with_retries(transport, payload: dict, policy: RetryPolicy) -> dict:
    last: TransportError | None = None
    for attempt in range(policy.max_attempts):
        try:
            return transport.post(payload)
        except AuthError:
            raise
        except TransportError as exc:
            last = exc
            if attempt + 1 < policy.max_attempts and policy.backoff:
                time.sleep(policy.backoff[min(attempt, len(policy.backoff) - 1)])
    assert last is not None
    raise last


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def annotate(
    endpoint: ModelEndpoint,
    cfg: PromptConfig,
    items: Sequence[tuple[str, str]],
    cache: AnnotationCache,
    transport=None,
    replay: bool | None = None,
) -> list[ItemAnnotation]:
    """Collect cfg.n_samples labels per (item_id, text), cache-first.

    Cache misses go to the endpoint with at most max_in_flight concurrent
    requests; every raw response is appended to the cache before use.  In
    replay mode (replay=True or SILICON_REPLAY=1) a miss raises
    ReplayCacheMiss and no transport is ever constructed.  Transport failures
    that survive the retry policy mark the affected samples as failures and
    the run continues; authentication errors abort.
    """
    if replay is None:
        replay = os.environ.get(REPLAY_ENV, "") == "1"
    ids = [item_id for item_id, _ in items]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate item_ids in annotate input")

    prompts = {item_id: assemble_prompt(cfg, text) for item_id, text in items}
    keys = {
        (item_id, s): cache_key(endpoint.name, prompts[item_id], cfg.temperature, s)
        for item_id, _ in items
        for s in range(cfg.n_samples)
    }
    results: dict[tuple[str, int], SampleResult] = {}
    missing: dict[str, list[int]] = {}
    for (item_id, s), key in keys.items():
        entry = cache.get(key)
        if entry is None:
            missing.setdefault(item_id, []).append(s)
            continue
        parsed = parse_response(entry.raw_response, cfg.task)
        results[(item_id, s)] = SampleResult(
            sample_index=s,
            raw=entry.raw_response,
            label=parsed if isinstance(parsed, LabelValue) else None,
            failure=parsed.reason if isinstance(parsed, ParseFailure) else None,
            from_cache=True,
        )

    if missing:
        if replay:
            item_id = next(iter(missing))
            raise ReplayCacheMiss(
                f"{sum(len(v) for v in missing.values())} samples absent from cache "
                f"(first: item={item_id!r} sample={missing[item_id][0]}); "
                f"replay mode refuses network calls"
            )
        if transport is None:
            transport = HttpTransport(endpoint)

        def fetch(item_id: str, sample_indices: list[int]):
            messages = prompts[item_id]
            if endpoint.supports_n:
                payload = {
                    "model": endpoint.name,
                    "messages": messages,
                    "temperature": cfg.temperature,
                    "n": len(sample_indices),
                }
                resp = _call_with_retries(transport, payload, endpoint.retry)
                try:
                    texts = [c["message"]["content"] for c in resp["choices"]]
                except (KeyError, TypeError) as exc:
                    raise TransportError(f"malformed response shape: {exc}") from exc
                if len(texts) != len(sample_indices):
                    raise TransportError(
                        f"asked for {len(sample_indices)} choices, got {len(texts)}"
                    )
                return texts
            texts = []
            for _ in sample_indices:
                payload = {
                    "model": endpoint.name,
                    "messages": messages,
                    "temperature": cfg.temperature,
                    "n": 1,
                }
                resp = _call_with_retries(transport, payload, endpoint.retry)
                try:
                    texts.append(resp["choices"][0]["message"]["content"])
                except (KeyError, TypeError, IndexError) as exc:
                    raise TransportError(f"malformed response shape: {exc}") from exc
            return texts

        order = [item_id for item_id, _ in items if item_id in missing]
        with ThreadPoolExecutor(max_workers=endpoint.max_in_flight) as pool:
            futures = {item_id: pool.submit(fetch, item_id, missing[item_id]) for item_id in order}
            for item_id in order:
                sample_indices = missing[item_id]
                try:
                    texts = futures[item_id].result()
                except TransportError as exc:
                    for s in sample_indices:
                        results[(item_id, s)] = SampleResult(
                            sample_index=s, raw="", label=None,
                            failure=f"transport: {exc}", from_cache=False,
                        )
                    continue
                for s, text in zip(sample_indices, texts):
                    parsed = parse_response(text, cfg.task)
                    label = parsed if isinstance(parsed, LabelValue) else None
                    failure = parsed.reason if isinstance(parsed, ParseFailure) else None
                    cache.put(CacheEntry(
                        key=keys[(item_id, s)],
                        model=endpoint.name,
                        temperature=cfg.temperature,
                        sample_index=s,
                        raw_response=text,
                        parsed=tuple(label.to_names(cfg.task)) if label else None,
                        failure=failure,
                        created=_now(),
                    ))
                    results[(item_id, s)] = SampleResult(
                        sample_index=s, raw=text, label=label,
                        failure=failure, from_cache=False,
                    )

    return [
        ItemAnnotation(
            item_id=item_id,
            samples=tuple(results[(item_id, s)] for s in range(cfg.n_samples)),
        )
        for item_id, _ in items
    ]


def annotations_to_records(
    annotations: Sequence[ItemAnnotation], model_name: str, spec: TaskSpec
):
    """Successful samples as AnnotationRecords (run = sample index) plus a failure list."""
    source = SourceId(role=Role.MODEL, name=model_name)
    records, failures = [], []
    for ann in annotations:
        for sample in ann.samples:
            if sample.label is not None:
                records.append(AnnotationRecord(
                    item_id=ann.item_id, source=source,
                    labels=sample.label, run_index=sample.sample_index,
                ))
            else:
                failures.append({
                    "item_id": ann.item_id,
                    "sample_index": sample.sample_index,
                    "reason": sample.failure or "unparseable",
                    "raw_response": sample.raw,
                })
    return records, failures


def load_endpoint(path) -> ModelEndpoint:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    try:
        retry = obj.get("retry", {})
        return ModelEndpoint(
            name=obj["name"],
            base_url=obj["base_url"],
            api_key_env=obj["api_key_env"],
            max_in_flight=int(obj.get("max_in_flight", 4)),
            timeout=float(obj.get("timeout", 60.0)),
            supports_n=bool(obj.get("supports_n", True)),
            retry=RetryPolicy(
                max_attempts=int(retry.get("max_attempts", 3)),
                backoff=tuple(retry.get("backoff", (1.0, 2.0, 4.0))),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad endpoint config: {exc}") from exc


def load_prompt_config(path, spec: TaskSpec) -> PromptConfig:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    guideline = obj.get("guideline_text")
    if guideline is None and "guideline_file" in obj:
        gpath = os.path.join(os.path.dirname(os.path.abspath(path)), obj["guideline_file"])
        with open(gpath, encoding="utf-8") as fh:
            guideline = fh.read()
    if guideline is None:
        raise ValidationError(f"{path}: needs guideline_text or guideline_file")
    try:
        return PromptConfig(
            task=spec,
            guideline_text=guideline,
            strategy=Strategy(obj.get("strategy", "base")),
            placement=Placement(obj.get("placement", "system")),
            persona_text=obj.get("persona_text"),
            temperature=float(obj.get("temperature", 1.0)),
            n_samples=int(obj.get("n_samples", 5)),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad prompt config: {exc}") from exc
