"""Obtains VLM outputs: live over HTTP or replayed from recorded files.

Live mode speaks the common chat-completions JSON schema (messages array,
image as a base64 PNG data URL, bearer token from a named environment
variable) with deterministic request parameters. Offline mode loads JSONL
stores; contrastive models contribute per-class score vectors instead of
text. This module deliberately never touches segmentation label maps: models
see raw images only.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock
from typing import Callable, Iterable, Sequence

import requests
from PIL import Image as PILImage

from .corruption import require_rgb8
from .pngio import N_CLASSES

log = logging.getLogger(__name__)


class ClientError(RuntimeError):
    """Non-retryable request failure (bad auth, bad request)."""


class TransportError(RuntimeError):
    """Retryable failure that exhausted its retries."""


class MalformedResponseError(RuntimeError):
    """The endpoint answered 200 but the body was not a chat completion."""


class StoreError(ValueError):
    """Recorded-response file violates the schema."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    auth_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    requests_per_second: float | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class VlmRecord:
    image_id: str
    condition: str
    prompt_id: str
    model_id: str
    raw_text: str
    transport: str = "recorded"
    retrieved_at: str = ""
    error: str = ""

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.image_id, self.condition, self.prompt_id, self.model_id)


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    condition: str
    model_id: str
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.scores) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} scores, got {len(self.scores)}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.image_id, self.condition, self.model_id)


def _record_row(rec: VlmRecord) -> dict:
    row = {
        "image_id": rec.image_id,
        "condition": rec.condition,
        "prompt_id": rec.prompt_id,
        "model_id": rec.model_id,
        "raw_text": rec.raw_text,
    }
    if rec.transport != "recorded":
        row["transport"] = rec.transport
    if rec.retrieved_at:
        row["retrieved_at"] = rec.retrieved_at
    if rec.error:
        row["error"] = rec.error
    return row


def _score_row(rec: ScoreRecord) -> dict:
    return {
        "image_id": rec.image_id,
        "condition": rec.condition,
        "model_id": rec.model_id,
        "scores": list(rec.scores),
    }


def encode_record(rec: VlmRecord | ScoreRecord) -> str:
    row = _score_row(rec) if isinstance(rec, ScoreRecord) else _record_row(rec)
    return json.dumps(row, ensure_ascii=False)


class ResponseStore:
    """Keyed store of generative records and contrastive score records.

    (image_id, condition, prompt_id, model_id) is a primary key for text
    records; (image_id, condition, model_id) for score records. Saving is
    canonical (sorted keys, fixed field order), so load-then-save is a
    fixpoint.
    """

    def __init__(self):
        self.records: dict[tuple[str, str, str, str], VlmRecord] = {}
        self.scores: dict[tuple[str, str, str], ScoreRecord] = {}

    def __len__(self) -> int:
        return len(self.records) + len(self.scores)

    def add(self, rec: VlmRecord | ScoreRecord, source: str = "") -> None:
        table = self.scores if isinstance(rec, ScoreRecord) else self.records
        if rec.key in table:
            raise StoreError(f"{source}duplicate record key {rec.key}")
        table[rec.key] = rec

    def model_ids(self) -> list[str]:
        ids = {r.model_id for r in self.records.values()}
        ids |= {r.model_id for r in self.scores.values()}
        return sorted(ids)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [encode_record(self.records[k]) for k in sorted(self.records)]
        lines += [encode_record(self.scores[k]) for k in sorted(self.scores)]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def extend_from_file(self, path) -> None:
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                where = f"{path}:{lineno}: "
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise StoreError(f"{where}invalid JSON: {e}") from None
                if not isinstance(row, dict):
                    raise StoreError(f"{where}expected an object, got {type(row).__name__}")
                self.add(_parse_row(row, where), source=where)


def _parse_row(row: dict, where: str) -> VlmRecord | ScoreRecord:
    if "scores" in row:
        required = ("image_id", "condition", "model_id", "scores")
        missing = [k for k in required if k not in row]
        if missing:
            raise StoreError(f"{where}missing fields {missing}")
        scores = row["scores"]
        if not isinstance(scores, list) or len(scores) != N_CLASSES:
            got = len(scores) if isinstance(scores, list) else type(scores).__name__
            raise StoreError(f"{where}expected {N_CLASSES} scores, got {got}")
        return ScoreRecord(
            image_id=str(row["image_id"]),
            condition=str(row["condition"]),
            model_id=str(row["model_id"]),
            scores=tuple(float(s) for s in scores),
        )
    required = ("image_id", "condition", "prompt_id", "model_id", "raw_text")
    missing = [k for k in required if k not in row]
    if missing:
        raise StoreError(f"{where}missing fields {missing}")
    return VlmRecord(
        image_id=str(row["image_id"]),
        condition=str(row["condition"]),
        prompt_id=str(row["prompt_id"]),
        model_id=str(row["model_id"]),
        raw_text=str(row["raw_text"]),
        transport=str(row.get("transport", "recorded")),
        retrieved_at=str(row.get("retrieved_at", "")),
        error=str(row.get("error", "")),
    )


def load_recorded(path) -> ResponseStore:
    """Load one JSONL store with row-level diagnostics."""
    store = ResponseStore()
    store.extend_from_file(path)
    return store


def png_data_url(img) -> str:
    arr = require_rgb8(img)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def build_chat_body(cfg: EndpointConfig, img, prompt: str) -> dict:
    """Deterministic chat-completions request body (temperature 0)."""
    return {
        "model": cfg.model_id,
        "temperature": 0,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": png_data_url(img)}},
                ],
            }
        ],
    }


def _auth_headers(cfg: EndpointConfig) -> dict:
    if not cfg.auth_env:
        return {}
    token = os.environ.get(cfg.auth_env)
    if not token:
        raise ClientError(f"auth environment variable {cfg.auth_env} is not set")
    return {"Authorization": f"Bearer {token}"}


def query(
    cfg: EndpointConfig,
    image,
    prompt: str,
    *,
    session: requests.Session | None = None,
    backoff_base: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """One chat request; returns the assistant text verbatim.

    Retries transient failures (timeouts, connection errors, 429, 5xx) with
    exponential backoff up to max_retries; auth failures and other 4xx are
    not retried. A 200 with an unusable body raises MalformedResponseError.
    """
    sess = session or requests
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    body = build_chat_body(cfg, image, prompt)
    headers = _auth_headers(cfg)
    attempts = cfg.max_retries + 1
    last = "no attempt made"
    for attempt in range(attempts):
        if attempt:
            sleep(backoff_base * 2 ** (attempt - 1))
        try:
            resp = sess.post(url, json=body, headers=headers, timeout=cfg.timeout)
        except (requests.Timeout, requests.ConnectionError) as e:
            last = f"{type(e).__name__}: {e}"
            continue
        if resp.status_code in (401, 403):
            raise ClientError(f"auth rejected by {url}: HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise ClientError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponseError(f"unusable completion body from {url}: {e}") from None
        if not isinstance(text, str):
            raise MalformedResponseError(f"completion content is {type(text).__name__}, not text")
        return text
    raise TransportError(f"{url} failed after {attempts} attempts; last error: {last}")


class RateLimiter:
    def __init__(self, requests_per_second: float | None):
        self._interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self._lock = Lock()
        self._next_at = 0.0

    def wait(self) -> None:
        if not self._interval:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if delay > 0:
            time.sleep(delay)


@dataclass
class BatchResult:
    store: ResponseStore
    fetched: int = 0
    skipped: int = 0
    failed: int = 0
    failures: list[tuple[str, str, str, str]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.failed == 0


def run_batch(
    cfg: EndpointConfig,
    image_ids: Sequence[str],
    conditions: Sequence[str],
    prompts: Sequence[tuple[str, str]],
    image_for: Callable[[str, str], object],
    store_path,
    *,
    jobs: int = 1,
    backoff_base: float = 0.5,
    rate_limiter: RateLimiter | None = None,
) -> BatchResult:
    """Fetch one record per (image x condition x prompt); resumable.

    ``prompts`` are (prompt_id, rendered_text) pairs, rendered once so every
    condition sees identical bytes. ``image_for(image_id, condition)`` loads
    the pixel data. Existing records in the store file are skipped. Transport
    failures become error-flagged records with empty text; the batch never
    crashes on a single request.
    """
    store_path = Path(store_path)
    store = ResponseStore()
    if store_path.is_file():
        store.extend_from_file(store_path)
    limiter = rate_limiter or RateLimiter(cfg.requests_per_second)
    result = BatchResult(store=store)

    todo = []
    for image_id in image_ids:
        for condition in conditions:
            for prompt_id, prompt_text in prompts:
                key = (image_id, condition, prompt_id, cfg.model_id)
                if key in store.records:
                    result.skipped += 1
                else:
                    todo.append((key, prompt_text))

    session = requests.Session()

    def fetch(task):
        (image_id, condition, prompt_id, model_id), prompt_text = task
        limiter.wait()
        image = image_for(image_id, condition)
        timestamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        try:
            text = query(cfg, image, prompt_text, session=session, backoff_base=backoff_base)
            error = ""
        except (TransportError, MalformedResponseError, ClientError) as e:
            text, error = "", f"{type(e).__name__}: {e}"
        return VlmRecord(
            image_id=image_id, condition=condition, prompt_id=prompt_id,
            model_id=model_id, raw_text=text, transport="live",
            retrieved_at=timestamp, error=error,
        )

    store_path.parent.mkdir(parents=True, exist_ok=True)
    with open(store_path, "a", encoding="utf-8") as out:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                fetched: Iterable[VlmRecord] = pool.map(fetch, todo)
                records = list(fetched)
        else:
            records = [fetch(task) for task in todo]
        for rec in records:  # single writer appends in deterministic task order
            store.add(rec)
            out.write(encode_record(rec) + "\n")
            result.fetched += 1
            if rec.error:
                result.failed += 1
                result.failures.append(rec.key)
                log.warning("request failed for %s: %s", rec.key, rec.error)
    return result
