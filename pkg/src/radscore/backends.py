"""Uniform client over multimodal/text LLM endpoints.

Provides request shaping for two wire styles (openai-chat and gemini), a
deterministic mock for tests and offline demo runs, bounded-parallel batch
completion, retry with a deterministic backoff schedule, and an append-only
transcript ledger that enables ``--replay`` reruns with zero network calls.

Credentials are read from an environment variable at call time and never
stored on the config or serialized into any artifact.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .imaging import encode_for_backend
from .prompts import PromptBundle

__all__ = [
    "RetryPolicy",
    "BackendConfig",
    "Transcript",
    "TranscriptLedger",
    "BackendError",
    "ConfigurationError",
    "TransientFailure",
    "MockBackend",
    "ReplayBackend",
    "HttpBackend",
    "make_backend",
    "request_digest",
    "complete",
    "complete_batch",
    "BatchItem",
]

RETRYABLE_KINDS = ("timeout", "http-429", "http-5xx")

# Judge-backend defaults reported for the evaluation API; applied to all
# backends unless overridden.
DEFAULT_TEMPERATURE = 0.0
DEFAULT_TOP_P = 0.95
DEFAULT_MAX_TOKENS = 4000
DEFAULT_MODEL_VERSION = "2024-02-15-preview"


class BackendError(Exception):
    """Permanent backend failure (retries exhausted or non-retryable status)."""

    def __init__(self, message: str, status: Optional[str] = None):
        super().__init__(message)
        self.status = status


class ConfigurationError(Exception):
    """Bad backend configuration detected before any network call."""


class TransientFailure(Exception):
    """A retryable failure kind: one of timeout, http-429, http-5xx."""

    def __init__(self, kind: str, message: str = ""):
        super().__init__(message or kind)
        self.kind = kind


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: int = 200
    backoff_multiplier: float = 2.0
    retry_on: tuple[str, ...] = RETRYABLE_KINDS

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_multiplier < 1:
            raise ValueError("backoff_multiplier must be >= 1")

    def backoff_ms(self, attempt: int) -> float:
        """Deterministic delay before retry number ``attempt`` (1-based)."""
        return self.base_backoff_ms * self.backoff_multiplier ** (attempt - 1)


@dataclass(frozen=True)
class BackendConfig:
    name: str
    endpoint_url: str = ""
    auth_env_var: str = ""
    adapter: str = "openai-chat"  # or "gemini"
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_version: str = DEFAULT_MODEL_VERSION
    max_concurrency: int = 4
    cot_capable: bool = True
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def public_dict(self) -> dict:
        """Serializable view; holds only the credential's env-var *name*."""
        d = asdict(self)
        d["retry"] = asdict(self.retry)
        d["retry"]["retry_on"] = list(self.retry.retry_on)
        return d


@dataclass(frozen=True)
class Transcript:
    request_digest: str
    backend_name: str
    response_text: str
    latency_ms: int
    attempt_count: int
    timestamp: str
    truncated: bool = False


@dataclass(frozen=True)
class SendResult:
    text: str
    truncated: bool = False


def _image_bytes(bundle: PromptBundle) -> Optional[bytes]:
    if bundle.image is not None:
        return encode_for_backend(bundle.image, "png")[0]
    if bundle.raw_image is not None:
        import io
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(bundle.raw_image).save(buf, format="PNG")
        return buf.getvalue()
    return None


def request_digest(cfg: BackendConfig, bundle: PromptBundle) -> str:
    """SHA-256 over a canonical serialization of prompt + image + config-sans-secret."""
    img = _image_bytes(bundle)
    payload = {
        "system": bundle.system_text,
        "user": bundle.user_text,
        "image_sha256": hashlib.sha256(img).hexdigest() if img is not None else None,
        "config": cfg.public_dict(),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TranscriptLedger:
    """Append-only line-delimited transcript store; the single serialized writer."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, transcript: Transcript) -> None:
        line = json.dumps(asdict(transcript), sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    @staticmethod
    def load_responses(path: Path | str) -> dict[str, str]:
        """Map request_digest -> response_text (last write wins)."""
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    responses[obj["request_digest"]] = obj["response_text"]
        return responses


# ---------------------------------------------------------------------------
# Wire adapters (request shaping only; live calls go through HttpBackend)
# ---------------------------------------------------------------------------

def shape_openai_chat(cfg: BackendConfig, bundle: PromptBundle) -> dict:
    content: list[dict] = [{"type": "text", "text": bundle.user_text}]
    img = _image_bytes(bundle)
    if img is not None:
        content.append({
            "type": "image_url",
            "image_url": {"url": "data:image/png;base64," + base64.b64encode(img).decode("ascii")},
        })
    messages = []
    if bundle.system_text:
        messages.append({"role": "system", "content": bundle.system_text})
    messages.append({"role": "user", "content": content})
    return {
        "messages": messages,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "max_tokens": cfg.max_tokens,
    }


def shape_gemini(cfg: BackendConfig, bundle: PromptBundle) -> dict:
    parts: list[dict] = [{"text": bundle.user_text}]
    img = _image_bytes(bundle)
    if img is not None:
        parts.append({"inline_data": {"mime_type": "image/png",
                                      "data": base64.b64encode(img).decode("ascii")}})
    return {
        "contents": [{"role": "user", "parts": parts}],
        "generationConfig": {
            "temperature": cfg.temperature,
            "topP": cfg.top_p,
            "maxOutputTokens": cfg.max_tokens,
        },
    }


_ADAPTERS: dict[str, Callable[[BackendConfig, PromptBundle], dict]] = {
    "openai-chat": shape_openai_chat,
    "gemini": shape_gemini,
}


class HttpBackend:
    """Live HTTP transport; adapter selection comes from config, never inferred."""

    def __init__(self, cfg: BackendConfig, timeout_s: float = 120.0):
        if cfg.adapter not in _ADAPTERS:
            raise ConfigurationError(f"unknown adapter {cfg.adapter!r}")
        if not cfg.endpoint_url:
            raise ConfigurationError(f"backend {cfg.name!r} has no endpoint_url")
        self.cfg = cfg
        self.timeout_s = timeout_s

    def send(self, bundle: PromptBundle, digest: str) -> SendResult:
        credential = os.environ[self.cfg.auth_env_var] if self.cfg.auth_env_var else ""
        payload = _ADAPTERS[self.cfg.adapter](self.cfg, bundle)
        headers = {"Content-Type": "application/json"}
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        try:
            resp = requests.post(self.cfg.endpoint_url, json=payload,
                                 headers=headers, timeout=self.timeout_s)
        except requests.Timeout:
            raise TransientFailure("timeout")
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}")
        if resp.status_code == 429:
            raise TransientFailure("http-429")
        if resp.status_code >= 500:
            raise TransientFailure("http-5xx", f"status {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"status {resp.status_code}: {resp.text[:500]}",
                               status=str(resp.status_code))
        body = resp.json()
        if self.cfg.adapter == "gemini":
            cand = body["candidates"][0]
            text = "".join(p.get("text", "") for p in cand["content"]["parts"])
            truncated = cand.get("finishReason") == "MAX_TOKENS"
        else:
            choice = body["choices"][0]
            text = choice["message"]["content"]
            truncated = choice.get("finish_reason") == "length"
        return SendResult(text=text, truncated=truncated)


_GRADES = ("Correct", "Partially Correct", "Incorrect", "Not Applicable")


def _synthesize_response(bundle: PromptBundle, digest: str) -> str:
    """Deterministic offline response derived from the request digest.

    Judge prompts get a parseable verdict object with digest-chosen grades;
    generation prompts get a short synthetic impression.
    """
    if '"grade"' in bundle.user_text or "Grading Terms:" in bundle.user_text:
        seed = bytes.fromhex(digest[:16])
        verdict = {}
        for i, aspect in enumerate(("location", "body_part", "type", "attributes")):
            grade = _GRADES[seed[i] % 4]
            verdict[aspect] = {"grade": grade,
                               "explanation": f"Mock assessment of {aspect.replace('_', ' ')}."}
        return json.dumps(verdict)
    kinds = ("nodule", "mass", "cyst", "lesion")
    sites = ("right lower lobe of the lung", "left kidney", "liver segment 4",
             "prevascular space", "left iliac bone")
    seed = bytes.fromhex(digest[:8])
    return (f"Location: {sites[seed[0] % len(sites)]}; "
            f"Body Part: {('lung', 'kidney', 'liver', 'mediastinum', 'pelvis')[seed[1] % 5]}; "
            f"Type: {kinds[seed[2] % 4]}; "
            f"Impression: A {kinds[seed[2] % 4]} is seen in the {sites[seed[0] % len(sites)]}.")


class MockBackend:
    """Deterministic in-process backend for tests and offline demo runs.

    ``fixtures`` maps request digests to canned responses; ``fail_sequence``
    is a queue of failure kinds consumed once per attempt (then success);
    ``fail_digests`` always fail with the given kind.  Tracks the maximum
    observed in-flight concurrency for batch tests.
    """

    def __init__(
        self,
        fixtures: Optional[dict[str, str]] = None,
        fail_sequence: Sequence[str] = (),
        fail_digests: Optional[dict[str, str]] = None,
        latency_s: float = 0.0,
    ):
        self.fixtures = fixtures or {}
        self._fail_queue = list(fail_sequence)
        self.fail_digests = fail_digests or {}
        self.latency_s = latency_s
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0

    def send(self, bundle: PromptBundle, digest: str) -> SendResult:
        with self._lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            fail = self._fail_queue.pop(0) if self._fail_queue else None
        try:
            if self.latency_s:
                time.sleep(self.latency_s)
            if fail is not None:
                raise TransientFailure(fail)
            if digest in self.fail_digests:
                raise TransientFailure(self.fail_digests[digest])
            if digest in self.fixtures:
                return SendResult(text=self.fixtures[digest])
            return SendResult(text=_synthesize_response(bundle, digest))
        finally:
            with self._lock:
                self._in_flight -= 1


class ReplayBackend:
    """Serves responses recorded in a transcript ledger; never touches the network."""

    def __init__(self, ledger_path: Path | str):
        self.responses = TranscriptLedger.load_responses(ledger_path)

    def send(self, bundle: PromptBundle, digest: str) -> SendResult:
        if digest not in self.responses:
            raise BackendError(f"replay ledger has no transcript for digest {digest}")
        return SendResult(text=self.responses[digest])


def make_backend(cfg: BackendConfig, replay_ledger: Optional[Path | str] = None):
    if replay_ledger is not None:
        return ReplayBackend(replay_ledger)
    if cfg.name == "mock":
        return MockBackend()
    return HttpBackend(cfg)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def complete(
    cfg: BackendConfig,
    bundle: PromptBundle,
    backend=None,
    ledger: Optional[TranscriptLedger] = None,
    sleep: Callable[[float], None] = time.sleep,
    diagnostic: Callable[[str], None] = lambda msg: print(msg, file=sys.stderr),
) -> tuple[str, Transcript]:
    """Send one prompt with retries; persist the transcript before returning."""
    if cfg.auth_env_var and backend is None and cfg.name != "mock":
        if cfg.auth_env_var not in os.environ:
            raise ConfigurationError(
                f"backend {cfg.name!r}: credential env var {cfg.auth_env_var} is unset")
    if backend is None:
        backend = make_backend(cfg)

    digest = request_digest(cfg, bundle)
    start = time.monotonic()
    attempt = 0
    while True:
        attempt += 1
        try:
            result = backend.send(bundle, digest)
            break
        except TransientFailure as failure:
            if attempt >= cfg.retry.max_attempts or failure.kind not in cfg.retry.retry_on:
                raise BackendError(
                    f"backend {cfg.name!r} failed after {attempt} attempts: {failure.kind}",
                    status=failure.kind,
                ) from failure
            sleep(cfg.retry.backoff_ms(attempt) / 1000.0)

    if result.truncated:
        diagnostic(f"warning: backend {cfg.name!r} response truncated (digest {digest[:12]})")
    transcript = Transcript(
        request_digest=digest,
        backend_name=cfg.name,
        response_text=result.text,
        latency_ms=int((time.monotonic() - start) * 1000),
        attempt_count=attempt,
        timestamp=_utc_now(),
        truncated=result.truncated,
    )
    if ledger is not None:
        ledger.append(transcript)
    return result.text, transcript


@dataclass(frozen=True)
class BatchItem:
    """One batch slot: either a response + transcript or an error message."""

    text: Optional[str] = None
    transcript: Optional[Transcript] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def complete_batch(
    cfg: BackendConfig,
    bundles: Sequence[PromptBundle],
    backend=None,
    ledger: Optional[TranscriptLedger] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[BatchItem]:
    """Complete many prompts with at most ``cfg.max_concurrency`` in flight.

    Output order equals input order regardless of completion order; per-item
    failures are embedded as :class:`BatchItem` errors, never aborting the
    batch.
    """
    if not bundles:
        return []
    if backend is None:
        backend = make_backend(cfg)

    def one(bundle: PromptBundle) -> BatchItem:
        try:
            text, transcript = complete(cfg, bundle, backend=backend, ledger=ledger, sleep=sleep)
            return BatchItem(text=text, transcript=transcript)
        except (BackendError, ConfigurationError) as exc:
            return BatchItem(error=str(exc))

    with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
        return list(pool.map(one, bundles))
