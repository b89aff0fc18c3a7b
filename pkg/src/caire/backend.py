"""Scoring-backend protocol: request/response types, mock and HTTP clients.

Two request modes exist. ``distribution`` asks for probabilities over the
five score tokens (the backend must renormalize over exactly those tokens);
``nll`` asks for the negative log-likelihood of a completion given the
prompt. Responses are re-validated on the engine side, so a misbehaving
backend surfaces as a typed ProtocolError rather than silent corruption.

Wire format (HTTP backends): POST {base}/v1/score with JSON fields
``mode, prompt, image_b64, image_uri, completion, request_id``; the reply
carries ``probs`` (5 floats) or ``nll`` plus a ``backend`` identity string.
GET {base}/v1/capabilities describes supported modes and image handling.
Bearer token, when configured, is passed through the Authorization header.
"""

from __future__ import annotations

import base64
import hashlib
import math
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from .errors import ProtocolError, TransportError, UnsupportedMode

DISTRIBUTION_TOLERANCE = 1e-6
N_SCORE_TOKENS = 5

SCORE_ENDPOINT = "/v1/score"
CAPABILITIES_ENDPOINT = "/v1/capabilities"


@dataclass(frozen=True)
class BackendRequest:
    mode: str  # "distribution" | "nll"
    prompt_text: str
    request_id: str
    image_b64: str | None = None
    image_uri: str | None = None
    completion_text: str | None = None

    def validate(self) -> None:
        if self.mode not in ("distribution", "nll"):
            raise ProtocolError(f"unknown request mode {self.mode!r}")
        if self.mode == "nll" and not self.completion_text:
            raise ProtocolError("nll mode requires completion_text")
        if self.mode == "distribution" and self.completion_text is not None:
            raise ProtocolError("distribution mode takes no completion_text")

    def to_wire(self) -> dict:
        return {
            "mode": self.mode,
            "prompt": self.prompt_text,
            "image_b64": self.image_b64,
            "image_uri": self.image_uri,
            "completion": self.completion_text,
            "request_id": self.request_id,
        }


@dataclass(frozen=True)
class BackendResponse:
    request_id: str
    backend: str
    probs: tuple[float, ...] | None = None
    nll: float | None = None
    latency: float = 0.0


class ScorerBackend(Protocol):
    identity: str

    def query(self, request: BackendRequest) -> BackendResponse: ...


def validate_distribution(probs: Sequence[float]) -> tuple[float, ...]:
    """Enforce the score-distribution invariants; raises ProtocolError."""
    values = tuple(float(p) for p in probs)
    if len(values) != N_SCORE_TOKENS:
        raise ProtocolError(f"distribution must have {N_SCORE_TOKENS} entries, got {len(values)}")
    if any(not math.isfinite(p) or p < 0.0 for p in values):
        raise ProtocolError(f"distribution has negative or non-finite entries: {values}")
    total = sum(values)
    if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
        raise ProtocolError(f"distribution sums to {total}, expected 1 +/- {DISTRIBUTION_TOLERANCE}")
    return values


def _validate_response(request: BackendRequest, response: BackendResponse) -> BackendResponse:
    if response.request_id != request.request_id:
        raise ProtocolError(
            f"response for request {response.request_id!r}, expected {request.request_id!r}"
        )
    if request.mode == "distribution":
        if response.probs is None:
            raise ProtocolError("distribution response lacks probs")
        validate_distribution(response.probs)
    else:
        if response.nll is None:
            raise ProtocolError("nll response lacks nll value")
        if not math.isfinite(response.nll):
            raise ProtocolError(f"nll is non-finite: {response.nll}")
    return response


def query(backend: ScorerBackend, request: BackendRequest) -> BackendResponse:
    """Validated round trip: request invariants, backend call, response invariants."""
    request.validate()
    return _validate_response(request, backend.query(request))


def image_fields(image_reference: bytes | str | None) -> tuple[str | None, str | None]:
    """Map an opaque image reference to wire fields (image_b64, image_uri)."""
    if image_reference is None:
        return None, None
    if isinstance(image_reference, bytes):
        return base64.b64encode(image_reference).decode("ascii"), None
    return None, str(image_reference)


class MockScorerBackend:
    """Deterministic in-process backend for tests and desk-scale runs.

    Planted entries are keyed by ``|``-separated markers; a key matches a
    request when every part occurs case-insensitively in the prompt (plus
    completion for nll mode). The most specific match wins: more parts, then
    longer key, then lexicographically smallest. Misses fall back to a
    seeded-hash output, so any request stream is reproducible from
    (seed, table) alone.
    """

    def __init__(
        self,
        seed: int = 0,
        planted_distributions: dict[str, Sequence[float]] | None = None,
        planted_nlls: dict[str, float] | None = None,
    ):
        self.seed = int(seed)
        self.identity = f"mock:{self.seed}"
        self._distributions = {
            key: validate_distribution(dist)
            for key, dist in (planted_distributions or {}).items()
        }
        self._nlls: dict[str, float] = {}
        for key, value in (planted_nlls or {}).items():
            value = float(value)
            if not math.isfinite(value):
                raise ProtocolError(f"planted nll for {key!r} is non-finite")
            self._nlls[key] = value

    def _lookup(self, table: dict, text: str):
        haystack = text.lower()
        matches = [
            key
            for key in table
            if all(part in haystack for part in key.lower().split("|"))
        ]
        if not matches:
            return None
        matches.sort(key=lambda key: (-len(key.split("|")), -len(key), key))
        return table[matches[0]]

    def _digest(self, request: BackendRequest) -> bytes:
        payload = "\x1f".join(
            [
                str(self.seed),
                request.mode,
                request.prompt_text,
                request.completion_text or "",
                request.image_b64 or "",
                request.image_uri or "",
            ]
        )
        return hashlib.sha256(payload.encode("utf-8")).digest()

    def _fallback_distribution(self, request: BackendRequest) -> tuple[float, ...]:
        digest = self._digest(request)
        raw = [int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(5)]
        weights = [(r / 2**32) + 0.05 for r in raw]
        total = sum(weights)
        return tuple(w / total for w in weights)

    def _fallback_nll(self, request: BackendRequest) -> float:
        digest = self._digest(request)
        u = int.from_bytes(digest[:8], "little") / 2**64
        return 0.5 + 9.5 * u

    def query(self, request: BackendRequest) -> BackendResponse:
        request.validate()
        if request.mode == "distribution":
            planted = self._lookup(self._distributions, request.prompt_text)
            probs = planted if planted is not None else self._fallback_distribution(request)
            return BackendResponse(
                request_id=request.request_id, backend=self.identity, probs=probs
            )
        text = request.prompt_text + "\n" + (request.completion_text or "")
        planted_nll = self._lookup(self._nlls, text)
        nll = planted_nll if planted_nll is not None else self._fallback_nll(request)
        return BackendResponse(request_id=request.request_id, backend=self.identity, nll=nll)


def mock_backend(
    seed: int = 0,
    planted_distributions: dict[str, Sequence[float]] | None = None,
    planted_nlls: dict[str, float] | None = None,
) -> MockScorerBackend:
    return MockScorerBackend(seed, planted_distributions, planted_nlls)


class HttpScorerBackend:
    """Client for a protocol-conformant scoring service.

    Transient failures (connection errors, timeouts, 5xx) are retried up to
    ``attempts`` times with exponential backoff; requests are idempotent by
    request_id so a retry can never double-count. 4xx responses are protocol
    errors and are not retried.
    """

    def __init__(
        self,
        base_url: str,
        token: str | None = None,
        timeout: float = 60.0,
        attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.identity = self.base_url
        self.token = token
        self.timeout = timeout
        self.attempts = max(1, int(attempts))
        self.backoff = backoff
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def capabilities(self) -> dict:
        try:
            resp = self._session.get(
                self.base_url + CAPABILITIES_ENDPOINT,
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"capabilities fetch failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"capabilities returned HTTP {resp.status_code}")
        return resp.json()

    def query(self, request: BackendRequest) -> BackendResponse:
        request.validate()
        url = self.base_url + SCORE_ENDPOINT
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            started = time.monotonic()
            try:
                resp = self._session.post(
                    url, json=request.to_wire(), headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            latency = time.monotonic() - started
            return self._parse(request, resp, latency)
        raise TransportError(
            f"backend unreachable after {self.attempts} attempts: {last_error}"
        )

    def _parse(self, request: BackendRequest, resp, latency: float) -> BackendResponse:
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response (HTTP {resp.status_code})") from exc
        if resp.status_code != 200:
            error = body.get("error", {}) if isinstance(body, dict) else {}
            code = error.get("code", "")
            message = error.get("message", f"HTTP {resp.status_code}")
            if code == "unsupported_mode":
                raise UnsupportedMode(message)
            raise ProtocolError(f"backend rejected request: {message}")
        probs = body.get("probs")
        return BackendResponse(
            request_id=str(body.get("request_id", "")),
            backend=str(body.get("backend", self.identity)),
            probs=tuple(float(p) for p in probs) if probs is not None else None,
            nll=float(body["nll"]) if body.get("nll") is not None else None,
            latency=latency,
        )
