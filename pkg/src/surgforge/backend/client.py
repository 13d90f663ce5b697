"""Backend client: endpoint transports, retry with exponential backoff,
and response validation.

Endpoint spec strings (config values or SURGFORGE_ENDPOINT_* overrides):

    mock                    in-process deterministic mock
    http://host:port/path   HTTP POST, JSON body per request
    pipe:<command line>     subprocess speaking line-delimited JSON on stdio
"""

import logging
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

import requests

from surgforge.backend.protocol import (
    BackendRequest,
    BackendResponse,
    parse_message,
    serialize_message,
    validate_request,
    validate_response,
)
from surgforge.errors import (
    BackendRefusal,
    ConfigError,
    RequestTimeout,
    SchemaViolation,
    TransportError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay_s: float = 0.5
    max_delay_s: float = 8.0

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        return min(self.max_delay_s, self.base_delay_s * (2 ** (attempt - 1)))


class InProcessEndpoint:
    """Wraps a handler callable (e.g. MockBackend.handle)."""

    def __init__(self, handler: Callable[[BackendRequest], BackendResponse]):
        self._handler = handler

    def send(self, req: BackendRequest, timeout_s: float) -> BackendResponse:
        return self._handler(req)

    def close(self) -> None:
        pass


class HttpEndpoint:
    """POSTs one request per call; the body is the wire JSON."""

    def __init__(self, url: str, bearer_token: str | None = None):
        self.url = url
        self._headers = {"Content-Type": "application/json"}
        if bearer_token:
            self._headers["Authorization"] = f"Bearer {bearer_token}"
        self._session = requests.Session()

    def send(self, req: BackendRequest, timeout_s: float) -> BackendResponse:
        try:
            http_resp = self._session.post(
                self.url,
                data=serialize_message(req).encode("utf-8"),
                headers=self._headers,
                timeout=timeout_s,
            )
        except requests.Timeout as exc:
            raise RequestTimeout(f"{self.url}: {exc}") from exc
        except requests.RequestException as exc:
            raise TransportError(f"{self.url}: {exc}") from exc
        if http_resp.status_code != 200:
            raise TransportError(f"{self.url}: HTTP {http_resp.status_code}")
        msg = parse_message(http_resp.text)
        if not isinstance(msg, BackendResponse):
            raise SchemaViolation("endpoint returned a request envelope")
        return msg

    def close(self) -> None:
        self._session.close()


class PipeEndpoint:
    """Long-lived subprocess speaking one JSON message per line on stdio."""

    def __init__(self, command: str):
        self.command = command
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    shlex.split(self.command),
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                )
            except OSError as exc:
                raise TransportError(f"cannot spawn {self.command!r}: {exc}") from exc
        return self._proc

    def send(self, req: BackendRequest, timeout_s: float) -> BackendResponse:
        with self._lock:
            proc = self._ensure_proc()
            try:
                proc.stdin.write(serialize_message(req) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"pipe to {self.command!r} broke: {exc}") from exc
        if not line:
            raise TransportError(f"pipe to {self.command!r} closed without answering")
        msg = parse_message(line)
        if not isinstance(msg, BackendResponse):
            raise SchemaViolation("endpoint returned a request envelope")
        return msg

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None


def make_endpoint(spec: str, handler_factory: Callable[[], Any] | None = None):
    """Build an endpoint from its config string."""
    if spec == "mock":
        if handler_factory is None:
            from surgforge.backend.mock import MockBackend

            handler_factory = MockBackend
        return InProcessEndpoint(handler_factory().handle)
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpEndpoint(spec)
    if spec.startswith("pipe:"):
        return PipeEndpoint(spec[len("pipe:") :])
    raise ConfigError(f"unrecognized endpoint spec {spec!r}")


def call(
    endpoint,
    req: BackendRequest,
    retry_policy: RetryPolicy | None = None,
    timeout_s: float = 60.0,
    sleep: Callable[[float], None] = time.sleep,
) -> BackendResponse:
    """Send a request, retrying transport/timeout failures with backoff.

    Schema violations are never retried: a service that answers off-schema
    will not heal by asking again. The returned response is fully validated.
    """
    policy = retry_policy or RetryPolicy()
    validate_request(req)
    attempt = 0
    while True:
        attempt += 1
        try:
            resp = endpoint.send(req, timeout_s)
        except (TransportError, RequestTimeout) as exc:
            if attempt >= policy.max_attempts:
                raise
            wait = policy.delay(attempt)
            logger.warning(
                "attempt %d/%d for %s failed (%s); retrying in %.2fs",
                attempt, policy.max_attempts, req.kind, exc, wait,
            )
            sleep(wait)
            continue
        validate_response(resp, req.kind, req.request_id)
        return resp


class BackendClient:
    """Per-kind endpoints plus a convenience result-or-raise call.

    Safe for concurrent use; ``max_concurrency`` bounds in-flight requests
    per endpoint (None = unbounded)."""

    def __init__(
        self,
        endpoints: dict[str, Any],
        retry_policy: RetryPolicy | None = None,
        timeout_s: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
        max_concurrency: int | None = None,
    ):
        self._endpoints = endpoints
        self._policy = retry_policy or RetryPolicy()
        self._timeout_s = timeout_s
        self._sleep = sleep
        self._gates = {
            kind: threading.BoundedSemaphore(max_concurrency) if max_concurrency else None
            for kind in endpoints
        }

    def call(self, req: BackendRequest) -> BackendResponse:
        try:
            endpoint = self._endpoints[req.kind]
        except KeyError:
            raise ConfigError(f"no endpoint configured for kind {req.kind!r}") from None
        gate = self._gates.get(req.kind)
        if gate is None:
            return call(endpoint, req, self._policy, self._timeout_s, self._sleep)
        with gate:
            return call(endpoint, req, self._policy, self._timeout_s, self._sleep)

    def invoke(self, kind: str, payload: dict[str, Any]) -> dict[str, Any]:
        """Call and unwrap; raises BackendRefusal on status=error."""
        resp = self.call(BackendRequest(kind=kind, payload=payload))
        if resp.status != "ok":
            err = resp.error or {}
            raise BackendRefusal(f"{kind}: {err.get('code')}: {err.get('message')}")
        return resp.result

    def close(self) -> None:
        for endpoint in self._endpoints.values():
            endpoint.close()
