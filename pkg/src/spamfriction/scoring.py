"""Spamminess scoring: a transparent builtin token model plus an external
scorer client speaking a one-line protocol.

The builtin scorer is deliberately simple -- a linear-logistic model over
case-folded tokens -- because the delivery policy only needs a deterministic
probability-like number in [0, 1].  Real filters plug in over the external
protocol: the client sends ``SCORE <byte-count>\\n<body-bytes>`` and reads
back a single line holding a decimal in [0, 1].

Scoring never blocks delivery decisions: any external failure (unreachable,
timeout, malformed or out-of-range reply) degrades to the configured
fallback score, which defaults to 0.0 so misbehaving scorers fail open.
"""
from __future__ import annotations

import math
import re
import socket
import threading
from dataclasses import dataclass, field

DEFAULT_MAX_BODY_BYTES = 52_428_800  # mirrors the advertised SIZE limit

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class ScorerUnavailable(Exception):
    """External scorer could not produce a usable score."""


@dataclass(frozen=True)
class SpamScore:
    """Probability-like spamminess in [0, 1].

    ``degraded`` marks scores that came from the fallback path rather than a
    working scorer.
    """

    value: float
    degraded: bool = False

    def __post_init__(self) -> None:
        if math.isnan(self.value):
            raise ValueError("spam score may not be NaN")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"spam score {self.value} outside [0, 1]")


@dataclass
class ScorerConfig:
    mode: str = "builtin"
    token_weights: dict[str, float] = field(default_factory=dict)
    endpoint: tuple[str, int] | None = None
    timeout: float = 5.0
    fallback: float = 0.0
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES

    def __post_init__(self) -> None:
        if self.mode not in ("builtin", "external"):
            raise ValueError(f"unknown scorer mode: {self.mode!r}")
        if not 0.0 <= self.fallback <= 1.0 or math.isnan(self.fallback):
            raise ValueError("fallback score must lie in [0, 1]")
        if self.mode == "external" and self.endpoint is None:
            raise ValueError("external scorer needs an endpoint")
        if self.max_body_bytes < 1:
            raise ValueError("max_body_bytes must be positive")


def logistic(x: float) -> float:
    # split on sign to avoid exp overflow for very negative x
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def tokenize(body: bytes) -> list[str]:
    """Case-folded tokens split on whitespace and punctuation."""
    text = body.decode("utf-8", errors="replace").casefold()
    return _TOKEN_RE.findall(text)


def builtin_score(body: bytes, token_weights: dict[str, float]) -> float:
    """logistic(sum of token weights); 0.5 for an empty body (no evidence)."""
    evidence = 0.0
    for token in tokenize(body):
        evidence += token_weights.get(token, 0.0)
    return logistic(evidence)


def external_score(body: bytes, endpoint: tuple[str, int], timeout: float = 5.0) -> float:
    """Round-trip the body to an external scorer; one connection per call.

    Raises :class:`ScorerUnavailable` on any transport or protocol problem,
    including replies outside [0, 1].
    """
    try:
        with socket.create_connection(endpoint, timeout=timeout) as conn:
            conn.sendall(b"SCORE %d\n" % len(body))
            conn.sendall(body)
            reply = _read_line(conn, timeout)
    except OSError as exc:
        raise ScorerUnavailable(f"scorer at {endpoint[0]}:{endpoint[1]}: {exc}") from exc
    try:
        value = float(reply.strip())
    except ValueError as exc:
        raise ScorerUnavailable(f"malformed scorer reply: {reply!r}") from exc
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ScorerUnavailable(f"scorer reply out of range: {reply!r}")
    return value


def _read_line(conn: socket.socket, timeout: float) -> str:
    conn.settimeout(timeout)
    chunks = bytearray()
    while not chunks.endswith(b"\n"):
        data = conn.recv(1)
        if not data:
            raise ScorerUnavailable("scorer closed the connection mid-reply")
        chunks += data
        if len(chunks) > 128:
            raise ScorerUnavailable("scorer reply line too long")
    return chunks.decode("ascii", errors="replace")


class Scorer:
    """Stateful facade over the configured scoring mode.

    Reentrant: scoring holds no shared mutable state beyond the degraded-call
    counter, which is incremented under a lock.
    """

    def __init__(self, config: ScorerConfig):
        self.config = config
        self._degraded_calls = 0
        self._lock = threading.Lock()

    @property
    def degraded_calls(self) -> int:
        with self._lock:
            return self._degraded_calls

    def _note_degraded(self) -> None:
        with self._lock:
            self._degraded_calls += 1

    def score(self, body: bytes) -> SpamScore:
        if len(body) > self.config.max_body_bytes:
            raise ValueError(
                f"body of {len(body)} bytes exceeds limit {self.config.max_body_bytes}"
            )
        if self.config.mode == "builtin":
            return SpamScore(builtin_score(body, self.config.token_weights))
        assert self.config.endpoint is not None
        try:
            value = external_score(body, self.config.endpoint, self.config.timeout)
        except ScorerUnavailable:
            self._note_degraded()
            return SpamScore(self.config.fallback, degraded=True)
        return SpamScore(value)


def score(body: bytes, config: ScorerConfig) -> SpamScore:
    """One-shot convenience wrapper around :class:`Scorer`."""
    return Scorer(config).score(body)
