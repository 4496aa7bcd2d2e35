"""Spam scoring: builtin token model and the external scorer protocol."""
import math
import socket
import threading
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spamfriction import scoring


def test_spam_score_bounds():
    scoring.SpamScore(0.0)
    scoring.SpamScore(1.0)
    with pytest.raises(ValueError):
        scoring.SpamScore(-0.01)
    with pytest.raises(ValueError):
        scoring.SpamScore(1.01)
    with pytest.raises(ValueError):
        scoring.SpamScore(float("nan"))


def test_tokenize_case_folds_and_splits():
    tokens = scoring.tokenize(b"Buy NOW!!! cheap-pills, Buy")
    assert tokens == ["buy", "now", "cheap", "pills", "buy"]


def test_tokenize_survives_arbitrary_bytes():
    assert isinstance(scoring.tokenize(b"\xff\xfe\x00 caf\xc3\xa9"), list)


def test_builtin_score_neutral_without_evidence():
    assert scoring.builtin_score(b"", {}) == 0.5
    assert scoring.builtin_score(b"nothing weighted here", {"spam": 5.0}) == 0.5


def test_builtin_score_direction():
    weights = {"spam": 3.0, "friend": -3.0}
    spammy = scoring.builtin_score(b"spam spam spam", weights)
    hammy = scoring.builtin_score(b"friend friend friend", weights)
    assert spammy > 0.99
    assert hammy < 0.01


def test_builtin_score_extreme_weights_do_not_overflow():
    assert scoring.builtin_score(b"x " * 500, {"x": 1000.0}) == 1.0
    assert scoring.builtin_score(b"x " * 500, {"x": -1000.0}) == 0.0


@given(
    body=st.binary(max_size=400),
    weights=st.dictionaries(st.text(max_size=8), st.floats(-50, 50), max_size=5),
)
def test_score_always_in_unit_interval(body, weights):
    result = scoring.score(body, scoring.ScorerConfig(token_weights=weights))
    assert 0.0 <= result.value <= 1.0
    assert not result.degraded


def test_oversize_body_rejected():
    config = scoring.ScorerConfig(max_body_bytes=10)
    with pytest.raises(ValueError):
        scoring.Scorer(config).score(b"x" * 11)


def test_scorer_config_validation():
    with pytest.raises(ValueError):
        scoring.ScorerConfig(mode="oracle")
    with pytest.raises(ValueError):
        scoring.ScorerConfig(mode="external")  # endpoint required
    with pytest.raises(ValueError):
        scoring.ScorerConfig(fallback=1.5)


# -- external scorer protocol ------------------------------------------------


class StubScorer:
    """Single-threaded scripted scorer speaking SCORE <bytes>\\n<body>."""

    def __init__(self, reply=b"0.9\n", delay=0.0):
        self.reply = reply
        self.delay = delay
        self.requests = []
        self._server = socket.create_server(("127.0.0.1", 0))
        self.endpoint = self._server.getsockname()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self):
        while True:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            with conn:
                try:
                    header = b""
                    while not header.endswith(b"\n"):
                        chunk = conn.recv(1)
                        if not chunk:
                            break
                        header += chunk
                    if not header.startswith(b"SCORE "):
                        continue
                    length = int(header.split()[1])
                    body = b""
                    while len(body) < length:
                        chunk = conn.recv(length - len(body))
                        if not chunk:
                            break
                        body += chunk
                    self.requests.append((header, body))
                    if self.delay:
                        time.sleep(self.delay)
                    conn.sendall(self.reply)
                except OSError:
                    pass

    def close(self):
        self._server.close()


@pytest.fixture
def stub_scorer():
    stub = StubScorer()
    yield stub
    stub.close()


def test_external_score_round_trip(stub_scorer):
    config = scoring.ScorerConfig(mode="external", endpoint=stub_scorer.endpoint)
    result = scoring.Scorer(config).score(b"hello body")
    assert result.value == 0.9
    assert not result.degraded
    header, body = stub_scorer.requests[0]
    assert header == b"SCORE 10\n"
    assert body == b"hello body"


def test_external_score_empty_body(stub_scorer):
    config = scoring.ScorerConfig(mode="external", endpoint=stub_scorer.endpoint)
    assert scoring.Scorer(config).score(b"").value == 0.9
    assert stub_scorer.requests[0] == (b"SCORE 0\n", b"")


def test_external_unreachable_falls_back():
    # grab a port and close it so nothing listens there
    probe = socket.create_server(("127.0.0.1", 0))
    endpoint = probe.getsockname()
    probe.close()
    config = scoring.ScorerConfig(mode="external", endpoint=endpoint, fallback=0.25, timeout=0.5)
    scorer = scoring.Scorer(config)
    result = scorer.score(b"anything")
    assert result.value == 0.25
    assert result.degraded
    assert scorer.degraded_calls == 1


@pytest.mark.parametrize("reply", [b"not-a-number\n", b"1.5\n", b"-0.1\n", b"nan\n"])
def test_external_bad_reply_falls_back(reply):
    stub = StubScorer(reply=reply)
    try:
        config = scoring.ScorerConfig(mode="external", endpoint=stub.endpoint, fallback=0.0)
        result = scoring.Scorer(config).score(b"x")
        assert result.degraded
        assert result.value == 0.0
    finally:
        stub.close()


def test_external_timeout_falls_back():
    stub = StubScorer(delay=1.0)
    try:
        config = scoring.ScorerConfig(
            mode="external", endpoint=stub.endpoint, fallback=0.1, timeout=0.2
        )
        started = time.monotonic()
        result = scoring.Scorer(config).score(b"x")
        assert time.monotonic() - started < 0.9
        assert result.degraded
        assert result.value == 0.1
    finally:
        stub.close()


def test_logistic_symmetry():
    assert scoring.logistic(0.0) == 0.5
    assert math.isclose(scoring.logistic(2.0) + scoring.logistic(-2.0), 1.0)
    assert scoring.logistic(1000.0) == 1.0
    assert scoring.logistic(-1000.0) == 0.0
