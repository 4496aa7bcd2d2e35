"""Application configuration: YAML in, validated dataclasses out.

The file is organised into sections (server, policy, scorer, legacy,
client).  Unknown sections or keys are rejected outright; silently
ignoring a typo like ``resist_treshold`` would change mail handling
without anyone noticing.  ``dump_effective`` renders the fully merged
configuration (defaults included) back to YAML.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .policy import PolicyConfig, SinBinConfig
from .scoring import ScorerConfig
from .smtp import ClientConfig, LegacyPolicy, ServerConfig


class ConfigError(Exception):
    """Bad configuration file: unknown key, wrong type, invalid value."""


DEFAULT_LISTEN = ("127.0.0.1", 2525)
DEFAULT_SINK_DIR = "mailbox"
DEFAULT_STORE_CAPACITY = 10_000


@dataclass
class AppConfig:
    listen: tuple[str, int] = DEFAULT_LISTEN
    sink_dir: str = DEFAULT_SINK_DIR
    store_capacity: int = DEFAULT_STORE_CAPACITY
    server: ServerConfig = field(default_factory=ServerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    legacy: LegacyPolicy = field(default_factory=LegacyPolicy)
    client: ClientConfig = field(default_factory=ClientConfig)


def parse_endpoint(text: str) -> tuple[str, int]:
    """Split ``host:port``; IPv6 literals use ``[::1]:port``."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    if host.startswith("[") and host.endswith("]"):
        host = host[1:-1]
    try:
        port_num = int(port)
    except ValueError:
        raise ValueError(f"bad port in endpoint {text!r}") from None
    if not 0 <= port_num <= 65535:
        raise ValueError(f"port out of range in endpoint {text!r}")
    return host, port_num


def format_endpoint(endpoint: tuple[str, int]) -> str:
    host, port = endpoint
    if ":" in host:
        host = f"[{host}]"
    return f"{host}:{port}"


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        names = ", ".join(sorted(str(k) for k in unknown))
        raise ConfigError(f"unknown key(s) in {where}: {names}")


def _build_server(data: dict) -> tuple[ServerConfig, dict]:
    keys = (
        "listen", "sink_dir", "store_capacity", "hostname", "max_message_bytes",
        "advertise_auth", "advertise_starttls", "pow_algorithms", "puzzle_ttl",
    )
    _check_keys(data, keys, "server")
    extras = {}
    if "listen" in data:
        extras["listen"] = parse_endpoint(str(data["listen"]))
    if "sink_dir" in data:
        extras["sink_dir"] = str(data["sink_dir"])
    if "store_capacity" in data:
        extras["store_capacity"] = int(data["store_capacity"])
        if extras["store_capacity"] < 1:
            raise ConfigError("server.store_capacity must be at least 1")
    kwargs = {}
    if "hostname" in data:
        kwargs["hostname"] = str(data["hostname"])
    if "max_message_bytes" in data:
        kwargs["max_message_bytes"] = int(data["max_message_bytes"])
    if "advertise_auth" in data:
        kwargs["advertise_auth"] = bool(data["advertise_auth"])
    if "advertise_starttls" in data:
        kwargs["advertise_starttls"] = bool(data["advertise_starttls"])
    if "pow_algorithms" in data:
        algs = data["pow_algorithms"]
        if not isinstance(algs, list):
            raise ConfigError("server.pow_algorithms must be a list of integers")
        kwargs["pow_algorithms"] = tuple(int(a) for a in algs)
    if "puzzle_ttl" in data:
        kwargs["puzzle_ttl"] = float(data["puzzle_ttl"])
    return ServerConfig(**kwargs), extras


def _build_policy(data: dict) -> PolicyConfig:
    keys = (
        "resist_threshold", "mode", "base_difficulty", "graduated_buckets",
        "jitter_bits", "whitelist", "sinbin",
    )
    _check_keys(data, keys, "policy")
    kwargs = {}
    for name in ("resist_threshold",):
        if name in data:
            kwargs[name] = float(data[name])
    if "mode" in data:
        kwargs["mode"] = str(data["mode"])
    for name in ("base_difficulty", "jitter_bits"):
        if name in data:
            kwargs[name] = int(data[name])
    if "graduated_buckets" in data:
        buckets = data["graduated_buckets"]
        if not isinstance(buckets, list):
            raise ConfigError("policy.graduated_buckets must be a list of [bound, difficulty] pairs")
        parsed = []
        for entry in buckets:
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise ConfigError("policy.graduated_buckets entries must be [bound, difficulty] pairs")
            parsed.append((float(entry[0]), int(entry[1])))
        kwargs["graduated_buckets"] = parsed
    if "whitelist" in data:
        entries = data["whitelist"]
        if not isinstance(entries, list):
            raise ConfigError("policy.whitelist must be a list of patterns")
        kwargs["whitelist"] = frozenset(str(e) for e in entries)
    if "sinbin" in data:
        sb = _require_mapping(data["sinbin"], "policy.sinbin")
        _check_keys(sb, ("max_refusals", "window", "block_duration"), "policy.sinbin")
        sb_kwargs = {}
        if "max_refusals" in sb:
            sb_kwargs["max_refusals"] = int(sb["max_refusals"])
        if "window" in sb:
            sb_kwargs["window"] = float(sb["window"])
        if "block_duration" in sb:
            sb_kwargs["block_duration"] = float(sb["block_duration"])
        kwargs["sinbin"] = SinBinConfig(**sb_kwargs)
    return PolicyConfig(**kwargs)


def _build_scorer(data: dict) -> ScorerConfig:
    keys = ("mode", "token_weights", "endpoint", "timeout", "fallback", "max_body_bytes")
    _check_keys(data, keys, "scorer")
    kwargs = {}
    if "mode" in data:
        kwargs["mode"] = str(data["mode"])
    if "token_weights" in data:
        weights = _require_mapping(data["token_weights"], "scorer.token_weights")
        kwargs["token_weights"] = {str(k): float(v) for k, v in weights.items()}
    if "endpoint" in data and data["endpoint"] is not None:
        kwargs["endpoint"] = parse_endpoint(str(data["endpoint"]))
    if "timeout" in data:
        kwargs["timeout"] = float(data["timeout"])
    if "fallback" in data:
        kwargs["fallback"] = float(data["fallback"])
    if "max_body_bytes" in data:
        kwargs["max_body_bytes"] = int(data["max_body_bytes"])
    return ScorerConfig(**kwargs)


def _build_legacy(data: dict) -> LegacyPolicy:
    keys = ("pre_accept_delay", "max_connections_per_host", "overload_mode")
    _check_keys(data, keys, "legacy")
    kwargs = {}
    if "pre_accept_delay" in data:
        kwargs["pre_accept_delay"] = float(data["pre_accept_delay"])
    if "max_connections_per_host" in data:
        kwargs["max_connections_per_host"] = int(data["max_connections_per_host"])
    if "overload_mode" in data:
        kwargs["overload_mode"] = str(data["overload_mode"])
    return LegacyPolicy(**kwargs)


def _build_client(data: dict) -> ClientConfig:
    keys = ("helo_name", "supported_algorithms", "work_budget_seconds", "hash_rate", "max_reissues")
    _check_keys(data, keys, "client")
    kwargs = {}
    if "helo_name" in data:
        kwargs["helo_name"] = str(data["helo_name"])
    if "supported_algorithms" in data:
        algs = data["supported_algorithms"]
        if not isinstance(algs, list):
            raise ConfigError("client.supported_algorithms must be a list of integers")
        kwargs["supported_algorithms"] = tuple(int(a) for a in algs)
    if "work_budget_seconds" in data:
        kwargs["work_budget_seconds"] = float(data["work_budget_seconds"])
    if "hash_rate" in data and data["hash_rate"] is not None:
        kwargs["hash_rate"] = float(data["hash_rate"])
    if "max_reissues" in data:
        kwargs["max_reissues"] = int(data["max_reissues"])
    return ClientConfig(**kwargs)


_SECTIONS = ("server", "policy", "scorer", "legacy", "client")


def build_app_config(data: dict) -> AppConfig:
    """Assemble an AppConfig from a parsed YAML mapping."""
    data = _require_mapping(data, "configuration")
    _check_keys(data, _SECTIONS, "configuration")
    try:
        server, extras = _build_server(_require_mapping(data.get("server"), "server"))
        app = AppConfig(
            server=server,
            policy=_build_policy(_require_mapping(data.get("policy"), "policy")),
            scorer=_build_scorer(_require_mapping(data.get("scorer"), "scorer")),
            legacy=_build_legacy(_require_mapping(data.get("legacy"), "legacy")),
            client=_build_client(_require_mapping(data.get("client"), "client")),
            **extras,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return app


def load_config(path: str | None) -> AppConfig:
    """Load YAML from ``path``; None means all defaults."""
    if path is None:
        return AppConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad YAML in {path}: {exc}") from exc
    return build_app_config(data if data is not None else {})


def effective_dict(app: AppConfig) -> dict:
    """The full merged configuration, defaults included."""
    return {
        "server": {
            "listen": format_endpoint(app.listen),
            "sink_dir": app.sink_dir,
            "store_capacity": app.store_capacity,
            "hostname": app.server.hostname,
            "max_message_bytes": app.server.max_message_bytes,
            "advertise_auth": app.server.advertise_auth,
            "advertise_starttls": app.server.advertise_starttls,
            "pow_algorithms": list(app.server.pow_algorithms),
            "puzzle_ttl": app.server.puzzle_ttl,
        },
        "policy": {
            "resist_threshold": app.policy.resist_threshold,
            "mode": app.policy.mode,
            "base_difficulty": app.policy.base_difficulty,
            "graduated_buckets": [list(b) for b in app.policy.graduated_buckets],
            "jitter_bits": app.policy.jitter_bits,
            "whitelist": sorted(app.policy.whitelist),
            "sinbin": {
                "max_refusals": app.policy.sinbin.max_refusals,
                "window": app.policy.sinbin.window,
                "block_duration": app.policy.sinbin.block_duration,
            },
        },
        "scorer": {
            "mode": app.scorer.mode,
            "token_weights": dict(sorted(app.scorer.token_weights.items())),
            "endpoint": format_endpoint(app.scorer.endpoint) if app.scorer.endpoint else None,
            "timeout": app.scorer.timeout,
            "fallback": app.scorer.fallback,
            "max_body_bytes": app.scorer.max_body_bytes,
        },
        "legacy": {
            "pre_accept_delay": app.legacy.pre_accept_delay,
            "max_connections_per_host": app.legacy.max_connections_per_host,
            "overload_mode": app.legacy.overload_mode,
        },
        "client": {
            "helo_name": app.client.helo_name,
            "supported_algorithms": list(app.client.supported_algorithms),
            "work_budget_seconds": app.client.work_budget_seconds,
            "hash_rate": app.client.hash_rate,
            "max_reissues": app.client.max_reissues,
        },
    }


def dump_effective(app: AppConfig) -> str:
    return yaml.safe_dump(effective_dict(app), default_flow_style=False, sort_keys=True)
