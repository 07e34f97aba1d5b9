"""Scenario configuration (YAML) with field-path validation errors."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import ConfigError

ROLES = ("equivocator", "malicious-deleter", "stale-file-replayer", "proof-forger")
TRADE_KINDS = ("fixed", "random", "cycle")


@dataclass
class NodeSpec:
    name: str
    seed: bytes


@dataclass
class EdgeSpec:
    a: str
    b: str
    r_a: Optional[int] = None
    r_b: Optional[int] = None
    via: Optional[str] = None


@dataclass
class TradeSpec:
    kind: str
    payer: Optional[str] = None
    receiver: Optional[str] = None
    nodes: tuple = ()
    price: tuple = (1, 1)
    start: int = 1
    every: int = 1
    count: int = 1


@dataclass
class NetworkSpec:
    delay: tuple = (1, 1)
    drop: float = 0.0
    partitions: list = field(default_factory=list)  # (start, end, [set of names, ...])


@dataclass
class AdversarySpec:
    role: str
    node: str
    at: int
    targets: tuple = ()
    rollback_from: int = 0


@dataclass
class ScenarioConfig:
    seed: int = 0
    horizon: int = 1000
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    random_graph: Optional[dict] = None
    reserves: int = 10**6
    v: int = 50
    arbitrage: bool = True
    arbitrage_rounds: int = 1
    sync_interval: int = 100
    unreachable_ticks: int = 100
    mint_cap: Optional[int] = None
    network: NetworkSpec = field(default_factory=NetworkSpec)
    trades: list = field(default_factory=list)
    adversaries: list = field(default_factory=list)
    dht: bool = True
    dht_ttl: int = 100_000
    sample_interval: int = 1000
    drain: bool = True

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("", "top level must be a mapping")
        known = {
            "seed", "horizon", "nodes", "topology", "reserves", "params", "arbitrage",
            "network", "trades", "adversaries", "dht", "metrics",
        }
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls()
        cfg.seed = _int(data, "seed", 0)
        cfg.horizon = _int(data, "horizon", 1000, low=0)
        cfg.reserves = _int(data, "reserves", 10**6, low=1)

        params = _map(data, "params")
        cfg.v = _int(params, "v", 50, low=1, path="params.v")
        cfg.arbitrage_rounds = _int(params, "arbitrage_rounds", 1, low=0, path="params.arbitrage_rounds")
        cfg.sync_interval = _int(params, "sync_interval", 100, low=1, path="params.sync_interval")
        cfg.unreachable_ticks = _int(params, "unreachable_ticks", 100, low=0, path="params.unreachable_ticks")
        if params.get("mint_cap") is not None:
            cfg.mint_cap = _int(params, "mint_cap", 0, low=1, path="params.mint_cap")

        arb = data.get("arbitrage", True)
        if isinstance(arb, dict):
            arb = arb.get("enabled", True)
        if not isinstance(arb, bool):
            raise ConfigError("arbitrage", "must be a boolean or {enabled: bool}")
        cfg.arbitrage = arb

        cfg.nodes = _nodes(data.get("nodes"), cfg.seed)
        names = {n.name for n in cfg.nodes}
        _topology(cfg, _map(data, "topology"), names)

        net = _map(data, "network")
        delay = net.get("delay", [1, 1])
        if isinstance(delay, int):
            delay = [delay, delay]
        if not (isinstance(delay, list) and len(delay) == 2 and all(isinstance(x, int) for x in delay)):
            raise ConfigError("network.delay", "must be an int or [min, max]")
        if delay[0] < 1 or delay[1] < delay[0]:
            raise ConfigError("network.delay", "delays must satisfy 1 <= min <= max")
        drop = net.get("drop", 0.0)
        if not isinstance(drop, (int, float)) or not 0.0 <= drop <= 1.0:
            raise ConfigError("network.drop", "drop probability must be in [0, 1]")
        parts = []
        for i, p in enumerate(net.get("partitions", []) or []):
            path = f"network.partitions[{i}]"
            if not isinstance(p, dict):
                raise ConfigError(path, "must be a mapping")
            groups = p.get("groups")
            if not isinstance(groups, list) or len(groups) < 2:
                raise ConfigError(path + ".groups", "need at least two groups")
            for g in groups:
                for n in g:
                    if n not in names:
                        raise ConfigError(path + ".groups", f"unknown node {n!r}")
            parts.append((_int(p, "start", 0, path=path + ".start"), _int(p, "end", 0, path=path + ".end"), [set(g) for g in groups]))
        cfg.network = NetworkSpec(tuple(delay), float(drop), parts)

        cfg.trades = [_trade(t, i, names) for i, t in enumerate(data.get("trades", []) or [])]
        cfg.adversaries = [_adversary(a, i, names) for i, a in enumerate(data.get("adversaries", []) or [])]

        dht = data.get("dht", True)
        if isinstance(dht, dict):
            cfg.dht = bool(dht.get("enabled", True))
            cfg.dht_ttl = _int(dht, "ttl", 100_000, low=1, path="dht.ttl")
        else:
            cfg.dht = bool(dht)
        metrics = _map(data, "metrics")
        cfg.sample_interval = _int(metrics, "sample_interval", 1000, low=1, path="metrics.sample_interval")
        return cfg


def _map(data: dict, key: str) -> dict:
    v = data.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(key, "must be a mapping")
    return v


def _int(data: dict, key: str, default: int, low: Optional[int] = None, path: Optional[str] = None) -> int:
    v = data.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path or key, "must be an integer")
    if low is not None and v < low:
        raise ConfigError(path or key, f"must be >= {low}")
    return v


def derive_seed(seed: int, name: str) -> bytes:
    return hashlib.sha256(f"hypersyn-node:{seed}:{name}".encode()).digest()


def _nodes(raw, seed: int) -> list[NodeSpec]:
    if raw is None:
        raw = 0
    if isinstance(raw, int) and not isinstance(raw, bool):
        width = max(3, len(str(max(raw - 1, 0))))
        raw = [f"n{i:0{width}d}" for i in range(raw)]
    if not isinstance(raw, list):
        raise ConfigError("nodes", "must be a count or a list")
    out, names, seeds = [], set(), set()
    for i, item in enumerate(raw):
        path = f"nodes[{i}]"
        if isinstance(item, str):
            name, s = item, derive_seed(seed, item)
        elif isinstance(item, dict) and isinstance(item.get("name"), str):
            name = item["name"]
            if "seed" in item:
                try:
                    s = bytes.fromhex(str(item["seed"]))
                except ValueError as exc:
                    raise ConfigError(path + ".seed", "seed must be hex") from exc
                if len(s) != 32:
                    raise ConfigError(path + ".seed", "seed must be 32 bytes")
            else:
                s = derive_seed(seed, name)
        else:
            raise ConfigError(path, "must be a name or {name, seed}")
        if name in names:
            raise ConfigError(path, f"duplicate node name {name!r}")
        if s in seeds:
            raise ConfigError(path + ".seed", "duplicate node seed")
        names.add(name)
        seeds.add(s)
        out.append(NodeSpec(name, s))
    return out


def _topology(cfg: ScenarioConfig, topo: dict, names: set) -> None:
    kind = topo.get("kind", "explicit")
    if kind == "explicit":
        for i, e in enumerate(topo.get("edges", []) or []):
            path = f"topology.edges[{i}]"
            if isinstance(e, list):
                e = dict(zip(("a", "b", "r_a", "r_b"), e))
            if not isinstance(e, dict):
                raise ConfigError(path, "must be a list or mapping")
            for side in ("a", "b"):
                if e.get(side) not in names:
                    raise ConfigError(f"{path}.{side}", f"unknown node {e.get(side)!r}")
            if e["a"] == e["b"]:
                raise ConfigError(path, "self edge")
            via = e.get("via")
            if via is not None and via not in names:
                raise ConfigError(path + ".via", f"unknown node {via!r}")
            r_a, r_b = e.get("r_a"), e.get("r_b")
            for key, val in (("r_a", r_a), ("r_b", r_b)):
                if val is not None and (not isinstance(val, int) or val <= 0):
                    raise ConfigError(f"{path}.{key}", "reserve must be a positive integer")
            cfg.edges.append(EdgeSpec(e["a"], e["b"], r_a, r_b, via))
    elif kind == "random_regular":
        degree = _int(topo, "degree", 6, low=1, path="topology.degree")
        n = len(names)
        if degree >= n or (degree * n) % 2:
            raise ConfigError("topology.degree", f"no {degree}-regular graph on {n} nodes")
        cfg.random_graph = {"degree": degree, "seed": _int(topo, "seed", cfg.seed, path="topology.seed")}
    else:
        raise ConfigError("topology.kind", f"unknown topology {kind!r}")


def _trade(t: Any, i: int, names: set) -> TradeSpec:
    path = f"trades[{i}]"
    if not isinstance(t, dict):
        raise ConfigError(path, "must be a mapping")
    kind = t.get("kind", "fixed")
    if kind not in TRADE_KINDS:
        raise ConfigError(path + ".kind", f"must be one of {TRADE_KINDS}")
    price = t.get("price", 1)
    if isinstance(price, int):
        price = [price, price]
    if not (isinstance(price, list) and len(price) == 2 and all(isinstance(x, int) and x >= 0 for x in price) and price[0] <= price[1]):
        raise ConfigError(path + ".price", "must be a non-negative int or [min, max]")
    spec = TradeSpec(
        kind,
        price=tuple(price),
        start=_int(t, "start", 1, low=0, path=path + ".start"),
        every=_int(t, "every", 1, low=1, path=path + ".every"),
        count=_int(t, "count", 1, low=0, path=path + ".count"),
    )
    if kind == "fixed":
        for side in ("payer", "receiver"):
            if t.get(side) not in names:
                raise ConfigError(f"{path}.{side}", f"unknown node {t.get(side)!r}")
        spec.payer, spec.receiver = t["payer"], t["receiver"]
    elif kind == "cycle":
        nodes = t.get("nodes")
        if not isinstance(nodes, list) or len(nodes) < 2 or any(n not in names for n in nodes):
            raise ConfigError(path + ".nodes", "need a list of at least two known nodes")
        spec.nodes = tuple(nodes)
    return spec


def _adversary(a: Any, i: int, names: set) -> AdversarySpec:
    path = f"adversaries[{i}]"
    if not isinstance(a, dict):
        raise ConfigError(path, "must be a mapping")
    if a.get("role") not in ROLES:
        raise ConfigError(path + ".role", f"must be one of {ROLES}")
    if a.get("node") not in names:
        raise ConfigError(path + ".node", f"unknown node {a.get('node')!r}")
    targets = a.get("targets", []) or []
    for t in targets:
        if t not in names:
            raise ConfigError(path + ".targets", f"unknown node {t!r}")
    return AdversarySpec(
        a["role"], a["node"], _int(a, "at", 1, low=0, path=path + ".at"), tuple(targets),
        _int(a, "rollback_from", 0, low=0, path=path + ".rollback_from"),
    )
