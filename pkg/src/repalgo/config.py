"""Scenario files: strict JSON with a version field.

Every section is optional except ``accounts``; omitted fields take the
dataclass defaults.  Unknown keys are rejected and all problems are reported
together in one ConfigError.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .core_types import Account, Behavior, ConfigError, ProtocolParams, ValidatorPolicy
from .netsim import NetworkConfig, ReputationConfig, ScenarioConfig, TrafficConfig
from .reputation import read_reputation_csv

SCHEMA_VERSION = 1

TOP_LEVEL = {"version", "accounts", "params", "network", "reputation", "traffic",
             "epoch_rounds", "rounds", "rng_seed"}
ACCOUNT_KEYS = {"id", "stake", "behavior", "illicit_rate", "validator_policy"}
POLICY_KEYS = {f.name for f in fields(ValidatorPolicy)}
PARAM_KEYS = {f.name for f in fields(ProtocolParams)}
NETWORK_KEYS = {f.name for f in fields(NetworkConfig)}
TRAFFIC_KEYS = {f.name for f in fields(TrafficConfig)}
REPUTATION_KEYS = {"mode", "scores", "scores_file", "overrides", "p_th_overrides", "window_rounds"}

_NUMBER = (int, float)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, _NUMBER) and not isinstance(v, bool)


class _Errors(list):
    def unknown(self, where: str, obj: dict, allowed) -> None:
        for key in sorted(set(obj) - set(allowed)):
            self.append(f"{where}: unknown field {key!r}")

    def section(self, where: str, raw) -> dict:
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.append(f"{where}: expected an object, got {type(raw).__name__}")
            return {}
        return raw


def _typed(errors: _Errors, where: str, obj: dict, spec: Dict[str, str]) -> dict:
    """Copy the keys present in ``obj`` after checking their JSON types."""
    out = {}
    for key, kind in spec.items():
        if key not in obj:
            continue
        value = obj[key]
        ok = {
            "int": _is_int(value),
            "number": _is_number(value),
            "bool": isinstance(value, bool),
            "str": isinstance(value, str),
        }[kind]
        if not ok:
            errors.append(f"{where}.{key}: expected {kind}, got {json.dumps(value)}")
            continue
        out[key] = value
    return out


def _score_table(errors: _Errors, where: str, raw) -> Dict[int, float]:
    raw = errors.section(where, raw)
    out = {}
    for key, value in raw.items():
        try:
            account = int(key)
        except (TypeError, ValueError):
            errors.append(f"{where}: key {key!r} is not an account id")
            continue
        if not _is_number(value):
            errors.append(f"{where}[{key}]: expected number, got {json.dumps(value)}")
            continue
        out[account] = float(value)
    return out


def _accounts(errors: _Errors, raw) -> List[Account]:
    if raw is None:
        errors.append("accounts: field is required")
        return []
    if not isinstance(raw, list):
        errors.append("accounts: expected a list")
        return []
    out = []
    behaviors = {b.value for b in Behavior}
    for n, entry in enumerate(raw):
        where = f"accounts[{n}]"
        if not isinstance(entry, dict):
            errors.append(f"{where}: expected an object")
            continue
        errors.unknown(where, entry, ACCOUNT_KEYS)
        for key in ("id", "stake"):
            if key not in entry:
                errors.append(f"{where}.{key}: field is required")
        vals = _typed(errors, where, entry, {"id": "int", "stake": "int", "behavior": "str", "illicit_rate": "number"})
        if "behavior" in vals and vals["behavior"] not in behaviors:
            errors.append(f"{where}.behavior: must be one of {sorted(behaviors)}, got {vals['behavior']!r}")
            del vals["behavior"]
        policy = None
        if entry.get("validator_policy") is not None:
            praw = errors.section(f"{where}.validator_policy", entry["validator_policy"])
            errors.unknown(f"{where}.validator_policy", praw, POLICY_KEYS)
            pvals = _typed(errors, f"{where}.validator_policy", praw,
                           {"p_empty": "number", "p_support_malicious": "number"})
            try:
                policy = ValidatorPolicy(**pvals)
            except ConfigError as exc:
                errors.extend(f"{where}.validator_policy: {e}" for e in exc.errors)
        if "id" not in vals or "stake" not in vals:
            continue
        try:
            out.append(Account(vals["id"], vals["stake"], Behavior(vals.get("behavior", "honest")),
                               float(vals.get("illicit_rate", 0.0)), policy))
        except ConfigError as exc:
            errors.extend(f"{where}: {e}" for e in exc.errors)
    return out


def _params(errors: _Errors, raw) -> ProtocolParams:
    raw = errors.section("params", raw)
    errors.unknown("params", raw, PARAM_KEYS)
    spec = {"hashlen": "int", "tau_proposer": "number", "committee_votes": "number",
            "finality_fraction": "number", "max_steps": "int", "p_th": "number", "epsilon_rep": "number",
            "compensation_enabled": "bool", "reputation_enabled": "bool", "honest_alternative": "bool"}
    vals = _typed(errors, "params", raw, spec)
    try:
        return ProtocolParams(**vals)
    except ConfigError as exc:
        errors.extend(f"params.{e}" for e in exc.errors)
        return ProtocolParams()


def _reputation(errors: _Errors, raw, base_dir: Path) -> ReputationConfig:
    raw = errors.section("reputation", raw)
    errors.unknown("reputation", raw, REPUTATION_KEYS)
    vals = _typed(errors, "reputation", raw, {"mode": "str", "window_rounds": "int", "scores_file": "str"})
    scores = {}
    if "scores_file" in vals:
        path = base_dir / vals.pop("scores_file")
        try:
            scores.update(read_reputation_csv(path).scores)
        except OSError as exc:
            errors.append(f"reputation.scores_file: cannot read {path}: {exc.strerror or exc}")
        except (KeyError, ValueError) as exc:
            errors.append(f"reputation.scores_file: malformed score table {path}: {exc}")
    scores.update(_score_table(errors, "reputation.scores", raw.get("scores")))
    overrides = {}
    for node, table in errors.section("reputation.overrides", raw.get("overrides")).items():
        try:
            node_id = int(node)
        except ValueError:
            errors.append(f"reputation.overrides: key {node!r} is not an account id")
            continue
        overrides[node_id] = _score_table(errors, f"reputation.overrides[{node}]", table)
    p_th_overrides = _score_table(errors, "reputation.p_th_overrides", raw.get("p_th_overrides"))
    return ReputationConfig(scores=scores, overrides=overrides, p_th_overrides=p_th_overrides, **vals)


def scenario_from_dict(raw: Any, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from decoded JSON."""
    errors = _Errors()
    base_dir = Path(base_dir or ".")
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected an object"])
    errors.unknown("top level", raw, TOP_LEVEL)
    if "version" not in raw:
        errors.append("version: field is required")
    elif raw["version"] != SCHEMA_VERSION:
        errors.append(f"version: unsupported schema version {raw['version']!r} (expected {SCHEMA_VERSION})")

    accounts = _accounts(errors, raw.get("accounts"))
    params = _params(errors, raw.get("params"))

    net_raw = errors.section("network", raw.get("network"))
    errors.unknown("network", net_raw, NETWORK_KEYS)
    network = NetworkConfig(**_typed(errors, "network", net_raw,
                                     {"delay_min": "int", "delay_max": "int", "drop_rate": "number",
                                      "step_ticks": "int"}))
    tr_raw = errors.section("traffic", raw.get("traffic"))
    errors.unknown("traffic", tr_raw, TRAFFIC_KEYS)
    traffic = TrafficConfig(**_typed(errors, "traffic", tr_raw, {k: "int" for k in TRAFFIC_KEYS}))
    reputation = _reputation(errors, raw.get("reputation"), base_dir)
    top = _typed(errors, "top level", raw, {"epoch_rounds": "int", "rounds": "int", "rng_seed": "int"})

    config = ScenarioConfig(accounts=tuple(accounts), params=params, network=network,
                            reputation=reputation, traffic=traffic, **top)
    account_errors = any(e.startswith("accounts") for e in errors)
    for err in config.violations():
        # with broken account entries the aggregate account checks only repeat the noise
        if not (account_errors and err.startswith("accounts:")):
            errors.append(err)
    if errors:
        raise ConfigError(errors)
    return config


def parse_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario file.

    A missing or unreadable file raises OSError; bad syntax and constraint
    violations raise ConfigError.
    """
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    return scenario_from_dict(raw, path.parent)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Inverse of scenario_from_dict, for writing example files."""
    def policy(p):
        return None if p is None else {"p_empty": p.p_empty, "p_support_malicious": p.p_support_malicious}

    params = {f.name: getattr(config.params, f.name) for f in fields(ProtocolParams)}
    params["finality_fraction"] = float(params["finality_fraction"])
    rep = config.reputation
    return {
        "version": SCHEMA_VERSION,
        "rounds": config.rounds,
        "rng_seed": config.rng_seed,
        "epoch_rounds": config.epoch_rounds,
        "accounts": [
            {"id": a.id, "stake": a.stake, "behavior": a.behavior.value, "illicit_rate": a.illicit_rate,
             "validator_policy": policy(a.validator_policy)}
            for a in config.accounts
        ],
        "params": params,
        "network": {f.name: getattr(config.network, f.name) for f in fields(NetworkConfig)},
        "traffic": {f.name: getattr(config.traffic, f.name) for f in fields(TrafficConfig)},
        "reputation": {
            "mode": rep.mode,
            "window_rounds": rep.window_rounds,
            "scores": {str(k): v for k, v in rep.scores.items()},
            "overrides": {str(n): {str(k): v for k, v in t.items()} for n, t in rep.overrides.items()},
            "p_th_overrides": {str(k): v for k, v in rep.p_th_overrides.items()},
        },
    }
