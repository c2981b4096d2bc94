"""Run-identity hashing: every artifact filename starts with a config hash."""

import hashlib
import json


def canonical_json(obj) -> str:
    """Serialize a config mapping deterministically (sorted keys, no spaces)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_coerce)


def config_hash(obj) -> str:
    """First 8 hex chars of sha256 over the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:8]


def _coerce(value):
    # dataclasses, paths, numpy scalars and tuples all appear in run configs
    if hasattr(value, "__dataclass_fields__"):
        return {k: getattr(value, k) for k in value.__dataclass_fields__}
    if hasattr(value, "item"):
        return value.item()
    if hasattr(value, "__fspath__"):
        return str(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    return str(value)
