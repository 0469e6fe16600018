"""Pipeline configuration with layered sources and a content hash.

Precedence, lowest to highest: built-in defaults, JSON config file,
CXRPREP_* environment variables, explicit CLI overrides.  The config
hash covers every field that can change output bytes -- worker count
and the failure threshold are excluded on purpose, so runs that differ
only in parallelism or abort policy stamp identical headers.
"""
import dataclasses
import hashlib
import json
import os

from .errors import SchemaMismatchError
from .manifest import DEFAULT_GROUPS, DEFAULT_LABELS

ENV_PREFIX = "CXRPREP_"

# fields that never influence output bytes
NON_SEMANTIC_FIELDS = ("workers", "failure_threshold")


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    # contrast equalization
    grid_rows: int = 8
    grid_cols: int = 8
    clip_limit: float = 2.0
    bins: int = 256
    # geometry
    target_size: int = 224
    margin: int = 60
    mask_native_resolution: int = 1024
    # manifest policy
    rca_threshold: float = 0.7
    positives_per_cell: int = 35
    val_fraction: float = 0.05
    seed: int = 0
    labels: tuple = DEFAULT_LABELS
    groups: tuple = DEFAULT_GROUPS
    # preprocessing variants
    clahe_after_downscale: bool = False
    crop_raw_mask: bool = False
    letterbox: bool = False
    export_8bit: bool = False
    # execution (non-semantic)
    workers: int = 1
    failure_threshold: float = 0.01

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ValueError("failure_threshold must be in [0, 1]")
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["labels"] = list(self.labels)
        d["groups"] = list(self.groups)
        return d

    def canonical_json(self):
        d = {k: v for k, v in self.to_dict().items()
             if k not in NON_SEMANTIC_FIELDS}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
_TUPLE_FIELDS = ("labels", "groups")
_BOOL_FIELDS = tuple(f.name for f in dataclasses.fields(PipelineConfig)
                     if f.type == "bool" or isinstance(f.default, bool))
_INT_FIELDS = tuple(f.name for f in dataclasses.fields(PipelineConfig)
                    if isinstance(f.default, bool) is False and isinstance(f.default, int))
_FLOAT_FIELDS = tuple(f.name for f in dataclasses.fields(PipelineConfig)
                      if isinstance(f.default, float))

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _coerce(name, value):
    """Coerce a string (env var) or JSON value to the field's type."""
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            sep = "|" if "|" in value else ","
            parts = tuple(p.strip() for p in value.split(sep) if p.strip())
        elif isinstance(value, (list, tuple)):
            parts = tuple(str(p) for p in value)
        else:
            raise SchemaMismatchError(f"config field {name!r}: expected a list")
        if not parts:
            raise SchemaMismatchError(f"config field {name!r}: empty list")
        return parts
    if name in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in _TRUE:
            return True
        if s in _FALSE:
            return False
        raise SchemaMismatchError(f"config field {name!r}: {value!r} is not a boolean")
    try:
        if name in _FLOAT_FIELDS:
            return float(value)
        if name in _INT_FIELDS:
            if isinstance(value, float) and value != int(value):
                raise ValueError(value)
            return int(value)
    except (TypeError, ValueError):
        raise SchemaMismatchError(f"config field {name!r}: {value!r} has the wrong type")
    return value


def load_config(file_path=None, env=None, overrides=None):
    """Merge the config layers and return a PipelineConfig."""
    values = {}

    if file_path is not None:
        with open(file_path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaMismatchError(f"{file_path}: invalid JSON ({exc})")
        if not isinstance(data, dict):
            raise SchemaMismatchError(f"{file_path}: top level must be an object")
        unknown = sorted(set(data) - set(_FIELD_TYPES))
        if unknown:
            raise SchemaMismatchError(f"{file_path}: unknown config keys {unknown}")
        for k, v in data.items():
            values[k] = _coerce(k, v)

    env = os.environ if env is None else env
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = _coerce(name, env[key])

    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELD_TYPES:
            raise SchemaMismatchError(f"unknown config override {k!r}")
        values[k] = _coerce(k, v)

    try:
        return PipelineConfig(**values)
    except ValueError as exc:
        raise SchemaMismatchError(str(exc))
