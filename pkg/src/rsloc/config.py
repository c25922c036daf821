"""Experiment configuration: a flat ``key = value`` text format.

Grammar (one entry per line)::

    line    := blank | comment | entry
    comment := "#" anything
    entry   := key "=" value [comment]
    key     := name ("." name)*          name := [A-Za-z_][A-Za-z0-9_]*
    value   := scalar ("," scalar)*
    scalar  := int | float | "true" | "false" | "inf" | bare-word

A value with a comma is a list. Keys may appear only once. Unknown keys
are rejected when the text is turned into an ExperimentConfig, with the
line number of the offending entry.

Example::

    measure.kind = flat_strong
    measure.n = 3
    measure.k = 1
    measure.eta = 4
    run.replicas = 200        # ensemble size
    mala.count = 2000
"""

from dataclasses import asdict, dataclass, field, fields
import re
from typing import Optional

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_INT = re.compile(r"^[+-]?\d+$")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _scalar(text, line):
    s = text.strip()
    if not s:
        raise ConfigError("empty value", line)
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if _INT.match(s):
        return int(s)
    try:
        return float(s)
    except ValueError:
        pass
    if re.search(r"[\s=#]", s):
        raise ConfigError(f"invalid value {s!r}", line)
    return s


def parse(text):
    """Parse config text into ``{key: value}`` and ``{key: line number}``."""
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", no)
        key, val = (part.strip() for part in body.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no)
        parts = val.split(",")
        values[key] = [_scalar(p, no) for p in parts] if len(parts) > 1 else _scalar(val, no)
        lines[key] = no
    return values, lines


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        if len(v) == 1:
            raise ConfigError("single-element lists cannot be written")
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(values):
    """Serialise ``{key: value}`` with sorted keys; ``parse(dumps(d))[0] == d``."""
    return "".join(f"{k} = {_format(values[k])}\n" for k in sorted(values) if values[k] is not None)


# ---------------------------------------------------------------------------
# typed experiment config


@dataclass
class MeasureSpec:
    kind: str = "gaussian"
    n: int = 2
    k: int = 1
    cov: object = "identity"  # "identity", a diagonal list, or a full row-major list
    eta: float = 1.0
    w: str = "quadratic"
    quad: float = 0.0
    scale: object = None
    base: str = "gaussian"  # for kind = truncated
    radius: Optional[float] = None
    split: str = "axes"
    split_seed: int = 0


@dataclass
class RunSpec:
    horizon: float = 1.0
    dt: Optional[float] = None
    replicas: int = 200
    seed: int = 0
    moments: str = "mala"
    whiten: bool = False


@dataclass
class MalaSpec:
    count: int = 2000
    step: float = 0.5
    warmup: Optional[int] = None
    thinning: int = 1
    reweight: bool = False


@dataclass
class SetsSpec:
    axes: object = 0  # axis index or list of indices for median half-spaces


@dataclass
class RadiiSpec:
    max: float = 4.0
    count: int = 41


@dataclass
class ConstantsSpec:
    psi_k: float = 1.0
    c1_reference: float = 0.1
    c_max: float = 20.0
    prefactor: float = 1.0
    exit_threshold: float = 10.0


@dataclass
class CheckSpec:
    samples: int = 20000
    directions: int = 64
    hessian_points: int = 1000
    hypothesis_points: int = 200
    freedman_paths: int = 10000
    freedman_dt: float = 0.01
    lambdas: object = field(default_factory=lambda: [0.5, 1.0, 2.0])


@dataclass
class ExperimentConfig:
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    run: RunSpec = field(default_factory=RunSpec)
    mala: MalaSpec = field(default_factory=MalaSpec)
    sets: SetsSpec = field(default_factory=SetsSpec)
    radii: RadiiSpec = field(default_factory=RadiiSpec)
    constants: ConstantsSpec = field(default_factory=ConstantsSpec)
    checks: CheckSpec = field(default_factory=CheckSpec)
    output: str = "out"

    def validate(self):
        if self.run.replicas < 1:
            raise ConfigError("run.replicas must be >= 1")
        dt = self.run.dt
        if dt is not None and dt <= 0:
            raise ConfigError("run.dt must be positive")
        if self.run.horizon <= 0 or (dt is not None and self.run.horizon < dt):
            raise ConfigError("run.horizon must be positive and at least run.dt")
        if not 1 <= self.measure.k <= self.measure.n:
            raise ConfigError("need 1 <= measure.k <= measure.n")
        if self.run.moments not in ("mala", "exact"):
            raise ConfigError("run.moments must be 'mala' or 'exact'")
        if self.mala.count < 2:
            raise ConfigError("mala.count must be >= 2")
        return self

    def flat(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                for key, val in asdict(v).items():
                    out[f"{f.name}.{key}"] = val
            else:
                out[f.name] = v
        return out

    def dumps(self):
        return dumps(self.flat())


def from_mapping(values, lines=None):
    """Typed config from parsed values; unknown keys are errors."""
    lines = lines or {}
    cfg = ExperimentConfig()
    sections = {f.name for f in fields(cfg)}
    for key, val in values.items():
        head, _, rest = key.partition(".")
        if head not in sections:
            raise ConfigError(f"unknown key {key!r}", lines.get(key))
        target = getattr(cfg, head)
        if not hasattr(target, "__dataclass_fields__"):
            if rest:
                raise ConfigError(f"unknown key {key!r}", lines.get(key))
            setattr(cfg, head, val)
            continue
        if rest not in target.__dataclass_fields__:
            raise ConfigError(f"unknown key {key!r}", lines.get(key))
        default = getattr(type(target)(), rest)
        if isinstance(default, bool) and not isinstance(val, bool):
            raise ConfigError(f"{key} expects true or false", lines.get(key))
        if isinstance(default, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        setattr(target, rest, val)
    try:
        return cfg.validate()
    except ConfigError as e:
        first = e.args[0].split()[0]
        raise ConfigError(e.args[0], lines.get(first)) from None


def loads(text):
    return from_mapping(*parse(text))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
