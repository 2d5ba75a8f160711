"""Run configuration: flat JSON file, defaults, validation, hashing.

A config file is a single flat JSON object; every key is optional except
that most subcommands need a problem name from somewhere (file or flag).
A "params" sub-object is accepted as a grouping alias for the same keys.
Unknown keys are rejected so typos fail loudly.  The effective config
(defaults filled, flag overrides applied) is what gets hashed into the
meta block of every output, so identical runs are provably identical.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .errors import ParseError, ValidationError
from .integrator import IntegratorOptions
from .optimizer import OptimizerConfig


@dataclass(frozen=True)
class RunConfig:
    problem: Optional[str] = None
    # problem overrides
    x0: Optional[list] = None
    t0: Optional[float] = None
    tf: Optional[float] = None
    N: int = 10
    u: Optional[object] = None           # scalar, [N] or [N][m]
    u_lo: Optional[object] = None
    u_hi: Optional[object] = None
    steps_per_interval: int = 8
    # integrator tolerances
    newton_tol: float = 1e-12
    event_tol: float = 1e-10
    surface_tol: float = 1e-9
    eps_tan: float = 1e-10
    eps_den: float = 1e-12
    # optimizer parameters
    c0: float = 1.0
    kappa: float = 2.0
    gamma: float = 0.1
    eta: float = 0.5
    epsilon: float = 1e-8
    max_iters: int = 200
    h_scale: float = 1.0
    # oracle / functional selection
    functional: str = "phi"
    eps: float = 1e-6

    def validate(self) -> "RunConfig":
        for key in ("newton_tol", "event_tol", "surface_tol", "eps_tan",
                    "eps_den", "eps", "c0", "epsilon", "h_scale"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
                raise ValidationError(f"{key}: must be > 0, got {v!r}", field=key)
        for key in ("N", "steps_per_interval", "max_iters"):
            v = getattr(self, key)
            if not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
                raise ValidationError(f"{key}: must be an integer >= 1, got {v!r}", field=key)
        for key in ("gamma", "eta"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v < 1):
                raise ValidationError(f"{key}: must be in (0, 1), got {v!r}", field=key)
        if not (isinstance(self.kappa, (int, float)) and self.kappa > 1):
            raise ValidationError(f"kappa: must be > 1, got {self.kappa!r}", field="kappa")
        if not re.fullmatch(r"phi|g1:\d+|g2:\d+", self.functional):
            raise ValidationError(
                f"functional: expected phi, g1:i or g2:j, got {self.functional!r}",
                field="functional")
        if self.problem is not None:
            from .problems import problem_names
            if self.problem not in problem_names():
                raise ValidationError(
                    f"problem: unknown name {self.problem!r}; known: "
                    f"{', '.join(problem_names())}", field="problem")
        return self

    # -- views consumed by the modules ------------------------------------

    def integrator_options(self) -> IntegratorOptions:
        return IntegratorOptions(newton_tol=self.newton_tol,
                                 event_tol=self.event_tol,
                                 surface_tol=self.surface_tol,
                                 eps_tan=self.eps_tan,
                                 eps_den=self.eps_den)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(c0=self.c0, kappa=self.kappa, gamma=self.gamma,
                               eta=self.eta, epsilon=self.epsilon,
                               max_iters=self.max_iters, h_scale=self.h_scale)

    def overrides(self) -> dict:
        out = {"N": self.N}
        for key in ("x0", "t0", "tf", "u", "u_lo", "u_hi"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v
        return out

    def tolerances(self) -> dict:
        return {"newton_tol": self.newton_tol, "event_tol": self.event_tol,
                "surface_tol": self.surface_tol, "eps_tan": self.eps_tan,
                "eps_den": self.eps_den}

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(asdict(self)).encode("utf-8")).hexdigest()

    def meta(self) -> dict:
        return {"tool": "slidoc", "version": __version__,
                "config_hash": self.config_hash(),
                "tolerances": self.tolerances()}


_FIELDS = set(RunConfig.__dataclass_fields__)


def parse_config(path: Optional[str], flag_overrides: Optional[dict] = None) -> RunConfig:
    """Load a config file (or start from defaults), apply flag overrides,
    validate.  Malformed JSON is a ParseError carrying line and column;
    unknown or ill-typed keys are ValidationErrors naming the key."""
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ParseError(f"{path}: {exc.strerror or exc}", path=str(path))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}",
                             path=str(path), line=exc.lineno, column=exc.colno)
        if not isinstance(raw, dict):
            raise ParseError(f"{path}: top level must be a JSON object", path=str(path))
    # "params" is an accepted grouping alias: a nested object holding the
    # same keys, merged into the top level (a key in both is an error)
    params = raw.pop("params", None)
    if params is not None:
        if not isinstance(params, dict):
            raise ValidationError("params: must be an object", field="params")
        for key, val in params.items():
            if key in raw:
                raise ValidationError(f"{key}: given both at top level and in params",
                                      field=key)
            raw[key] = val
    for key in raw:
        if key not in _FIELDS:
            raise ValidationError(f"{key}: unknown config key", field=key)
    cfg = replace(RunConfig(), **raw)
    if flag_overrides:
        cfg = replace(cfg, **{k: v for k, v in flag_overrides.items() if v is not None})
    return cfg.validate()


# ---------------------------------------------------------------------------
# canonical serialization: sorted keys, floats at full precision, no
# whitespace, so equal values give equal bytes (and equal hashes)


def format_float(v: float) -> str:
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite float {v!r} in output")
    return "%.17g" % v


def canonical_json(value) -> str:
    parts: list[str] = []
    _emit(value, parts)
    return "".join(parts)


def _emit(v, parts: list):
    if v is None:
        parts.append("null")
    elif isinstance(v, bool) or isinstance(v, np.bool_):
        parts.append("true" if v else "false")
    elif isinstance(v, (int, np.integer)):
        parts.append(str(int(v)))
    elif isinstance(v, (float, np.floating)):
        parts.append(format_float(float(v)))
    elif isinstance(v, str):
        parts.append(json.dumps(v, ensure_ascii=True))
    elif isinstance(v, dict):
        parts.append("{")
        for i, key in enumerate(sorted(v)):
            if not isinstance(key, str):
                raise ValueError(f"non-string key {key!r} in output")
            if i:
                parts.append(",")
            parts.append(json.dumps(key, ensure_ascii=True))
            parts.append(":")
            _emit(v[key], parts)
        parts.append("}")
    elif isinstance(v, (list, tuple)) or isinstance(v, np.ndarray):
        parts.append("[")
        for i, item in enumerate(v):
            if i:
                parts.append(",")
            _emit(item, parts)
        parts.append("]")
    else:
        raise ValueError(f"cannot serialize {type(v).__name__} to JSON")
