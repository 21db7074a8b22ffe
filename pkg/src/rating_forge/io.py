"""Instance files and deterministic JSON/CSV output.

Floats are written with 17 significant digits so every value round-trips,
keys are sorted, and NaN or infinity become null. Parsing then re-emitting a
canonical file reproduces it byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .foundation import (CostModel, TypeGrid, WelfareWeights, cost_from_dict, grid_from_dict,
                         weights_from_dict)

OBJECTIVES = ("total", "low", "high", "mid", "revenue")
TOP_FIELDS = ("grid", "cost", "weights", "objective", "schedules", "random", "options")
SCHEDULE_FIELDS = ("q", "qbar")
RANDOM_FIELDS = ("family", "theta", "f", "lambda")
OPTION_FIELDS = ("tol", "lattice", "trials", "seed", "stride", "resolution")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _emit(obj, indent: int, level: int, out: list):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append("null" if not math.isfinite(obj) else format(obj, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
        elif all(not isinstance(v, (list, dict)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                if i:
                    out.append(", ")
                _emit(v, indent, level + 1, out)
            out.append("]")
        else:
            out.append("[\n")
            for i, v in enumerate(obj):
                out.append(pad)
                _emit(v, indent, level + 1, out)
                out.append(",\n" if i < len(obj) - 1 else "\n")
            out.append(end + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(obj)
        for i, k in enumerate(keys):
            out.append(pad + json.dumps(k) + ": ")
            _emit(obj[k], indent, level + 1, out)
            out.append(",\n" if i < len(keys) - 1 else "\n")
        out.append(end + "}")
    else:
        raise ValidationError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Canonical JSON text, newline-terminated."""
    out: list = []
    _emit(_plain(obj), indent, 0, out)
    return "".join(out) + "\n"


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _check_fields(block, allowed, where: str):
    if not isinstance(block, dict):
        raise ValidationError(f"field '{where}' must be an object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ValidationError(f"unknown field '{extra[0]}' in '{where}'")


@dataclass(frozen=True, eq=False)
class InstanceFile:
    """Parsed instance: raw blocks plus builders for the library objects."""

    grid: dict
    cost: dict = field(default_factory=lambda: {"family": "quadratic", "params": {}})
    weights: dict | None = None
    objective: str | None = None
    schedules: dict | None = None
    random: dict | None = None
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"grid": self.grid, "cost": self.cost, "options": self.options}
        for name in ("weights", "objective", "schedules", "random"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        return out

    def dumps(self) -> str:
        return dumps(self.to_dict())

    def type_grid(self) -> TypeGrid:
        return grid_from_dict(self.grid)

    def cost_model(self) -> CostModel:
        return cost_from_dict(self.cost)

    def welfare(self, grid: TypeGrid | None = None) -> WelfareWeights:
        return weights_from_dict(self.weights, grid or self.type_grid())

    def pair(self) -> tuple[np.ndarray, np.ndarray]:
        if self.schedules is None:
            raise ValidationError("instance has no 'schedules' block with q and qbar")
        try:
            q = np.asarray(self.schedules["q"], dtype=float)
            qbar = np.asarray(self.schedules["qbar"], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"missing field '{exc.args[0]}' in 'schedules'") from None
        return q, qbar

    def option(self, name: str, default=None):
        return self.options.get(name, default)


def parse_instance(data) -> InstanceFile:
    """Validate a decoded instance; unknown fields anywhere are rejected."""
    _check_fields(data, TOP_FIELDS, "instance")
    if "grid" not in data:
        raise ValidationError("missing field 'grid' in 'instance'")
    grid_block = data["grid"]
    _check_fields(grid_block, ("nodes", "weights", "source", "n"), "grid")
    cost = data.get("cost", {"family": "quadratic", "params": {}})
    _check_fields(cost, ("family", "params"), "cost")
    cost = {"family": cost.get("family", "quadratic"), "params": dict(cost.get("params", {}))}
    weights = data.get("weights")
    if weights is not None:
        _check_fields(weights, ("lambda", "family", "params"), "weights")
    objective = data.get("objective")
    if objective is not None and objective not in OBJECTIVES:
        raise ValidationError(f"field 'objective' must be one of {list(OBJECTIVES)}, got {objective!r}")
    schedules = data.get("schedules")
    if schedules is not None:
        _check_fields(schedules, SCHEDULE_FIELDS, "schedules")
    rnd = data.get("random")
    if rnd is not None:
        _check_fields(rnd, RANDOM_FIELDS, "random")
    options = data.get("options", {})
    _check_fields(options, OPTION_FIELDS, "options")
    inst = InstanceFile(grid_block, cost, weights, objective, schedules, rnd, dict(options))
    # build once so semantic errors surface at parse time
    grid = inst.type_grid()
    inst.cost_model()
    if weights is not None:
        inst.welfare(grid)
    if schedules is not None:
        q, qbar = inst.pair()
        if q.shape != grid.nodes.shape or qbar.shape != grid.nodes.shape:
            raise ValidationError(f"field 'schedules' must have {grid.n} entries per schedule")
    return inst


def load_instance(path: str) -> InstanceFile:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read instance {path}: {exc.strerror}") from None
    return parse_instance(loads(text))


def reference_instance(objective: str = "low", n: int = 400) -> InstanceFile:
    """Quadratic cost, uniform types on [1, 2], the regime's reference weights."""
    weights = {
        "low": {"family": "linear", "params": {"a": 4.0, "b": -2.0}},
        "high": {"family": "linear", "params": {"a": 0.0, "b": 1.0}},
        "mid": {"family": "tent", "params": {"peak": 1.6}},
        "total": {"family": "constant", "params": {}},
        "revenue": None,
    }[objective]
    return InstanceFile({"source": {"dist": "uniform", "low": 1.0, "high": 2.0}, "n": n},
                        {"family": "quadratic", "params": {"scale": 1.0}}, weights, objective)


def write_csv(path: str, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
