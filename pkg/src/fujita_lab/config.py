"""Experiment configuration: JSON schema, default materialisation, builders."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ValidationError
from .heat_kernel import GridControls
from .manifold import VolumeFamily, builtin, exponential_warp_manifold, make_power_log_manifold
from .picard import PicardControls
from .semilinear import InitialData, SolverControls

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_OPT_POS = {"type": ["number", "null"], "exclusiveMinimum": 0}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required), "default": {}}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fujita-lab experiment",
    **_obj({
        "manifold": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["euclidean", "power-3", "power-4", "borderline-log", "exponential"]},
                "dimension": {"type": "integer", "minimum": 1},
                "family": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "C": {**_POS, "default": 1.0},
                        "exponents": {"type": "array", "items": _NUM, "minItems": 1},
                        "r_base": _OPT_POS,
                    },
                    "required": ["exponents"],
                },
                "r_splice": _OPT_POS,
                "R_max": _OPT_POS,
                "p_border": {"type": "number", "exclusiveMinimum": 1, "default": 2.0},
                "rate": {**_POS, "default": 1.0},
            },
            "required": ["dimension"],
        },
        "problem": _obj({
            "p": {"type": "number", "exclusiveMinimum": 1},
            "u0": _obj({
                "kind": {"enum": ["gaussian", "bump", "table"], "default": "gaussian"},
                "amplitude": {"type": "number", "minimum": 0, "default": 0.01},
                "width": {**_POS, "default": 1.0},
                "r": {"type": "array", "items": _NUM},
                "u": {"type": "array", "items": {"type": "number", "minimum": 0}},
            }),
        }),
        "criterion": _obj({
            "r0": {**_POS, "default": 1.0},
            "numeric": {"type": "boolean", "default": False},
        }),
        "solver": _obj({
            "frame": {"enum": ["self-similar", "physical"], "default": "self-similar"},
            "N": {**_POS_INT, "default": 960},
            "R": {**_POS, "default": 24.0},
            "rho": {"type": "number", "minimum": 1, "maximum": 1.05, "default": 1.0},
            "dt_max": {**_POS, "default": 0.01},
            "reaction_clock": {**_POS, "default": 0.1},
            "U_max": {**_POS, "default": 1e8},
            "dt_min": {**_POS, "default": 1e-12},
            "horizon": {**_OPT_POS, "default": None},
            "rate_tol": {**_POS, "default": 0.01},
            "record_every": {**_POS_INT, "default": 25},
            "envelope_delta": {**_OPT_POS, "default": None},
        }),
        "sweep": _obj({
            "p_lo": {"type": "number", "exclusiveMinimum": 1},
            "p_hi": {"type": "number", "exclusiveMinimum": 1},
            "budget": {"type": "integer", "minimum": 8, "default": 40},
            "width": {**_POS, "default": 0.1},
            "amplitudes": {"type": "array", "items": _POS, "minItems": 1,
                           "default": [1e-4, 1e-2, 1.0]},
            "sigma": {**_POS, "default": 1.0},
        }),
        "heat_kernel": _obj({
            "N": {**_POS_INT, "default": 1024},
            "R": {**_POS, "default": 40.0},
            "rho": {"type": "number", "minimum": 1, "maximum": 1.05, "default": 1.0},
            "times": {"type": "array", "items": _POS, "minItems": 1, "default": [0.25, 1.0, 4.0, 16.0]},
        }),
        "picard": _obj({
            "delta": {"type": "number", "exclusiveMinimum": 1, "default": 2.0},
            "tol": {**_POS, "default": 1e-10},
            "J": {"type": "integer", "minimum": 2, "default": 40},
            "dt": {**_POS, "default": 0.01},
            "N": {**_POS_INT, "default": 400},
            "R": {**_OPT_POS, "default": None},
            "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.5},
            "sigma": {**_POS, "default": 1.0},
            "pairs": {"type": "integer", "minimum": 0, "default": 200},
            "write_field": {"type": "boolean", "default": False},
        }),
        "certificate": _obj({
            "r0": {**_POS, "default": 1.0},
            "i": {"type": "integer", "minimum": 2, "default": 8},
            "i_list": {"type": "array", "items": {"type": "integer", "minimum": 2},
                       "default": [4, 8, 16]},
            "samples_r": {**_POS_INT, "default": 64},
            "samples_t": {**_POS_INT, "default": 16},
        }),
        "report": _obj({
            "inputs": {"type": "array", "items": {"type": "string"}, "default": []},
        }),
        "output": _obj({
            "directory": {"type": "string", "default": "out"},
            "formats": {"type": "array", "items": {"enum": ["csv", "json", "svg"]},
                        "default": ["csv", "json", "svg"]},
        }),
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1, "default": None},
    }, required=("manifold",)),
}


def _fill(schema: dict, node):
    if schema.get("type") != "object" or not isinstance(node, dict):
        return node
    for key, sub in schema.get("properties", {}).items():
        if key not in node and "default" in sub:
            node[key] = copy.deepcopy(sub["default"])
        if key in node:
            node[key] = _fill(sub, node[key])
    return node


def materialize(raw: dict) -> dict:
    """Validate against :data:`SCHEMA` and return a copy with every default filled in."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(x) for x in exc.absolute_path)
        raise ValidationError(f"config invalid at '{path}': {exc.message}", path=path) from None
    return _fill(SCHEMA, copy.deepcopy(raw))


def load(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("config file not found", path=str(path))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from None
    return materialize(raw)


# -- builders --------------------------------------------------------------------

def build_manifold(block: dict):
    """Return ``(manifold, family or None)``."""
    n = block["dimension"]
    R_max = block.get("R_max")
    kind = block.get("builtin")
    if kind == "euclidean":
        return builtin(f"euclidean-{n}", R_max=R_max)
    if kind in ("power-3", "power-4", "borderline-log"):
        if n != 2:
            raise ValidationError(f"builtin {kind!r} is defined for dimension 2", dimension=n)
        return builtin(kind, p_border=block.get("p_border", 2.0), R_max=R_max)
    if kind == "exponential":
        m = exponential_warp_manifold(n, block.get("rate", 1.0), block.get("r_splice") or 1.0, R_max)
        return m, None
    fam_block = block.get("family")
    if fam_block is None:
        raise ValidationError("manifold needs either 'builtin' or 'family'")
    fam = VolumeFamily(tuple(fam_block["exponents"]), fam_block.get("C", 1.0), fam_block.get("r_base"))
    m = make_power_log_manifold(n, fam, block.get("r_splice"), R_max)
    return m, fam


def build_initial_data(block: dict) -> InitialData:
    kind = block["kind"]
    if kind == "table":
        if "r" not in block or "u" not in block:
            raise ValidationError("table initial data needs 'r' and 'u'")
        return InitialData("table", table_r=tuple(block["r"]), table_u=tuple(block["u"]))
    return InitialData(kind, block["amplitude"], block["width"])


def solver_controls(block: dict) -> SolverControls:
    return SolverControls(**block)


def grid_controls(block: dict) -> GridControls:
    return GridControls(N=block["N"], R=block["R"], rho=block["rho"])


def picard_controls(block: dict) -> PicardControls:
    return PicardControls(delta=block["delta"], J=block["J"], dt=block["dt"], N=block["N"],
                          R=block["R"], tol=block["tol"])


def require(cfg: dict, section: str, key: str):
    value = cfg[section].get(key)
    if value is None:
        raise ValidationError(f"'{section}.{key}' is required for this command")
    return value


def effective_threads(cli_value: Optional[int], cfg: dict, env: dict) -> int:
    if cli_value:
        return int(cli_value)
    if env.get("FUJITA_LAB_THREADS"):
        try:
            return max(1, int(env["FUJITA_LAB_THREADS"]))
        except ValueError:
            raise ValidationError("FUJITA_LAB_THREADS must be an integer") from None
    if cfg.get("threads"):
        return int(cfg["threads"])
    return os.cpu_count() or 1
