"""Experiment configuration: YAML parsing with strict keys, typed fields,
documented defaults and a resolved echo that parses back to the same config.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ParseError

EXPERIMENTS = ("simulate", "couple", "tv-decay", "drift-check", "rank-check", "orey-check",
               "invariant-check")
MODEL_NAMES = ("example-e1", "linear", "levy-dissipative", "polynomial")
LEVY_FAMILIES = ("power-law", "radial-table")

# (type, default, description); None defaults are resolved per model at run time
TOP_FIELDS = {
    "experiment": ("choice", None, "experiment to run: " + ", ".join(EXPERIMENTS)),
    "seed": ("int", 0, "64-bit master seed"),
    "output": ("str", "ergokit-out", "output directory"),
    "plot": ("bool", False, "emit SVG figures"),
    "dt": ("float+", 0.01, "Euler step"),
    "horizon": ("float+", 5.0, "simulation horizon (simulate)"),
    "n_paths": ("int+", 10000, "Monte Carlo paths per ensemble"),
    "save_every": ("int+", 10, "steps between saved grid points (simulate)"),
    "write_paths": ("int+", 100, "paths written to paths.csv (simulate)"),
    "scheme": ("choice", "euler", "simulate scheme: euler or exact_e1"),
    "x0": ("point", None, "first start; default depends on the model"),
    "y0": ("point", None, "second start; default depends on the model"),
    "times": ("floats", None, "TV curve times; default 1, 1.25, ..., 8"),
    "bins": ("int+", 40, "histogram bins per coordinate"),
    "tv_method": ("choice", "auto", "auto, histogram or exact_gaussian"),
    "projection": ("ints", None, "coordinates used for histogram TV (all by default)"),
    "window": ("floats", [0.02, 0.98], "TV fit window"),
    "t_star": ("float+", 2.0, "Lyapunov horizon t*"),
    "grid": ("points", None, "drift-check grid; default {-10,-5,0,5,10}^d for d <= 2"),
    "k_steps": ("int+", 5, "iterates checked after a passing drift fit"),
    "iterate_point": ("point", None, "start of the iterate check; default x0"),
    "t_chain": ("float+", None, "coupled chain step; default 3/k"),
    "r_star": ("float+", 6.0, "joint ball radius"),
    "delta": ("float+", 0.5, "merge proximity |u - v|"),
    "max_steps": ("int+", 50, "chain censoring cap"),
    "n_trials": ("int+", 200, "coupled chain trials"),
    "n_kernel": ("int+", 2000, "auxiliary paths per kernel estimate"),
    "chain_dt": ("float+", 0.02, "Euler step inside the coupled chain"),
    "min_coupled_fraction": ("float01", 0.9, "coupled-fraction verdict threshold"),
    "theta": ("float+", None, "exponential-moment rate; default |slope|/2"),
    "depth": ("int+", 2, "B_n recursion depth"),
    "derivative_mode": ("choice", "exact_supplied", "exact_supplied or finite_difference"),
    "strict_paper_columns": ("bool", False, "drop the B1 A2 column block"),
    "rank_points": ("points", None, "rank-check grid; default {-2,-1,0,1,2}^d for d <= 2"),
    "eps_list": ("floats", [1e-2, 1e-3, 1e-4], "Orey check radii (decreasing)"),
    "t_burn": ("float+", 15.0, "burn-in time for invariant-check"),
    "starts": ("points", None, "invariant-check starts; default [x0, y0]"),
    "tol": ("float+", 0.05, "invariant-check TV tolerance"),
}

CHOICES = {
    "experiment": EXPERIMENTS,
    "scheme": ("euler", "exact_e1"),
    "tv_method": ("auto", "histogram", "exact_gaussian"),
    "derivative_mode": ("exact_supplied", "finite_difference"),
}

MODEL_FIELDS = {
    "example-e1": {"name": ("str", None, ""), "k": ("float+", 1.0, "rate k"),
                   "sigma": ("float", 1.0, "noise scale on Y")},
    "linear": {"name": ("str", None, ""), "B": ("matrix", [[-1.0]], "drift matrix"),
               "a1": ("matrix", None, "diffusion matrix; identity by default"),
               "a2": ("matrix", None, "jump matrix; identity with a levy block, else zero")},
    "levy-dissipative": {"name": ("str", None, ""), "k": ("float+", 1.0, "dissipativity rate"),
                         "sigma": ("float", 1.0, "Brownian scale on the second coordinate"),
                         "cubic": ("float", 1.0, "cubic damping coefficient")},
    "polynomial": {"name": ("str", None, ""),
                   "drift": ("terms", None, "per-component lists of [coef, [exponents]]"),
                   "a1": ("matrix", None, "diffusion matrix; identity by default"),
                   "a2": ("matrix", None, "jump matrix; identity with a levy block, else zero"),
                   "dissipativity_k": ("float+", None, "declared dissipativity rate")},
}

LEVY_FIELDS = {
    "family": ("choice", "power-law", "power-law or radial-table"),
    "dim": ("int+", None, "dimension; defaults to the model's"),
    "alpha_index": ("float", 0.5, "stability index in (0, 2)"),
    "scale": ("float+", 1.0, "power-law prefactor"),
    "truncation_rho": ("float", 0.01, "small-jump truncation radius in (0, 1)"),
    "large_jump_rate": ("float", 0.0, "rate of jumps with |z| >= 1"),
    "large_jump_radius": ("float", 2.0, "large jumps have |z| uniform on [1, radius]"),
    "small_jump_mode": ("choice", "drop", "drop or gaussian_substitute"),
    "r_table": ("floats", None, "radii of a radial density table"),
    "kappa_table": ("floats", None, "density values of a radial table"),
}
LEVY_DISSIPATIVE_DEFAULTS = {"scale": 0.1, "large_jump_rate": 0.5}
LEVY_CHOICES = {"family": LEVY_FAMILIES, "small_jump_mode": ("drop", "gaussian_substitute")}


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    levy: Optional[dict]
    params: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.params["seed"]

    @property
    def output(self):
        return self.params["output"]

    def to_dict(self):
        out = {"experiment": self.experiment}
        for k, v in self.params.items():
            if k != "experiment":
                out[k] = copy.deepcopy(v)
        out["model"] = copy.deepcopy(self.model)
        if self.levy is not None:
            out["levy"] = copy.deepcopy(self.levy)
        return out

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()


def emit(config: ExperimentConfig) -> str:
    """YAML text that parses back to ``config``."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


# ------------------------------------------------------------------ parsing

def _compose(text):
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
        finally:
            loader.dispose()
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed document: {exc}") from None
    if node is None:
        raise ParseError("empty document")
    return node


def _plain(node):
    """Python value of a YAML node (scalars via the safe constructor)."""
    if isinstance(node, yaml.MappingNode):
        return {k.value: _plain(v) for k, v in node.value}
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v) for v in node.value]
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _mapping(node, where):
    if not isinstance(node, yaml.MappingNode):
        raise ParseError(f"{where} (line {node.start_mark.line + 1}): expected a mapping")
    out = {}
    for k, v in node.value:
        key = str(k.value)
        if key in out:
            raise ParseError(f"duplicate key {key!r} (line {k.start_mark.line + 1})")
        out[key] = (v, k.start_mark.line + 1)
    return out


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(kind, value, key, line, choices=None):
    where = f"key {key!r} (line {line})"
    if value is None:
        return None
    if kind == "choice":
        if value not in choices:
            raise ParseError(f"{where}: {value!r} is not one of {', '.join(choices)}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ParseError(f"{where}: expected text, got {type(value).__name__}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ParseError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind in ("int", "int+"):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ParseError(f"{where}: expected an integer, got {value!r}")
        if kind == "int+" and value < 1:
            raise ParseError(f"{where}: must be >= 1")
        return int(value)
    if kind in ("float", "float+", "float01"):
        if not _num(value):
            raise ParseError(f"{where}: expected a number, got {value!r}")
        value = float(value)
        if not np.isfinite(value):
            raise ParseError(f"{where}: must be finite")
        if kind == "float+" and not value > 0:
            raise ParseError(f"{where}: must be positive")
        if kind == "float01" and not 0.0 <= value <= 1.0:
            raise ParseError(f"{where}: must lie in [0, 1]")
        return value
    if kind in ("floats", "point"):
        if not isinstance(value, list) or not value or not all(_num(v) for v in value):
            raise ParseError(f"{where}: expected a non-empty list of numbers")
        return [float(v) for v in value]
    if kind == "ints":
        if not isinstance(value, list) or not value or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ParseError(f"{where}: expected a non-empty list of integers")
        return [int(v) for v in value]
    if kind in ("points", "matrix"):
        if (not isinstance(value, list) or not value
                or not all(isinstance(r, list) and r and all(_num(v) for v in r) for r in value)):
            raise ParseError(f"{where}: expected a list of numeric rows")
        if len({len(r) for r in value}) != 1:
            raise ParseError(f"{where}: rows have different lengths")
        rows = [[float(v) for v in r] for r in value]
        if kind == "matrix" and len(rows) != len(rows[0]):
            raise ParseError(f"{where}: matrix must be square")
        return rows
    if kind == "terms":
        if not isinstance(value, list) or not value:
            raise ParseError(f"{where}: expected one term list per component")
        out = []
        for comp in value:
            if not isinstance(comp, list):
                raise ParseError(f"{where}: each component must be a list of [coef, [exponents]]")
            terms = []
            for t in comp:
                ok = (isinstance(t, list) and len(t) == 2 and _num(t[0]) and isinstance(t[1], list)
                      and all(isinstance(e, int) and not isinstance(e, bool) and e >= 0
                              for e in t[1]))
                if not ok or len(t[1]) != len(value):
                    raise ParseError(f"{where}: bad term {t!r}; expected [coef, [e1, ..., ed]] "
                                     f"with d = {len(value)} nonnegative exponents")
                terms.append([float(t[0]), [int(e) for e in t[1]]])
            out.append(terms)
        return out
    raise AssertionError(kind)


def _read_block(node, fields, choices, where):
    items = _mapping(node, where)
    out = {}
    for key, (vnode, line) in items.items():
        if key not in fields:
            raise ParseError(f"unknown key {key!r} in {where} (line {line})")
        kind = fields[key][0]
        out[key] = _coerce(kind, _plain(vnode), key, line, choices.get(key))
    return out, {k: line for k, (_, line) in items.items()}


def parse_config(text: str) -> ExperimentConfig:
    """Validate a YAML document and resolve every default."""
    root = _compose(text)
    items = _mapping(root, "document")
    model_node = items.pop("model", None)
    levy_node = items.pop("levy", None)
    if model_node is None:
        raise ParseError("missing required 'model' block")
    top = {}
    for key, (vnode, line) in items.items():
        if key not in TOP_FIELDS:
            raise ParseError(f"unknown key {key!r} (line {line})")
        top[key] = _coerce(TOP_FIELDS[key][0], _plain(vnode), key, line, CHOICES.get(key))
    if top.get("experiment") is None:
        raise ParseError("missing required key 'experiment'")
    params = {k: copy.deepcopy(spec[1]) for k, spec in TOP_FIELDS.items()}
    params.update({k: v for k, v in top.items() if v is not None or k in ("x0", "y0")})
    params["seed"] = int(params["seed"]) & (2 ** 64 - 1)

    mitems = _mapping(model_node[0], "model block")
    if "name" not in mitems:
        raise ParseError(f"model block (line {model_node[1]}) needs a 'name'")
    name = _plain(mitems["name"][0])
    if name not in MODEL_NAMES:
        raise ParseError(f"model name {name!r} (line {mitems['name'][1]}) is not one of "
                         + ", ".join(MODEL_NAMES))
    mfields = MODEL_FIELDS[name]
    model, _ = _read_block(model_node[0], mfields, {}, f"model block '{name}'")
    resolved_model = {"name": name}
    for k, spec in mfields.items():
        if k != "name":
            resolved_model[k] = model.get(k, copy.deepcopy(spec[1]))
    if name == "polynomial" and resolved_model["drift"] is None:
        raise ParseError("polynomial model needs a 'drift' term table")

    levy = None
    if levy_node is not None or name == "levy-dissipative":
        given, lines = {}, {}
        if levy_node is not None:
            given, lines = _read_block(levy_node[0], LEVY_FIELDS, LEVY_CHOICES, "levy block")
        levy = {k: copy.deepcopy(s[1]) for k, s in LEVY_FIELDS.items()}
        if name == "levy-dissipative":
            levy.update(LEVY_DISSIPATIVE_DEFAULTS)
        levy.update({k: v for k, v in given.items() if v is not None})
        a = levy["alpha_index"]
        if not 0.0 < a < 2.0:
            raise ParseError(f"key 'alpha_index' (levy block, line {lines.get('alpha_index')}): "
                             f"{a} is outside the range (0, 2)")
        if not 0.0 < levy["truncation_rho"] < 1.0:
            raise ParseError(f"key 'truncation_rho' (levy block, line "
                             f"{lines.get('truncation_rho')}): must lie in (0, 1)")
        if levy["large_jump_rate"] < 0:
            raise ParseError(f"key 'large_jump_rate' (levy block, line "
                             f"{lines.get('large_jump_rate')}): must be nonnegative")
        if levy["family"] == "radial-table" and (levy["r_table"] is None
                                                 or levy["kappa_table"] is None):
            raise ParseError("radial-table family needs r_table and kappa_table")
    experiment = params.pop("experiment")
    return ExperimentConfig(experiment, resolved_model, levy, params)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def field_docs():
    """(block, key, default, description) rows for documentation."""
    rows = [("top", k, s[1], s[2]) for k, s in TOP_FIELDS.items()]
    for name, fields in MODEL_FIELDS.items():
        rows += [(f"model:{name}", k, s[1], s[2]) for k, s in fields.items() if k != "name"]
    rows += [("levy", k, s[1], s[2]) for k, s in LEVY_FIELDS.items()]
    return rows
