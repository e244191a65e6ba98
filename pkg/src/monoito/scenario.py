"""Declarative scenarios: resolve a JSON tree, run one pipeline, write reports.

Every scenario kind has a table of defaults. The resolved configuration (user
values over defaults) is echoed to ``resolved-config.json``; running that file
again reproduces every output byte for byte.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from . import registry
from ._accel import default_backend
from .comparison import InstanceViolation, check_coefficient_conditions, compare_paths
from .ledger import residual_study
from .mollify import scan_L_bound
from .sde import BVDriverSpec, check_integrability, replay, simulate_ensemble, uniform_grid, write_path
from .stopping import (StoppingGrid, boundary_samples, check_monotonicity_conditions, dynkin_check,
                       extract_boundary, l_field, solve_value, verify_extracted, write_boundary_csv)

KINDS = ("simulate", "verify-ito", "scan-L", "solve-os", "check-monotone", "compare", "dynkin")
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class PipelineError(RuntimeError):
    def __init__(self, module: str, exc: Exception):
        self.module = module
        super().__init__(f"[{module}] {type(exc).__name__}: {exc}")


DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"dynamics": REQUIRED, "driver": {"mode": "zero"}, "x0": REQUIRED,
                 "grid": {"T": 1.0, "n_steps": 1000}, "n_paths": 1, "seed": 0, "write_paths": 1},
    "verify-ito": {"test_function": REQUIRED, "surface": None, "dynamics": REQUIRED, "driver": {"mode": "zero"},
                   "x0": REQUIRED, "T": 1.0, "dts": [4e-3, 2e-3, 1e-3], "n_paths": 1000, "seed": 0,
                   "band": 1e-8},
    "scan-L": {"test_function": REQUIRED, "dynamics": REQUIRED, "box": REQUIRED, "ns": [4, 8, 16, 32, 64],
               "quad_nodes": 4, "points_per_axis": 201, "band": 0.0},
    "solve-os": {"problem": REQUIRED, "grid": REQUIRED, "backend": None, "tol_gap": 1e-7,
                 "l_window": 0.9, "n_samples": 2000, "seed": 0},
    "check-monotone": {"problem": REQUIRED, "sample_box": REQUIRED, "n_samples": 2000, "seed": 0,
                       "grid": None, "backend": None},
    "compare": {"instance": REQUIRED, "grid": {"T": 1.0, "n_steps": 1000}, "n_paths": 1000, "seed": 0,
                "refine_levels": 1, "tol_ord": None, "conditions_box": None, "n_samples": 2000},
    "dynkin": {"problem": REQUIRED, "x0": REQUIRED, "tau": None, "t0": 0.0, "n_paths": 10000,
               "n_steps": 1000, "seed": 0},
}


def _merge(defaults, user, path, top=True):
    out = {} if top else {k: copy.deepcopy(v) for k, v in user.items() if k not in defaults}
    for k, dv in defaults.items():
        if k in user:
            uv = user[k]
            out[k] = _merge(dv, uv, f"{path}.{k}", False) if isinstance(dv, dict) and isinstance(uv, dict) else uv
        elif dv is REQUIRED:
            raise ConfigError(f"{path}.{k}", "required field missing")
        else:
            out[k] = copy.deepcopy(dv)
    return out


def resolve(raw: dict, seed: int | None = None, base_dir: Path | None = None) -> dict:
    """Fill defaults and validate; ``seed`` overrides the scenario seed."""
    if not isinstance(raw, dict):
        raise ConfigError("$", "scenario must be a JSON object")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError("$.kind", f"must be one of {', '.join(KINDS)}, got {kind!r}")
    known = set(DEFAULTS[kind]) | {"name", "kind", "assertions"}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"$.{extra[0]}", f"unknown field for kind {kind!r}")
    cfg = {"name": raw.get("name", kind), "kind": kind}
    cfg.update(_merge(DEFAULTS[kind], raw, "$"))
    cfg["assertions"] = copy.deepcopy(raw.get("assertions", {}))
    if seed is not None and "seed" in cfg:
        cfg["seed"] = int(seed)
    if "backend" in cfg and cfg["backend"] is None:
        cfg["backend"] = default_backend()
    for key in ("dynamics", "test_function", "problem", "instance", "surface"):
        blk = cfg.get(key)
        if blk is None:
            continue
        if not isinstance(blk, dict) or "builtin" not in blk:
            raise ConfigError(f"$.{key}", "expected an object with a 'builtin' name")
        category = {"dynamics": "dynamics", "test_function": "test-function", "problem": "problem",
                    "instance": "comparison", "surface": "surface"}[key]
        try:
            b = registry.get(category, blk["builtin"])
        except KeyError as e:
            raise ConfigError(f"$.{key}.builtin", str(e.args[0])) from None
        params = blk.get("params", {})
        bad = sorted(set(params) - set(b.params()))
        if bad:
            raise ConfigError(f"$.{key}.params.{bad[0]}", f"not a parameter of {blk['builtin']!r}")
        full = b.params()
        full.update(params)
        if category == "surface" and full.get("path") and base_dir is not None:
            full["path"] = str((base_dir / full["path"]).resolve())
        cfg[key] = {"builtin": blk["builtin"], "params": full}
    return cfg


def _build(category, blk):
    return registry.get(category, blk["builtin"]).build(**blk["params"])


def _driver(d: dict, path="$.driver") -> BVDriverSpec:
    mode = d.get("mode", "zero")
    if mode == "zero":
        return BVDriverSpec.zero()
    if mode == "schedule":
        return BVDriverSpec.schedule([(t, v) for t, v in d.get("jumps", [])], d.get("rate"))
    if mode == "reflection":
        try:
            return BVDriverSpec.reflect(d["index"], d["threshold"], d.get("side", "above"))
        except KeyError as e:
            raise ConfigError(f"{path}.{e.args[0]}", "required for reflection mode") from None
    raise ConfigError(f"{path}.mode", f"unknown driver mode {mode!r}")


# --- assertions --------------------------------------------------------------------

def _assert(results: dict, name: str, passed: bool, **info):
    results[name] = {"passed": bool(passed), **info}


def _check_expected(assertions, results, name, actual_bool, **info):
    if name in assertions:
        want = bool(assertions[name])
        _assert(results, name, actual_bool == want, actual=bool(actual_bool), expected=want, **info)


# --- pipelines ---------------------------------------------------------------------

def _run_simulate(cfg, out: Path):
    spec = _build("dynamics", cfg["dynamics"])
    driver = _driver(cfg["driver"])
    grid = uniform_grid(cfg["grid"]["T"], cfg["grid"]["n_steps"])
    ens = simulate_ensemble(spec, driver, cfg["x0"], grid, cfg["seed"], cfg["n_paths"])
    for k in range(min(int(cfg["write_paths"]), len(ens))):
        write_path(ens[k], out / f"path_{k:04d}", spec, driver)
    integr = [check_integrability(ens[k], spec) for k in range(len(ens))]
    term = ens.terminal
    n = term.shape[0]
    se = (np.std(term, axis=0, ddof=1) / np.sqrt(n)) if n > 1 else np.zeros(term.shape[1])
    res = {
        "n_paths": n,
        "terminal_mean": np.mean(term, axis=0).tolist(),
        "terminal_se": se.tolist(),
        "integrability_passed": all(r.passed for r in integr),
        "integrability_max_total": max(r.total for r in integr),
        "replay_bitwise": bool(replay(ens[0], spec, driver)),
        "constant_paths": bool(np.all(ens.x == np.asarray(cfg["x0"], dtype=float))),
    }
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "integrability", res["integrability_passed"])
    _check_expected(a, checks, "replay", res["replay_bitwise"])
    _check_expected(a, checks, "constant_path", res["constant_paths"])
    if "terminal_mean" in a:
        exp = np.atleast_1d(np.asarray(a["terminal_mean"]["expected"], dtype=float))
        k = float(a["terminal_mean"].get("n_se", 3.0))
        dev = np.abs(np.asarray(res["terminal_mean"]) - exp)
        _assert(checks, "terminal_mean", bool(np.all(dev <= k * np.asarray(res["terminal_se"]) + 1e-12)),
                deviation=dev.tolist())
    return res, checks


def _run_verify_ito(cfg, out: Path):
    f = _build("test-function", cfg["test_function"])
    surface = _build("surface", cfg["surface"]) if cfg["surface"] else f.surface
    spec = _build("dynamics", cfg["dynamics"])
    driver = _driver(cfg["driver"])
    study, led = residual_study(f, surface, spec, driver, cfg["x0"], cfg["dts"], cfg["n_paths"], cfg["seed"],
                                cfg["T"], cfg["band"], keep_last=True)
    led.write_csv(out / "ledger.csv")
    study.write_json(out / "convergence.json")
    res = study.to_dict()
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "decreasing", study.strictly_decreasing, mean_abs=study.mean_abs)
    _check_expected(a, checks, "final_within_3se", study.final_within_3se)
    _check_expected(a, checks, "within_budget", all(r["within_budget"] for r in study.rows))
    if "mean_abs_below" in a:
        v = study.mean_abs[-1]
        _assert(checks, "mean_abs_below", v < float(a["mean_abs_below"]), value=v)
    return res, checks


def _run_scan_L(cfg, out: Path):
    f = _build("test-function", cfg["test_function"])
    spec = _build("dynamics", cfg["dynamics"])
    rep = scan_L_bound(f, spec.beta, cfg["box"], cfg["ns"], cfg["quad_nodes"], cfg["points_per_axis"], cfg["band"])
    rep.write(out / "scan_L")
    res = rep.to_dict()
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "bounded", rep.bounded)
    _check_expected(a, checks, "no_upward_trend", rep.no_upward_trend)
    if "max_below" in a:
        _assert(checks, "max_below", max(rep.maxima) <= float(a["max_below"]), value=max(rep.maxima))
    return res, checks


def _stopping_grid(g):
    try:
        return StoppingGrid(tuple(tuple(b) for b in g["bounds"]), tuple(g["n_x"]), int(g["n_t"]))
    except (KeyError, TypeError) as e:
        raise ConfigError("$.grid", f"needs bounds, n_x and n_t ({e})") from None


def _run_solve_os(cfg, out: Path):
    problem = _build("problem", cfg["problem"])
    field = solve_value(problem, _stopping_grid(cfg["grid"]), backend=cfg["backend"], tol_gap=cfg["tol_gap"])
    field.write_csv(out / "value")
    write_boundary_csv(field, out / "boundary")
    lf = l_field(field, t_window=cfg["l_window"])
    lf.write_csv(field, out / "lfield")
    surf = extract_boundary(field)
    mono = verify_extracted(field, surf, cfg["n_samples"], cfg["seed"])
    box = [[float(field.t[0]), float(field.t[-1])]] + [[float(a[0]), float(a[-1])] for a in field.axes]
    pred = check_monotonicity_conditions(problem, box, cfg["n_samples"], cfg["seed"])
    agree = pred.agrees_with(surf)
    res = {"diagnostics": field.diagnostics(), "sup_L": lf.sup, "l_window_t_max": lf.t_max,
           "boundary_directions": list(surf.directions), "boundary_monotone": mono.to_dict(),
           "prediction": pred.to_dict(), "prediction_agrees": agree}
    _, b = boundary_samples(field)
    res["boundary_t0"] = np.asarray(b[0]).tolist()
    a, checks = cfg["assertions"], {}
    if "value" in a:
        spec = a["value"]
        v = float(field.value_at(spec.get("t", 0.0), [spec["x"]])[0])
        rel = abs(v / float(spec["reference"]) - 1.0)
        _assert(checks, "value", rel <= float(spec["rel_tol"]), value=v, rel_error=rel)
        res["value"] = v
    if "boundary_at_t0" in a:
        spec = a["boundary_at_t0"]
        v = float(np.ravel(b[0])[int(spec.get("index", 0))])
        rel = abs(v / float(spec["reference"]) - 1.0)
        _assert(checks, "boundary_at_t0", rel <= float(spec["rel_tol"]), value=v, rel_error=rel)
    _check_expected(a, checks, "boundary_monotone", mono.passed)
    _check_expected(a, checks, "no_islands", res["diagnostics"]["island_columns"] == 0)
    _check_expected(a, checks, "obstacle", res["diagnostics"]["min_U_minus_G"] >= -1e-10)
    _check_expected(a, checks, "prediction_agrees", bool(agree) and all(agree.values()), agreement=agree)
    if "sup_L_below" in a:
        _assert(checks, "sup_L_below", lf.sup <= float(a["sup_L_below"]), value=lf.sup)
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    return res, checks


def _run_check_monotone(cfg, out: Path):
    problem = _build("problem", cfg["problem"])
    rep = check_monotonicity_conditions(problem, cfg["sample_box"], cfg["n_samples"], cfg["seed"])
    res = {"prediction": rep.to_dict()}
    agree = None
    if cfg["grid"] is not None and rep.refused is None:
        field = solve_value(problem, _stopping_grid(cfg["grid"]), backend=cfg["backend"])
        surf = extract_boundary(field)
        agree = rep.agrees_with(surf)
        res["boundary_directions"] = list(surf.directions)
        res["agreement"] = agree
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "refused", rep.refused is not None, reason=rep.refused)
    if "matches_boundary" in a:
        ok = bool(agree) and all(agree.values())
        _assert(checks, "matches_boundary", ok == bool(a["matches_boundary"]), agreement=agree)
    with open(out / "monotonicity.json", "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    return res, checks


def _run_compare(cfg, out: Path):
    inst = _build("comparison", cfg["instance"])
    grid = uniform_grid(cfg["grid"]["T"], cfg["grid"]["n_steps"])
    rep = compare_paths(inst, grid, cfg["n_paths"], cfg["seed"], cfg["tol_ord"], cfg["refine_levels"])
    res = {"ordering": rep.to_dict()}
    cond = None
    if cfg["conditions_box"] is not None:
        cond = check_coefficient_conditions(inst, cfg["conditions_box"], cfg["n_samples"], cfg["seed"])
        res["conditions"] = cond.to_dict()
    with open(out / "compare.json", "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "ordering", rep.passed, fraction=rep.fraction)
    _check_expected(a, checks, "violation_shrinks", rep.violation_shrinks)
    _check_expected(a, checks, "coupling_exact", rep.coupling_exact)
    if "conditions" in a:
        ok = cond is not None and cond.passed
        _assert(checks, "conditions", ok == bool(a["conditions"]))
    return res, checks


def _run_dynkin(cfg, out: Path):
    problem = _build("problem", cfg["problem"])
    tau = cfg["tau"] if cfg["tau"] is not None else problem.horizon - cfg["t0"]
    rep = dynkin_check(problem, float(tau), cfg["x0"], cfg["n_paths"], cfg["seed"], cfg["n_steps"], cfg["t0"])
    res = rep.to_dict()
    with open(out / "dynkin.json", "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    a, checks = cfg["assertions"], {}
    _check_expected(a, checks, "within_3se", rep.passed, difference=rep.difference, se=rep.se)
    return res, checks


PIPELINES = {
    "simulate": ("sde_core", _run_simulate),
    "verify-ito": ("ito_verifier", _run_verify_ito),
    "scan-L": ("mollify", _run_scan_L),
    "solve-os": ("os_solver", _run_solve_os),
    "check-monotone": ("os_solver", _run_check_monotone),
    "compare": ("comparison", _run_compare),
    "dynkin": ("os_solver", _run_dynkin),
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def run_config(cfg: dict, out: Path) -> dict:
    """Run a resolved config, write ``report.json`` and ``resolved-config.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved-config.json", "w") as fh:
        json.dump(_jsonable(cfg), fh, indent=2, sort_keys=True)
    module, fn = PIPELINES[cfg["kind"]]
    try:
        results, checks = fn(cfg, out)
    except (ConfigError, InstanceViolation):
        raise
    except Exception as e:  # noqa: BLE001 - reported with provenance
        raise PipelineError(module, e) from e
    unknown = sorted(set(cfg["assertions"]) - set(checks))
    for name in unknown:
        _assert(checks, name, False, error="assertion not supported for this kind")
    report = {"name": cfg["name"], "kind": cfg["kind"], "module": module,
              "assertions": checks, "passed": all(c["passed"] for c in checks.values()),
              "results": results}
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
    return report


def load(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError("$", f"invalid JSON: {e}") from None


def default_out_dir(scenario_path, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get("MONOITO_OUT")
    stem = Path(scenario_path).stem
    return Path(env) / stem if env else Path("out") / stem
