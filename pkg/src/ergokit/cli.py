"""``ergokit <experiment> --config FILE [--seed N] [--out DIR] [--plot]``

Runs one experiment, writes CSV artifacts (plus SVG figures with ``--plot``),
a ``resolved_config.yaml`` echo and a ``report.json``.  Exit status is 0 when
every verdict passes, 2 when one fails and 1 on an execution error.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import _backend, rng
from .config import EXPERIMENTS, ExperimentConfig, emit, load_config
from .errors import ErgokitError, FitError, SampleSizeError

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


@dataclass
class RunReport:
    experiment: str
    wall_time: float = 0.0
    verdicts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    stage: str = "setup"
    error: str = ""

    @property
    def passed(self):
        return not self.error and all(v["passed"] for v in self.verdicts.values())

    @property
    def exit_code(self):
        if self.error:
            return EXIT_ERROR
        return EXIT_PASS if self.passed else EXIT_FAIL

    def verdict(self, name, passed, **detail):
        self.verdicts[name] = {"passed": bool(passed), **_jsonable(detail)}

    def to_dict(self):
        return {"experiment": self.experiment, "status": _STATUS[self.exit_code],
                "exit_code": self.exit_code, "stage": self.stage, "error": self.error or None,
                "wall_time": self.wall_time, "backend": _backend.NAME,
                "verdicts": self.verdicts, "summary": _jsonable(self.summary),
                "artifacts": self.artifacts, "config": self.config}


_STATUS = {EXIT_PASS: "pass", EXIT_FAIL: "fail", EXIT_ERROR: "error"}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


# ------------------------------------------------------------ model building

def build_levy(block, dim):
    from .noise import power_law_levy, radial_table_levy
    d = block["dim"] or dim
    if block["family"] == "power-law":
        return power_law_levy(d, block["alpha_index"], scale=block["scale"],
                              rho=block["truncation_rho"],
                              large_jump_rate=block["large_jump_rate"],
                              large_jump_radius=block["large_jump_radius"],
                              small_jump_mode=block["small_jump_mode"])
    return radial_table_levy(block["r_table"], block["kappa_table"], block["alpha_index"], d,
                             rho=block["truncation_rho"], large_jump_rate=block["large_jump_rate"],
                             large_jump_radius=block["large_jump_radius"],
                             small_jump_mode=block["small_jump_mode"])


def build_model(cfg: ExperimentConfig):
    """Model and, separately, the Levy spec named by the config (or None)."""
    from .errors import ConfigurationError
    from .model import SdeModel, example_e1, levy_dissipative, linear, polynomial_drift
    m = cfg.model
    name = m["name"]
    if name == "example-e1":
        model = example_e1(m["k"], m["sigma"])
        # a levy block next to example-e1 is a standalone measure for orey-check
        levy = build_levy(cfg.levy, model.dim) if cfg.levy else None
        return model, levy
    if name == "levy-dissipative":
        lv = cfg.levy
        if lv["family"] != "power-law":
            raise ConfigurationError("levy-dissipative takes a power-law levy block")
        if lv["dim"] not in (None, 2):
            raise ConfigurationError("levy-dissipative is two-dimensional")
        model = levy_dissipative(m["k"], m["sigma"], lv["alpha_index"], lv["truncation_rho"],
                                 lv["scale"], lv["large_jump_rate"], lv["large_jump_radius"],
                                 m["cubic"], lv["small_jump_mode"])
        return model, model.levy
    if name == "linear":
        d = len(m["B"])
        levy = build_levy(cfg.levy, d) if cfg.levy else None
        a2 = m["a2"] if m["a2"] is not None else (np.eye(d) if levy is not None else None)
        model = linear(m["B"], m["a1"], a2, levy)
        return model, levy
    comps = [{tuple(e): c for c, e in terms} for terms in m["drift"]]
    d = len(comps)
    levy = build_levy(cfg.levy, d) if cfg.levy else None
    a1 = np.eye(d) if m["a1"] is None else np.asarray(m["a1"], dtype=float)
    if m["a2"] is not None:
        a2 = np.asarray(m["a2"], dtype=float)
    else:
        a2 = np.eye(d) if levy is not None else np.zeros((d, d))
    model = SdeModel(polynomial_drift(comps), a1, a2, levy, m["dissipativity_k"], "polynomial")
    return model, levy


def _default_starts(model):
    d = model.dim
    if model.name == "example-e1":
        return [3.0, 1.0], [-2.0, -1.0]
    if model.name == "levy-dissipative":
        return [1.0, 1.0], [-1.0, -1.0]
    return [2.0] * d, [-2.0] * d


def _product_grid(values, d):
    mesh = np.meshgrid(*([np.asarray(values, dtype=float)] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1).tolist()


def _axis_grid(values, d):
    pts = [[0.0] * d]
    for i in range(d):
        for v in values:
            if v != 0:
                p = [0.0] * d
                p[i] = float(v)
                pts.append(p)
    return pts


def resolve(cfg: ExperimentConfig, model) -> ExperimentConfig:
    """Fill model-dependent defaults so the echo carries every effective value."""
    from .errors import ConfigurationError
    cfg = copy.deepcopy(cfg)
    p = cfg.params
    d = model.dim
    x0, y0 = _default_starts(model)
    p["x0"] = x0 if p["x0"] is None else p["x0"]
    p["y0"] = y0 if p["y0"] is None else p["y0"]
    for key in ("x0", "y0", "iterate_point"):
        if p[key] is not None and len(p[key]) != d:
            raise ConfigurationError(f"{key} has {len(p[key])} coordinates, model has {d}")
    if p["times"] is None:
        p["times"] = [1.0 + 0.25 * i for i in range(29)]
    if p["grid"] is None:
        vals = [-10.0, -5.0, 0.0, 5.0, 10.0]
        p["grid"] = _product_grid(vals, d) if d <= 2 else _axis_grid(vals, d)
    if p["rank_points"] is None:
        vals = [-2.0, -1.0, 0.0, 1.0, 2.0]
        p["rank_points"] = _product_grid(vals, d) if d <= 2 else _axis_grid(vals, d)
    if p["iterate_point"] is None:
        p["iterate_point"] = list(p["x0"])
    if p["starts"] is None:
        p["starts"] = [list(p["x0"]), list(p["y0"])]
    if p["t_chain"] is None and cfg.experiment == "couple":
        k = model.dissipativity_k or model.params.get("k")
        if not k:
            raise ConfigurationError("t_chain is required when the model declares no rate k")
        steps = max(1, round(3.0 / float(k) / p["chain_dt"]))
        p["t_chain"] = steps * p["chain_dt"]
    if p["projection"] is not None and any(not 0 <= c < d for c in p["projection"]):
        raise ConfigurationError(f"projection indices must lie in [0, {d})")
    if cfg.levy is not None and cfg.levy["dim"] is None:
        cfg.levy["dim"] = d if model.name != "levy-dissipative" else 2
    return cfg


# ------------------------------------------------------------ CSV helpers

def _f(v):
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_cell(v) for v in r) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else _f(v)
    return str(v)


class _Run:
    def __init__(self, cfg, model, levy, out, plot, report):
        self.cfg, self.p, self.model, self.levy = cfg, cfg.params, model, levy
        self.out, self.plot, self.report = out, plot, report

    def path(self, name):
        self.report.artifacts.append(name)
        return os.path.join(self.out, name)

    def stage(self, name):
        self.report.stage = name


# ------------------------------------------------------------ experiments

def _simulate(r: _Run):
    from .integrate import euler_batch, exact_e1_batch, n_steps_for
    p, model = r.p, r.model
    n_steps = n_steps_for(p["horizon"], p["dt"])
    save = list(range(0, n_steps + 1, p["save_every"]))
    if save[-1] != n_steps:
        save.append(n_steps)
    r.stage("simulate")
    if p["scheme"] == "exact_e1":
        from .errors import ConfigurationError
        if model.name != "example-e1":
            raise ConfigurationError("scheme exact_e1 needs model example-e1")
        full = exact_e1_batch(model.params["k"], model.params["sigma"], p["x0"], p["horizon"],
                              n_steps, p["n_paths"], p["seed"])
        states = full.states[:, save, :]
        div = full.diverged
    else:
        b = euler_batch(model, p["x0"], p["horizon"], p["dt"], p["n_paths"], p["seed"],
                        t_save=[s * p["dt"] for s in save])
        states, div = b.states, b.diverged
    t = np.asarray(save, dtype=float) * p["dt"]
    r.stage("write")
    d = model.dim
    cols = [f"x{i + 1}" for i in range(d)]
    n_write = min(p["write_paths"], p["n_paths"])
    write_csv(r.path("paths.csv"), ["path", "t"] + cols,
              ([i, t[j]] + list(states[i, j]) for i in range(n_write) for j in range(len(t))))
    ok = ~div
    mean = states[ok].mean(axis=0) if ok.any() else np.full((len(t), d), np.nan)
    var = states[ok].var(axis=0, ddof=1) if ok.sum() > 1 else np.full((len(t), d), np.nan)
    write_csv(r.path("paths_summary.csv"),
              ["t"] + [f"mean_{c}" for c in cols] + [f"var_{c}" for c in cols],
              ([t[j]] + list(mean[j]) + list(var[j]) for j in range(len(t))))
    if r.plot:
        from .plotting import path_figure
        shown = states[: min(5, n_write)]
        for c in range(d):
            path_figure(r.path(f"paths_x{c + 1}.svg"), t, shown, f"x{c + 1} along sample paths",
                        "paths.csv", coord=c)
    nd = int(div.sum())
    r.report.summary.update({"n_paths": p["n_paths"], "n_diverged": nd,
                             "terminal_mean": mean[-1]})
    r.report.verdict("no_divergence", nd == 0, n_diverged=nd)


def _couple(r: _Run):
    from .coupling import coupled_chain_run, coupling_time_tail, synchronous_pair_batch
    p, model = r.p, r.model
    if model.dissipativity_k is not None:
        r.stage("synchronous")
        n = int(round(p["horizon"] / p["dt"]))
        save = [s * p["dt"] for s in range(0, n + 1, p["save_every"])]
        _, _, sync = synchronous_pair_batch(model, p["x0"], p["y0"], p["horizon"], p["dt"],
                                            p["n_paths"], rng.derive_seed(p["seed"], 1),
                                            t_save=save)
        write_csv(r.path("sync.csv"), ["t", "max_ratio"], zip(save, sync.per_time))
        r.report.summary["synchronous"] = {"statistic": sync.statistic, "k": sync.k,
                                           "observed_rate": sync.observed_rate}
        r.report.verdict("synchronous_contraction", sync.passed, statistic=sync.statistic,
                         bound=sync.bound)
    else:
        r.report.summary["synchronous"] = "skipped: model declares no dissipativity rate"
    r.stage("coupled-chain")
    run = coupled_chain_run(model, p["x0"], p["y0"], p["t_chain"], p["r_star"], p["delta"],
                            p["max_steps"], p["n_trials"], p["chain_dt"],
                            rng.derive_seed(p["seed"], 2), p["bins"], p["n_kernel"], record=False)
    r.stage("tail-fit")
    tail, note = None, ""
    try:
        tail = coupling_time_tail(run, p["theta"])
    except (FitError, SampleSizeError) as exc:
        note = str(exc)
    r.stage("write")
    run.to_csv(r.path("coupling.csv"))
    summ = {"trials": run.trials, "coupled_fraction": run.coupled_fraction,
            "censored_fraction": run.censored_fraction, "p_hat": run.p_hat,
            "attempts": run.attempts, "successes": run.successes, "t_chain": run.t_chain,
            "p_fit": None, "slope": None, "slope_ci_lo": None, "slope_ci_hi": None,
            "theta": None, "exp_moment": None, "exp_moment_se": None}
    if tail is not None and not tail.point_mass:
        summ.update({"p_fit": tail.p_fit, "slope": tail.slope, "slope_ci_lo": tail.slope_ci[0],
                     "slope_ci_hi": tail.slope_ci[1], "theta": tail.theta,
                     "exp_moment": tail.exp_moment, "exp_moment_se": tail.exp_moment_se})
    elif tail is not None:
        note = "coupling time is a point mass; no tail to fit"
    write_csv(r.path("coupling_summary.csv"), ["key", "value"],
              ([k, "" if v is None else v] for k, v in summ.items()))
    tau = run.tau_samples
    grid = np.arange(0, run.cap + 1)
    surv = np.array([np.mean(tau > k) for k in grid])
    write_csv(r.path("coupling_survival.csv"), ["n", "survival"], zip(grid, surv))
    if r.plot:
        from .plotting import line_figure
        line_figure(r.path("coupling_survival.svg"), grid, {"P(tau > n)": surv},
                    "coupling-time survival", "chain steps n", "P(tau > n)",
                    "coupling_survival.csv", logy=True)
    r.report.summary["chain"] = summ
    if note:
        r.report.summary["tail_note"] = note
    r.report.verdict("coupling", run.coupled_fraction >= p["min_coupled_fraction"],
                     coupled_fraction=run.coupled_fraction,
                     threshold=p["min_coupled_fraction"])


def _tv_decay(r: _Run):
    from .ergodicity import fit_decay, tv_curve
    p, model = r.p, r.model
    r.stage("tv-curve")
    curve = tv_curve(model, p["x0"], p["y0"], p["times"], p["n_paths"], p["dt"], p["bins"],
                     p["seed"], p["projection"], p["tv_method"])
    r.stage("write")
    curve.to_csv(r.path("tv_curve.csv"))
    if r.plot:
        from .plotting import line_figure
        line_figure(r.path("tv_curve.svg"), curve.times, {"tv_hat": curve.tv_hat},
                    "total variation decay", "t", "TV", "tv_curve.csv", logy=True)
    r.stage("fit")
    r.report.summary["method"] = curve.method
    try:
        theta, c, _ = fit_decay(curve.times, curve.tv_hat, None, tuple(p["window"]))
    except FitError as exc:
        r.report.verdict("decay", False, reason=str(exc))
        return
    r.report.summary.update({"theta_hat": theta, "c_hat": c})
    r.report.verdict("decay", theta > 0, theta_hat=theta)


def _lyapunov_for(model, t_star):
    from .model import e1_lyapunov, quadratic_lyapunov
    return e1_lyapunov(t_star) if model.name == "example-e1" else quadratic_lyapunov(t_star)


def _drift_check(r: _Run):
    from .ergodicity import (drift_fit, e1_explicit_bound, e1_sharp_bound,
                             explicit_bound_constant, lyapunov_iterate_check)
    p, model = r.p, r.model
    lyap = _lyapunov_for(model, p["t_star"])
    r.stage("drift-fit")
    fit = drift_fit(model, lyap, p["grid"], p["n_paths"], p["dt"], p["seed"])
    r.stage("write")
    fit.to_csv(r.path("drift_fit.csv"))
    if r.plot:
        from .plotting import scatter_figure
        scatter_figure(r.path("drift_fit.svg"), fit.v0, fit.estimate, "drift fit",
                       "V(x)", "E V(X_t*)", "drift_fit.csv", diagonal=True)
    r.report.summary.update({"alpha_hat": fit.alpha_hat, "alpha_upper": fit.alpha_upper,
                             "beta_hat": fit.beta_hat, "lyapunov": lyap.description})
    r.report.verdict("drift_inequality", fit.passed, alpha_upper=fit.alpha_upper)
    if model.name == "example-e1":
        k = model.params["k"]
        c_final, _ = explicit_bound_constant(fit, e1_explicit_bound(k, p["t_star"]))
        c_sharp, _ = explicit_bound_constant(fit, e1_sharp_bound(k, p["t_star"]))
        r.report.summary["explicit_bound_c"] = {"final_form": c_final, "penultimate_form": c_sharp}
    if fit.passed and fit.alpha_hat < 1.0:
        r.stage("iterates")
        it = lyapunov_iterate_check(fit, model, lyap, p["iterate_point"], p["k_steps"],
                                    p["n_paths"], rng.derive_seed(p["seed"], 1))
        write_csv(r.path("iterates.csv"), ["step", "estimate", "se", "bound"],
                  zip(it.steps, it.estimate, it.se, it.bound))
        r.report.verdict("iterates", it.passed)


def _rank_check(r: _Run):
    from .hypoellipticity import rank_grid
    p, model = r.p, r.model
    r.stage("rank")
    rows = rank_grid(model, p["rank_points"], p["depth"], p["derivative_mode"],
                     strict_paper_columns=p["strict_paper_columns"])
    r.stage("write")
    write_csv(r.path("rank_check.csv"), ["point", "depth", "rank", "satisfied"],
              ((";".join(_f(v) for v in x), dep, rk, ok) for x, dep, rk, ok in rows))
    bad = [x.tolist() for x, _, _, ok in rows if not ok]
    r.report.summary.update({"points": len(rows), "unsatisfied": bad})
    r.report.verdict("rank_condition", not bad, n_unsatisfied=len(bad))


def _orey_check(r: _Run):
    from .errors import ConfigurationError
    from .noise import orey_ratio
    if r.levy is None:
        raise ConfigurationError("orey-check needs a levy block (or a Levy-driven model)")
    r.stage("orey")
    res = orey_ratio(r.levy, r.p["eps_list"], seed=rng.derive_seed(r.p["seed"], 3))
    r.stage("write")
    write_csv(r.path("orey.csv"), ["eps", "ratio", "error"], zip(res.eps, res.ratios, res.errors))
    r.report.summary.update({"eps": res.eps, "ratios": res.ratios})
    r.report.verdict("orey_converging", res.converging, last_ratio=res.ratios[-1])


def _invariant_check(r: _Run):
    from .ergodicity import invariant_agreement
    p = r.p
    r.stage("invariant")
    rep = invariant_agreement(r.model, p["starts"], p["t_burn"], p["n_paths"], p["dt"], p["bins"],
                              p["seed"], p["projection"], p["tol"])
    r.stage("write")
    n = len(rep.starts)
    write_csv(r.path("invariant.csv"), ["i", "j", "tv", "se"],
              ((i, j, rep.tv[i, j], rep.se[i, j]) for i in range(n) for j in range(i + 1, n)))
    r.report.summary["max_tv"] = float(rep.tv.max())
    r.report.verdict("invariant_agreement", rep.passed, max_tv=float(rep.tv.max()), tol=rep.tol)


_DISPATCH = {"simulate": _simulate, "couple": _couple, "tv-decay": _tv_decay,
             "drift-check": _drift_check, "rank-check": _rank_check, "orey-check": _orey_check,
             "invariant-check": _invariant_check}


def run_experiment(cfg: ExperimentConfig, out_dir=None, plot=None) -> RunReport:
    """Run the configured experiment and write its artifacts and report.

    Errors are caught and recorded with the stage that raised them; the
    report is written in every case.
    """
    out = out_dir or cfg.output
    plot = cfg.params["plot"] if plot is None else plot
    report = RunReport(cfg.experiment, config=cfg.to_dict())
    t0 = time.perf_counter()
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        report.error = f"cannot create output directory: {exc}"
        report.wall_time = time.perf_counter() - t0
        return report
    try:
        report.stage = "build-model"
        model, levy = build_model(cfg)
        cfg = resolve(cfg, model)
        cfg.params["output"] = out
        cfg.params["plot"] = bool(plot)
        report.config = cfg.to_dict()
        report.stage = "write-config"
        with open(os.path.join(out, "resolved_config.yaml"), "w", encoding="utf-8") as fh:
            fh.write(emit(cfg))
        report.artifacts.append("resolved_config.yaml")
        report.stage = cfg.experiment
        _DISPATCH[cfg.experiment](_Run(cfg, model, levy, out, plot, report))
        report.stage = "done"
    except ErgokitError as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # unexpected failures still produce a report
        report.error = f"{type(exc).__name__}: {exc}"
        report.summary["traceback"] = traceback.format_exc()
    report.wall_time = time.perf_counter() - t0
    report.artifacts.append("report.json")
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")
    return report


def _parser():
    ap = argparse.ArgumentParser(prog="ergokit", description="Coupling and ergodicity "
                                 "experiments for SDEs on R^d.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="YAML experiment config")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    ap.add_argument("--plot", action="store_true", help="write SVG figures")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ErgokitError, OSError) as exc:
        print(f"ergokit: {exc}", file=sys.stderr)
        out = args.out
        if out:
            # a report is still written, naming the parse stage
            os.makedirs(out, exist_ok=True)
            rep = RunReport(args.experiment, stage="parse", error=f"{type(exc).__name__}: {exc}")
            rep.artifacts.append("report.json")
            with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
                json.dump(rep.to_dict(), fh, indent=2)
                fh.write("\n")
        return EXIT_ERROR
    cfg.experiment = args.experiment
    if args.seed is not None:
        cfg.params["seed"] = int(args.seed) & (2 ** 64 - 1)
    report = run_experiment(cfg, args.out, True if args.plot else None)
    for name, v in report.verdicts.items():
        print(f"{name}: {'PASS' if v['passed'] else 'FAIL'}")
    if report.error:
        print(f"ergokit: error in stage {report.stage}: {report.error}", file=sys.stderr)
    out = args.out or cfg.output
    print(f"report: {os.path.join(out, 'report.json')}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
