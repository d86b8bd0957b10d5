"""Command-line front end.

Commands: ``solve``, ``simulate``, ``figure``, ``learn``, ``optimal-m`` and
``rate-region``.  Every output file carries the fully resolved config: CSV
files start with ``# schema=<name>/v<k> config=<json>`` and JSON outputs have
a ``"config"`` member.  Exit codes: 0 success, 2 usage or config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import config as cf
from . import closedform as cfm
from . import dp
from . import hmm
from . import sim
from .channel import episode_rng
from .errors import (
    ArqAccessError,
    ConstructionError,
    DegenerateObservationError,
    InvariantViolation,
    PreconditionError,
    SolverError,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

SCHEMAS = {
    "sweep": ("sweep/v1", sim.SWEEP_COLUMNS),
    "simulate": ("simulate/v1", sim.SWEEP_COLUMNS + ("stderr_p", "stderr_s", "ack_count", "nack_count", "transmit_count", "slots", "version")),
    "mstar": ("mstar/v1", ("w", "M_star", "M_star_infinite", "M_greedy", "M_dp")),
    "region_fig": ("region_points/v1", ("source", "w", "M", "R_p", "R_s", "stderr_p", "stderr_s")),
    "estimation": ("estimation/v1", ("training_length", "seeds", "median_abs_err_P00", "median_abs_err_P10", "mean_abs_err_P00", "mean_abs_err_P10")),
    "degradation": ("degradation/v1", ("w", "training_length", "seeds", "R_true", "R_est_mean", "degradation_mean", "degradation_stderr")),
    "optimal_m": ("optimal_m/v1", ("w", "M_star", "R_p", "R_s", "R")),
    "rate_region": ("rate_region/v1", ("M", "R_p", "R_s")),
}


class UsageError(ArqAccessError, ValueError):
    pass


def version_string() -> str:
    return f"v{__version__}"


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    if v is None:
        return ""
    return v


def render_csv(schema: str, rows: Sequence[dict], cfg: dict) -> str:
    name, cols = SCHEMAS[schema]
    buf = io.StringIO()
    buf.write(f"# schema={name} config={cf.dumps(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _write(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def _out(cfg: dict, filename: str) -> str:
    return os.path.join(cfg["output"]["dir"], filename)


# --- helpers ------------------------------------------------------------------


def _models(cfg):
    m1 = cf.build_model(cfg["model"])
    m2 = cf.build_model(cfg["model2"]) if cfg["model2"] is not None else None
    return m1, m2


def _is_erasure(model) -> bool:
    return model.kind == "erasure"


def _base_sim(cfg, policy: sim.PolicySpec, w: float | None = None) -> sim.SimConfig:
    m1, m2 = _models(cfg)
    s = cfg["sim"]
    return sim.SimConfig(
        model=m1, model2=m2, policy=policy, w=float(cfg["solver"]["w"] if w is None else w),
        r_s=float(cfg["solver"]["r_s"]), horizon=int(s["horizon"]), seed=int(cfg["seed"]),
        burn_in=s["burn_in"], replications=int(s["replications"]), init=s["init"], record_trace=bool(s["trace"]),
    )


def _spec(cfg, kind: str, value_grid=None) -> sim.PolicySpec:
    M = cfg["policy"]["M"]
    return sim.PolicySpec(
        kind,
        M=None if (kind != "mpolicy" or M is None) else cf.parse_m(M),
        value_grid=value_grid,
        alpha=float(cfg["solver"]["alpha"]),
        grid_resolution=cfg["solver"]["grid_resolution"],
    )


def _mparams(cfg, w: float) -> cfm.MPolicyParams:
    m = cf.build_model(cfg["model"])
    if not _is_erasure(m):
        raise UsageError("model.preset: this command needs the erasure model")
    return cfm.MPolicyParams(float(m.P[0, 0]), float(m.P[1, 0]), float(w), m.primary_reward, float(cfg["solver"]["r_s"]))


# --- commands -------------------------------------------------------------------


def cmd_solve(cfg: dict, stdout) -> list[str]:
    m1, m2 = _models(cfg)
    params = cf.solver_params(cfg)
    vg = dp.solve(m1, params, m2)
    path = _write(_out(cfg, "policy.json"), json.dumps({"config": cfg, "value_grid": vg.to_dict()}))
    print(f"wrote {path} ({vg.domain} grid, n={vg.resolution}, {vg.iterations} iterations, residual {vg.residual:.2e})", file=stdout)
    if vg.domain == "interval":
        w, r_p, r_s = params.w, m1.primary_reward, params.r_s
        if w * r_p < (1 - w) * r_s:
            print("regime: always transmit (w r_p < (1-w) r_s)", file=stdout)
        rep = dp.extract_threshold(vg, params, m1)
        if isinstance(rep, dp.AllSameActionReport):
            print(f"policy: always {rep.action}", file=stdout)
        else:
            print(f"threshold p_th = {rep.p_th:.6f} (cell {rep.cell[0]:.6f}..{rep.cell[1]:.6f})", file=stdout)
            if rep.lower_bound is not None:
                print(
                    f"analytic bracket ({rep.lower_bound:.6f}, {rep.upper_bound:.6f}) "
                    f"{'holds' if rep.within_bounds() else 'VIOLATED'}",
                    file=stdout,
                )
    return [path]


def _load_policy_file(path: str) -> dp.ValueGrid:
    try:
        with open(path) as fh:
            payload = json.load(fh)
        return dp.ValueGrid.from_dict(payload["value_grid"] if "value_grid" in payload else payload)
    except OSError as exc:
        raise UsageError(f"policy.file: cannot read {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"policy.file: {path} is not a value-grid file ({exc})") from None


def cmd_simulate(cfg: dict, stdout) -> list[str]:
    kind = cfg["policy"]["kind"]
    vg = None
    if cfg["policy"]["file"] is not None:
        if kind != "dp":
            raise UsageError("policy.file: only used with policy.kind = 'dp'")
        vg = _load_policy_file(cfg["policy"]["file"])
    scfg = _base_sim(cfg, _spec(cfg, kind, vg))
    st = sim.simulate(scfg)
    row = {
        "w": scfg.w, "policy": kind, "R_p": st.R_p_hat, "R_s": st.R_s_hat, "R": st.R_hat, "stderr_R": st.stderr,
        "horizon": scfg.horizon, "replications": scfg.replications, "seed": scfg.seed,
        "stderr_p": st.stderr_p, "stderr_s": st.stderr_s, "ack_count": st.ack_count, "nack_count": st.nack_count,
        "transmit_count": st.transmit_count, "slots": st.slots, "version": version_string(),
    }
    paths = [_write(_out(cfg, "simulate.csv"), render_csv("simulate", [row], cfg))]
    if scfg.record_trace:
        buf = io.StringIO()
        sim.write_trace_ndjson(st, buf)
        paths.append(_write(_out(cfg, "trace.ndjson"), buf.getvalue()))
    print(f"R_p={st.R_p_hat:.6f} R_s={st.R_s_hat:.6f} R={st.R_hat:.6f} +/- {st.stderr:.2e}", file=stdout)
    return paths


def cmd_optimal_m(cfg: dict, stdout) -> list[str]:
    rows = []
    for w in cfg["w_grid"]:
        prm = _mparams(cfg, w)
        m = cfm.optimal_m(prm)
        ev = cfm.evaluate_m_policy(m, prm)
        rows.append({"w": float(w), "M_star": m if math.isinf(m) else int(m), "R_p": ev.R_p, "R_s": ev.R_s, "R": ev.R})
        print(f"w={w:g} M*={'inf' if math.isinf(m) else int(m)} R={ev.R:.6f}", file=stdout)
    return [_write(_out(cfg, "optimal_m.csv"), render_csv("optimal_m", rows, cfg))]


def cmd_rate_region(cfg: dict, stdout) -> list[str]:
    prm = _mparams(cfg, 1.0)
    Ms = [cf.parse_m(m) for m in cfg["M_list"]]
    reg = cfm.rate_region(prm.p_ee, prm.p_ne, Ms, prm.r_p, prm.r_s)
    rows = [{"M": m if math.isinf(m) else int(m), "R_p": a, "R_s": b} for m, a, b in zip(reg.M, reg.R_p, reg.R_s)]
    print(f"{len(rows)} rate-region points", file=stdout)
    return [_write(_out(cfg, "rate_region.csv"), render_csv("rate_region", rows, cfg))]


def _training_traces(cfg, model, seed: int):
    tr = cfg["training"]
    rng = episode_rng(seed, 0)
    if tr["trace_file"] is not None:
        obs = _read_trace(tr["trace_file"], "training.trace_file")
    else:
        obs, _, last = hmm.generate_observations(model, int(tr["length"]), rng)
    second = None
    if model.kind == "three_state":
        if tr["transmit_trace_file"] is not None:
            second = _read_trace(tr["transmit_trace_file"], "training.transmit_trace_file")
        else:
            start = None if tr["trace_file"] is not None else last
            second, _, _ = hmm.generate_observations(model, int(tr["transmit_length"]), rng, True, start)
    return obs, second


def _read_trace(path: str, field: str) -> hmm.ObservationSequence:
    try:
        with open(path) as fh:
            return hmm.read_trace(fh)
    except OSError as exc:
        raise UsageError(f"{field}: cannot read {path}: {exc.strerror}") from None
    except ConstructionError as exc:
        raise UsageError(f"{field}: {exc}") from None


def cmd_learn(cfg: dict, stdout) -> list[str]:
    model = cf.build_model(cfg["model"])
    spec = hmm.HmmSpec.from_model(model)
    tr = cfg["training"]
    fits = []
    n_seeds = 1 if tr["trace_file"] is not None else int(tr["seeds"])
    for k in range(n_seeds):
        seed = int(cfg["seed"]) + k
        obs, second = _training_traces(cfg, model, seed)
        if second is not None:
            p1, f = hmm.train_three_state_two_phase(
                obs, second, spec, tr["tol"], tr["max_iter"], phase2=tr["phase2"], n_starts=tr["n_starts"], seed=seed
            )
            est, perm = hmm.align_states(f.transitions_hat.rows, model.P, spec)
            extra = {"phase1": p1.to_dict(), "aligned_permutation": list(perm)}
        else:
            f = hmm.fit(obs, spec, tr["n_starts"], seed, tr["tol"], tr["max_iter"])
            est, extra = f.transitions_hat.rows, {}
        err = np.abs(est - model.P)
        fits.append({
            "seed": seed, **f.to_dict(), "aligned_transitions": est.tolist(),
            "abs_error": err.tolist(), "row_l1_error": hmm.row_l1_error(est, model.P), **extra,
        })
        print(f"seed {seed}: log-likelihood {f.log_likelihood:.4f}, row L1 error {fits[-1]['row_l1_error']:.4g}", file=stdout)
    payload = {"config": cfg, "version": version_string(), "true_transitions": model.P.tolist(), "fits": fits}
    return [_write(_out(cfg, "fit.json"), json.dumps(payload))]


# --- figures ---------------------------------------------------------------------


def _fig_sweep(cfg, stdout):
    base = _base_sim(cfg, sim.PolicySpec("always_listen"))
    kinds = [_spec(cfg, k) for k in cfg["policies"]]
    rows = sim.sweep_weights(base, cfg["w_grid"], kinds)
    return "sweep", rows


def _fig5(cfg, stdout):
    m = cf.build_model(cfg["model"])
    rows = []
    for w in cfg["w_grid"]:
        prm = _mparams(cfg, w)
        mstar = cfm.optimal_m(prm)
        mg = cfm.greedy_m(prm)
        vg = dp.solve(m, cf.solver_params(cfg, w))
        mdp = dp.effective_m(vg, m)
        rows.append({
            "w": float(w), "M_star": mstar, "M_star_infinite": int(math.isinf(mstar)),
            "M_greedy": mg, "M_dp": mdp,
        })
    return "mstar", rows


def _fig6(cfg, stdout):
    prm = _mparams(cfg, 1.0)
    base = _base_sim(cfg, sim.PolicySpec("mpolicy"))
    rows = []
    mstars = {}
    for w in cfg["w_grid"]:
        mstars[float(w)] = cfm.optimal_m(_mparams(cfg, w))
    reg = cfm.rate_region(prm.p_ee, prm.p_ne, set(mstars.values()), prm.r_p, prm.r_s)
    for m, a, b in zip(reg.M, reg.R_p, reg.R_s):
        rows.append({"source": "analytic", "M": m, "R_p": a, "R_s": b})
    for pt in sim.empirical_rate_region(base, cfg["w_grid"]):
        rows.append({"source": "empirical", **pt})
    return "region_fig", rows


def _estimation(cfg, stdout):
    model = cf.build_model(cfg["model"])
    if model.s != 2:
        raise UsageError("model.preset: estimation figures need a two-state model")
    spec = hmm.HmmSpec.from_model(model)
    tr = cfg["training"]
    rows = []
    for L in tr["lengths"]:
        errs = []
        for k in range(int(tr["seeds"])):
            seed = int(cfg["seed"]) + k
            obs, _, _ = hmm.generate_observations(model, int(L), episode_rng(seed, 0))
            A = hmm.fit(obs, spec, tr["n_starts"], seed, tr["tol"], tr["max_iter"]).transitions_hat.rows
            errs.append((abs(A[0, 0] - model.P[0, 0]), abs(A[1, 0] - model.P[1, 0])))
        e = np.array(errs)
        med, mean = np.median(e, axis=0), e.mean(axis=0)
        rows.append({
            "training_length": int(L), "seeds": len(errs),
            "median_abs_err_P00": float(med[0]), "median_abs_err_P10": float(med[1]),
            "mean_abs_err_P00": float(mean[0]), "mean_abs_err_P10": float(mean[1]),
        })
    return "estimation", rows


def _degradation_rows(cfg, lengths, w_grid):
    model = cf.build_model(cfg["model"])
    tr = cfg["training"]
    rows = []
    for L in lengths:
        per_seed = [
            hmm.degradation_experiment(
                model, int(L), w_grid, seed=int(cfg["seed"]) + k, r_s=float(cfg["solver"]["r_s"]),
                n_starts=tr["n_starts"], tol=tr["tol"], max_iter=tr["max_iter"],
            )
            for k in range(int(tr["seeds"]))
        ]
        for j, w in enumerate(w_grid):
            d = np.array([r[j]["degradation"] for r in per_seed])
            rows.append({
                "w": float(w), "training_length": int(L), "seeds": len(d),
                "R_true": per_seed[0][j]["R_true"],
                "R_est_mean": float(np.mean([r[j]["R_est"] for r in per_seed])),
                "degradation_mean": float(d.mean()),
                "degradation_stderr": float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else math.nan,
            })
    return rows


def _fig11(cfg, stdout):
    return "degradation", _degradation_rows(cfg, cfg["training"]["lengths"], cfg["w_grid"])


def _fig12(cfg, stdout):
    return "degradation", _degradation_rows(cfg, cfg["training"]["lengths"], [float(cfg["solver"]["w"])])


@dataclass(frozen=True)
class Figure:
    run: Callable
    layer: dict
    about: str


_ERASURE = {"preset": "erasure", "p_ee": 0.99, "p_ne": 0.01, "r_p": 1.0}

FIGURES = {
    "fig4": Figure(_fig_sweep, {"model": _ERASURE}, "two-state weighted throughput vs w (dp, greedy, genie)"),
    "fig5": Figure(_fig5, {"model": _ERASURE, "w_grid": [round(0.05 * i, 10) for i in range(21)]}, "M* vs w"),
    "fig6": Figure(_fig6, {"model": _ERASURE, "w_grid": [round(0.05 * i, 10) for i in range(21)]}, "rate region"),
    "fig7": Figure(_fig_sweep, {"model": {"preset": "three_state"}}, "three-state throughput vs w"),
    "fig8": Figure(_fig_sweep, {"model": _ERASURE, "model2": _ERASURE}, "two-channel throughput vs w"),
    "fig9": Figure(_fig_sweep, {"model": {"preset": "gilbert_elliot"}}, "Gilbert-Elliot throughput vs w"),
    "fig10": Figure(_estimation, {"model": _ERASURE, "training": {"seeds": 32}}, "estimation error vs trace length"),
    "fig11": Figure(_fig11, {"model": _ERASURE, "training": {"lengths": [30, 100], "seeds": 32}}, "degradation vs w"),
    "fig12": Figure(_fig12, {"model": _ERASURE, "training": {"seeds": 32}}, "degradation vs trace length at one w"),
    "fig13": Figure(_estimation, {"model": {"preset": "gilbert_elliot"}, "training": {"seeds": 32}}, "Gilbert-Elliot estimation error vs trace length"),
}


def cmd_figure(name: str, cfg: dict, stdout) -> list[str]:
    schema, rows = FIGURES[name].run(cfg, stdout)
    path = _write(_out(cfg, f"{name}.csv"), render_csv(schema, rows, cfg))
    print(f"wrote {path} ({len(rows)} rows)", file=stdout)
    return [path]


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arqaccess", description="Secondary access policies from overheard ARQ feedback.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dotted path (repeatable)")
        return p

    common(sub.add_parser("solve", help="solve the belief-space Bellman equation and save the policy"))
    common(sub.add_parser("simulate", help="Monte Carlo run of one policy"))
    fig = common(sub.add_parser("figure", help="emit the data series of a figure"))
    fig.add_argument("name", help=f"one of {', '.join(FIGURES)}")
    common(sub.add_parser("learn", help="fit transition probabilities from ARQ traces"))
    common(sub.add_parser("optimal-m", help="optimal burst length per weight"))
    common(sub.add_parser("rate-region", help="closed-form rate-region points"))
    return parser


def _resolve(args, layers=()) -> dict:
    user = cf.load(args.config) if args.config else None
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    return cf.resolve(user, overrides, layers)


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "figure":
            if args.name not in FIGURES:
                raise UsageError(f"figure: unknown name {args.name!r}; valid names: {', '.join(FIGURES)}")
            cfg = _resolve(args, [FIGURES[args.name].layer])
            cmd_figure(args.name, cfg, stdout)
        else:
            cfg = _resolve(args)
            {
                "solve": cmd_solve,
                "simulate": cmd_simulate,
                "learn": cmd_learn,
                "optimal-m": cmd_optimal_m,
                "rate-region": cmd_rate_region,
            }[args.command](cfg, stdout)
    except (SolverError, InvariantViolation, DegenerateObservationError) as exc:
        print(f"error: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except (cf.ConfigError, UsageError, ConstructionError, PreconditionError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())
