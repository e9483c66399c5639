"""Command-line benchmark harness: fit, two-stage, table sweeps, corruption,
and self-checks.

Exit codes: 0 success, 1 numeric failure, 2 usage error.  The env var
ROBUSTPINN_THREADS caps the sweep worker pool.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corruption import CorruptionSpec, corrupt, parse_corruption
from .jets import jet_space
from .losses import LossConfig, build_total_loss
from .network import LayerSpec, forward_coeffs, init_params, save_checkpoint
from .optimizers import AdamConfig, LbfgsConfig
from .pipeline import (
    FilterSpec,
    TrainConfig,
    train_single_stage,
    train_two_stage,
)
from .problems import (
    PROBLEMS,
    get_problem,
    load_reference_csv,
    predict_fields,
    save_observations_csv,
)

USAGE_ERROR = 2
NUMERIC_ERROR = 1


class UsageError(ValueError):
    pass


def _worker_count() -> int:
    raw = os.environ.get("ROBUSTPINN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"ROBUSTPINN_THREADS must be an integer, got {raw!r}")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path}: top level must be an object")
    return cfg


def _merged_value(args, config, key, default=None):
    cli = getattr(args, key.replace("-", "_"), None)
    if cli is not None:
        return cli
    return config.get(key, default)


def _train_config(args, config: dict, seed: int) -> TrainConfig:
    widths = _merged_value(args, config, "widths")
    if isinstance(widths, str):
        widths = tuple(int(w) for w in widths.split(","))
    elif widths is not None:
        widths = tuple(int(w) for w in widths)
    omega = float(_merged_value(args, config, "omega", 1.0))
    loss = LossConfig(data_loss="lad", omega=omega)
    adam = AdamConfig(
        lr=float(_merged_value(args, config, "adam_lr", 1e-3)),
        iterations=int(_merged_value(args, config, "adam_iterations", 5000)),
        record_every=int(_merged_value(args, config, "record_every", 100)),
    )
    lbfgs = LbfgsConfig(
        max_iterations=int(_merged_value(args, config, "lbfgs_iterations", 800)),
    )
    colloc = _merged_value(args, config, "collocation")
    return TrainConfig(
        loss=loss,
        adam=adam,
        lbfgs=lbfgs,
        seed=seed,
        widths=widths,
        collocation_size=None if colloc is None else int(colloc),
        warm_start=getattr(args, "warm_start", None),
        stage2_burst_steps=int(_merged_value(args, config, "burst_steps", 500)),
        stage2_burst_lr=_merged_value(args, config, "burst_lr"),
        stage2_adam_iterations=_merged_value(args, config, "stage2_adam_iterations"),
    )


DATA_SEED_SALT = 0xDA7A


def _data_seeds(seed: int) -> tuple[int, int]:
    """Observation and corruption seeds for a run seed.

    Shared by single fits and sweep cells so any table cell is reproducible
    with an equivalent fit invocation at the cell's run seed.
    """
    seq = np.random.SeedSequence((int(seed), DATA_SEED_SALT))
    return tuple(int(s.generate_state(1)[0]) for s in seq.spawn(2))


def _make_observations(problem, args, config, seed: int):
    """Synthetic observations: sample the reference, then corrupt."""
    obs_seed, corr_seed = _data_seeds(seed)
    data_path = getattr(args, "data", None)
    if data_path:
        obs, _ = load_reference_csv(data_path, domain=problem.domain)
        if obs.values.shape[1] != len(problem.measurement_names):
            raise UsageError(
                f"--data: expected {len(problem.measurement_names)} measurement "
                f"columns, found {obs.values.shape[1]}"
            )
        return obs
    n = int(_merged_value(args, config, "n", 500))
    obs = problem.sample_observations(n, np.random.default_rng(obs_seed))
    text = _merged_value(args, config, "corruption", "clean")
    spurious = float(_merged_value(args, config, "spurious", 10.0))
    spec = parse_corruption(text, spurious_value=spurious, seed=corr_seed)
    return corrupt(obs, spec)


def _write_report(report, problem, out_dir: Path, config_echo: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    payload["config"] = config_echo
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("phase,iteration,total,pde,data\n")
        for row in report.loss_history:
            pde = "" if row["pde"] is None else repr(row["pde"])
            data = "" if row["data"] is None else repr(row["data"])
            fh.write(f"{row['phase']},{row['iteration']},{row['total']!r},{pde},{data}\n")
    save_checkpoint(report.params, out_dir / "checkpoint.txt")
    grid = problem.eval_grid()
    ref = problem.reference(grid)
    names = problem.measurement_names + problem.hidden_fields
    preds = predict_fields(problem, report.params, grid, names=names)
    with open(out_dir / "predictions.csv", "w", encoding="utf-8") as fh:
        header = list(problem.input_names)
        header += [f"pred_{m}" for m in names] + [f"ref_{m}" for m in names]
        fh.write(",".join(header) + "\n")
        cols = [grid[:, i] for i in range(grid.shape[1])]
        cols += [preds[m] for m in names] + [ref[m] for m in names]
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_fit(args) -> int:
    config = _load_config(args.config)
    problem_name = _merged_value(args, config, "problem")
    if not problem_name:
        raise UsageError("missing required field: problem")
    if problem_name not in PROBLEMS:
        raise UsageError(f"problem: unknown problem {problem_name!r}; choices {sorted(PROBLEMS)}")
    method = str(_merged_value(args, config, "method", "lad")).lower()
    seed = int(_merged_value(args, config, "seed", 0))
    problem = get_problem(problem_name)
    obs = _make_observations(problem, args, config, seed)
    tc = _train_config(args, config, seed)

    if method in ("lad", "ols"):
        from dataclasses import replace

        tc = replace(tc, loss=replace(tc.loss, data_loss=method))
        report = train_single_stage(problem, obs, tc)
    else:
        filt = FilterSpec.parse(method)
        report = train_two_stage(problem, obs, tc, filt)

    out_dir = Path(args.out or f"runs/{problem_name}-{method.replace(':', '_')}-s{seed}")
    echo = {
        "problem": problem_name,
        "method": method,
        "seed": seed,
        "n": len(obs),
        "corruption": _merged_value(args, config, "corruption", "clean"),
        "omega": tc.loss.omega,
    }
    _write_report(report, problem, out_dir, echo)
    lam = " ".join(f"{k}={v:.5g}" for k, v in report.lambda_est.items())
    res = " ".join(f"RE({k})={v * 100:.3f}%" for k, v in report.re.items())
    relp = "" if report.rel_p is None else f" rel_p={report.rel_p * 100:.3f}%"
    print(f"{problem_name} {method} seed={seed}: {res}{relp} {lam}")
    print(f"wrote {out_dir}/report.json")
    return 0 if report.error is None else NUMERIC_ERROR


def cmd_two_stage(args) -> int:
    args.method = args.filter
    return cmd_fit(args)


# ---------------------------------------------------------------------------
# table sweeps
# ---------------------------------------------------------------------------


def _cell_metric(report, metric: str):
    if metric == "rel_p":
        return report.rel_p
    if metric.startswith("lambda:"):
        return report.lambda_err.get(metric.split(":", 1)[1])
    return report.re.get(metric)


def run_cell(payload: dict):
    """One sweep cell: fully seeded, safe to run in a worker process."""
    problem = get_problem(payload["problem"])
    obs_seed, corr_seed = _data_seeds(payload["run_seed"])
    obs = problem.sample_observations(payload["n"], np.random.default_rng(obs_seed))
    spec = CorruptionSpec(
        payload["corruption"],
        payload["alpha"],
        payload.get("spurious", 10.0),
        corr_seed,
    )
    obs = corrupt(obs, spec)
    tc = TrainConfig(
        loss=LossConfig(data_loss="lad", omega=payload.get("omega", 1.0)),
        adam=AdamConfig(
            lr=payload.get("adam_lr", 1e-3),
            iterations=payload.get("adam_iterations", 5000),
            record_every=payload.get("record_every", 500),
        ),
        lbfgs=LbfgsConfig(max_iterations=payload.get("lbfgs_iterations", 800)),
        seed=payload["run_seed"],
        widths=tuple(payload["widths"]) if payload.get("widths") else None,
        collocation_size=payload.get("collocation"),
        stage2_adam_iterations=payload.get("stage2_adam_iterations"),
    )
    method = payload["method"]
    from dataclasses import replace

    try:
        if method in ("lad", "ols"):
            tc = replace(tc, loss=replace(tc.loss, data_loss=method))
            report = train_single_stage(problem, obs, tc)
        else:
            report = train_two_stage(problem, obs, tc, FilterSpec.parse(method))
        value = _cell_metric(report, payload.get("metric", problem.measurement_names[0]))
        return {**payload, "value": value, "error": report.error,
                "wall_time": report.wall_time}
    except Exception as exc:  # sweep keeps going; the cell records its failure
        return {**payload, "value": None, "error": f"{type(exc).__name__}: {exc}",
                "wall_time": None}


def cmd_table(args) -> int:
    config = _load_config(args.config)
    for key in ("problem", "methods", "corruptions", "seeds"):
        if key not in config:
            raise UsageError(f"table config: missing required field: {key}")
    problem_name = config["problem"]
    if problem_name not in PROBLEMS:
        raise UsageError(f"problem: unknown problem {problem_name!r}")
    alphas = config.get("alphas")
    sizes = config.get("sizes")
    if (alphas is None) == (sizes is None):
        raise UsageError("table config: provide exactly one sweep axis, 'alphas' or 'sizes'")
    sweep_name, sweep = ("alpha", alphas) if alphas else ("n", sizes)

    cells = []
    index = 0
    for sweep_value in sweep:
        for corruption in config["corruptions"]:
            for method in config["methods"]:
                for seed in config["seeds"]:
                    run_seed = int(
                        np.random.SeedSequence((int(seed), index)).generate_state(1)[0]
                    )
                    alpha = float(sweep_value) if sweep_name == "alpha" else config.get("alpha", 0.2)
                    if corruption == "clean":
                        alpha = 0.0
                    cells.append(
                        {
                            "problem": problem_name,
                            "method": str(method).lower(),
                            "corruption": corruption,
                            "alpha": alpha,
                            "n": int(sweep_value) if sweep_name == "n" else int(config.get("n", 500)),
                            "sweep": sweep_value,
                            "cell_index": index,
                            "seed": int(seed),
                            "run_seed": run_seed,
                            **{
                                k: config[k]
                                for k in (
                                    "omega", "widths", "adam_iterations", "adam_lr",
                                    "lbfgs_iterations", "collocation", "spurious",
                                    "metric", "stage2_adam_iterations", "record_every",
                                )
                                if k in config
                            },
                        }
                    )
                index += 1

    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    out_dir = Path(args.out or "tables")
    out_dir.mkdir(parents=True, exist_ok=True)
    name = config.get("name", f"{problem_name}_{sweep_name}")
    with open(out_dir / f"{name}_cells.csv", "w", encoding="utf-8") as fh:
        fh.write(f"{sweep_name},corruption,method,seed,run_seed,value,wall_time,error\n")
        for r in results:
            val = "" if r["value"] is None else repr(r["value"])
            wt = "" if r["wall_time"] is None else f"{r['wall_time']:.2f}"
            err = (r["error"] or "").replace(",", ";")
            fh.write(
                f"{r['sweep']},{r['corruption']},{r['method']},{r['seed']},"
                f"{r['run_seed']},{val},{wt},{err}\n"
            )

    # mean/std per cell, laid out like the published tables: one row per
    # (sweep value, method), one column per corruption kind
    kinds = list(config["corruptions"])
    rows = {}
    for r in results:
        key = (r["sweep"], r["method"])
        rows.setdefault(key, {k: [] for k in kinds})
        if r["value"] is not None:
            rows[key][r["corruption"]].append(100.0 * r["value"])
    for suffix, agg in (("", np.mean), ("_std", np.std)):
        with open(out_dir / f"{name}{suffix or '_mean'}.csv", "w", encoding="utf-8") as fh:
            fh.write(f"{sweep_name},method," + ",".join(kinds) + "\n")
            for (sweep_value, method), cols in rows.items():
                vals = [
                    f"{agg(cols[k]):.3f}" if cols[k] else "nan" for k in kinds
                ]
                fh.write(f"{sweep_value},{method}," + ",".join(vals) + "\n")
    print(f"wrote {out_dir}/{name}_mean.csv ({len(results)} runs)")
    failures = [r for r in results if r["value"] is None]
    return NUMERIC_ERROR if failures else 0


def cmd_corrupt(args) -> int:
    obs, ref = load_reference_csv(args.input)
    spec = parse_corruption(args.corruption, spurious_value=args.spurious, seed=args.seed)
    out = corrupt(obs, spec)
    names = ("u", "v")[: out.values.shape[1]]
    inputs = {1: ("x",), 2: ("x", "y"), 3: ("t", "x", "y")}[out.points.shape[1]]
    save_observations_csv(args.output, out.points, inputs, out.values, names,
                          ref={k: v for k, v in ref.items()})
    mask_path = str(args.output) + ".mask"
    with open(mask_path, "w", encoding="utf-8") as fh:
        for idx in np.flatnonzero(out.corrupted_mask):
            fh.write(f"{idx}\n")
    print(f"wrote {args.output} and {mask_path} "
          f"({int(out.corrupted_mask.sum())} corrupted rows)")
    return 0


# ---------------------------------------------------------------------------
# self checks
# ---------------------------------------------------------------------------


def _check_jets_vs_fd() -> tuple[bool, str]:
    from .network import forward

    worst = 0.0
    for widths, order in (((2, 6, 6, 1), 2), ((3, 5, 5, 2), 3)):
        spec = LayerSpec(widths)
        params = init_params(spec, seed=7)
        space = jet_space(spec.input_width, order)
        rng = np.random.default_rng(8)
        for _ in range(12):
            x0 = rng.uniform(-1, 1, size=spec.input_width)
            field = int(rng.integers(spec.output_width))
            pos = int(rng.integers(1, space.size))
            alpha = space.monomials[pos]
            coeffs = forward_coeffs(params.theta, spec, x0[None], space)
            got = coeffs[0, field, pos] * space.factorials[pos]
            want = _nested_fd(lambda p, f=field: forward(params, p)[f], x0, alpha)
            scale = max(abs(got), abs(want), 1e-6)
            worst = max(worst, abs(got - want) / scale)
    ok = worst <= 1e-3
    return ok, f"jet derivatives vs nested finite differences: max rel err {worst:.2e}"


def _nested_fd(f, point, alpha, h=8e-3):
    def raw(fn, pt, al, step):
        al = list(al)
        for i, k in enumerate(al):
            if k > 0:
                al[i] -= 1

                def fi(p, _f=fn, _i=i):
                    e = np.zeros_like(p)
                    e[_i] = step
                    return (_f(p + e) - _f(p - e)) / (2 * step)

                return raw(fi, pt, al, step)
        return fn(pt)

    d1 = raw(f, np.asarray(point, float), alpha, h)
    d2 = raw(f, np.asarray(point, float), alpha, h / 2)
    return (4 * d2 - d1) / 3


def _check_loss_gradients(probes: int, step: float, corrupt_index: int | None,
                          problem_names) -> list[tuple[bool, str]]:
    outcomes = []
    for problem_name in problem_names:
        problem = get_problem(problem_name)
        widths = {
            "poisson": (1, 8, 8, 1),
            "wave": (2, 8, 8, 1),
            "steady_ns": (2, 8, 8, 6),
            "unsteady_ns": (3, 6, 6, 2),
        }[problem_name]
        spec = LayerSpec(widths)
        params = init_params(spec, 11, problem.lambda_names,
                             [0.3] * len(problem.lambda_names))
        obs = problem.sample_observations(40, np.random.default_rng(12))
        noisy_values = obs.values + 0.3  # keep |.| terms away from kinks
        from .problems import ObservationSet

        obs = ObservationSet(obs.points, noisy_values, None, obs.hidden_fields)
        colloc = problem.sample_collocation(50, np.random.default_rng(13))
        for kind in ("lad", "ols"):
            cfg = LossConfig(data_loss=kind)

            def build(p, _cfg=cfg, _obs=obs, _colloc=colloc, _prob=problem):
                return build_total_loss(p, params, _prob, _obs, _colloc, _cfg)

            packed = params.packed()
            override = None
            forced = ()
            if corrupt_index is not None:
                _, grad = ad.loss_gradient(packed, build)
                override = grad.copy()
                forced = (corrupt_index % grad.size,)
                override[forced[0]] += 1.0
            worst, worst_coord = 0.0, -1
            for err, coord in ad.probe_gradient(
                packed, build, probes=probes, step=step,
                rng=np.random.default_rng(14), grad_override=override,
                force_coords=forced,
            ):
                if err > worst:
                    worst, worst_coord = err, coord
            ok = worst <= 1e-4
            msg = (
                f"{problem_name} {kind.upper()} gradient vs finite differences: "
                f"max rel err {worst:.2e}"
            )
            if not ok:
                msg += f" (worst coordinate {worst_coord})"
            outcomes.append((ok, msg))
    return outcomes


def _check_reference_residuals() -> list[tuple[bool, str]]:
    outcomes = []
    for name in PROBLEMS:
        problem = get_problem(name)
        pts = problem.sample_collocation(1000, np.random.default_rng(15))
        res = problem.reference_residual(pts)
        rms = math.sqrt(float(np.mean(np.sum(res**2, axis=1))))
        outcomes.append((rms <= 1e-8, f"{name} reference residual RMS {rms:.2e}"))
    return outcomes


def cmd_check(args) -> int:
    checks: list[tuple[bool, str]] = []
    checks.append(_check_jets_vs_fd())
    problem_names = args.problem or ["poisson"]
    for name in problem_names:
        if name not in PROBLEMS:
            raise UsageError(f"problem: unknown problem {name!r}")
    checks.extend(
        _check_loss_gradients(args.probes, args.step, args.corrupt_gradient, problem_names)
    )
    checks.extend(_check_reference_residuals())
    failed = 0
    for ok, msg in checks:
        print(("PASS" if ok else "FAIL") + f"  {msg}")
        failed += 0 if ok else 1
    return NUMERIC_ERROR if failed else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustpinn",
        description="Robust PINN regression benchmarks on corrupted observations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--problem", help=f"one of {sorted(PROBLEMS)}")
        p.add_argument("--corruption", help="kind or kind:alpha, e.g. outlier:0.2")
        p.add_argument("--n", type=int, help="number of observations")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--omega", type=float, help="PDE-loss weight")
        p.add_argument("--widths", help="comma-separated layer widths")
        p.add_argument("--adam-iterations", type=int)
        p.add_argument("--adam-lr", type=float)
        p.add_argument("--lbfgs-iterations", type=int)
        p.add_argument("--collocation", type=int)
        p.add_argument("--spurious", type=float, help="spurious replacement value")
        p.add_argument("--warm-start", help="checkpoint file to resume from")
        p.add_argument("--data", help="observation CSV instead of synthetic sampling")
        p.add_argument("--out", help="output directory")

    p_fit = sub.add_parser("fit", help="train one single-stage model")
    add_common(p_fit)
    p_fit.add_argument("--method", help="lad or ols", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_two = sub.add_parser("two-stage", help="LAD detect, filter, OLS refit")
    add_common(p_two)
    p_two.add_argument("--filter", required=True, help="fr:K or mad:K")
    p_two.set_defaults(func=cmd_two_stage)

    p_table = sub.add_parser("table", help="sweep a benchmark table from a config")
    p_table.add_argument("--config", required=True)
    p_table.add_argument("--out", help="output directory (default: tables/)")
    p_table.set_defaults(func=cmd_table)

    p_cor = sub.add_parser("corrupt", help="corrupt an observation CSV")
    p_cor.add_argument("--input", required=True)
    p_cor.add_argument("--output", required=True)
    p_cor.add_argument("--corruption", required=True, help="kind:alpha")
    p_cor.add_argument("--spurious", type=float, default=10.0)
    p_cor.add_argument("--seed", type=int, default=0)
    p_cor.set_defaults(func=cmd_corrupt)

    p_check = sub.add_parser("check", help="gradient, jet, and residual self-checks")
    p_check.add_argument("--probes", type=int, default=200)
    p_check.add_argument("--step", type=float, default=1e-5)
    p_check.add_argument("--problem", action="append",
                         help="additional problems for the gradient check (repeatable)")
    p_check.add_argument("--corrupt-gradient", type=int, default=None,
                         help="self-test hook: offset this gradient coordinate "
                              "so the check must fail")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
