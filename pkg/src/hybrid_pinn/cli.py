"""``hybrid-pinn`` command line.

Exit codes: 0 success, 1 invalid input (config, arguments, file contents),
2 numerical divergence or a failed derivative check, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _limit_threads(n: int) -> None:
    # must run before numpy loads its BLAS; the package import below is deferred for that reason
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _say(args, *msg) -> None:
    if not args.quiet:
        print(*msg)


def _parse_vec(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_run(args):
    from .config import ConfigError, parse_config
    if not args.config:
        raise _Fail(EXIT_INVALID, "--config is required")
    path = Path(args.config)
    try:
        cfg, warns = parse_config(path)
    except ConfigError as exc:
        raise _Fail(EXIT_INVALID, "invalid config:\n" + "\n".join(f"  {l}: {m}" for l, m in exc.errors))
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output_dir or f"runs/{cfg.experiment}")
    return cfg, path.parent, seed, out


def _load_model(cfg, model_dir: Path, problem):
    from .network import load_checkpoint
    for region, sub in problem.model.subdomains.items():
        p = model_dir / f"model_{region}.json"
        params, ncfg, _ = load_checkpoint(p)
        sub.params, sub.config = params, ncfg
    return problem.model


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    from .config import build_problem, dump_config
    from .geometry import save_cloud
    from .network import save_checkpoint
    from .trainer import TrainingDiverged, train
    cfg, base, seed, out = _load_run(args)
    problem, tc, cloud = build_problem(cfg, base, seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg.model_copy(update={"seed": seed})))
    save_cloud(cloud, out / "cloud.csv")
    _say(args, f"{cfg.experiment}: {len(cloud)} points, {tc.total_steps} steps, seed {seed}")
    try:
        model, hist = train(problem, tc, out_dir=out / "checkpoints")
    except TrainingDiverged as exc:
        exc.history.to_csv(out / "history.csv")
        raise _Fail(EXIT_DIVERGED, f"training diverged: {exc}; last good parameters saved under {out}")
    hist.to_csv(out / "history.csv")
    for region, sub in model.subdomains.items():
        save_checkpoint(out / f"model_{region}.json", sub.params, sub.config, {"region": region, "seed": seed})
    last = hist.records[-1] if hist.records else {}
    _say(args, f"done; last logged total loss {last.get('total', float('nan')):.4g}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import build_problem, exact_solution
    from .evaluation import compare, line_probe
    import numpy as np
    cfg, base, seed, out = _load_run(args)
    problem, _, cloud = build_problem(cfg, base, seed)
    model = _load_model(cfg, Path(args.model or out), problem)
    ev = cfg.evaluation
    tags = cloud.tags.astype(str)
    keep = np.isin(tags, ev.tags) if ev.tags else np.array([not t.startswith("data") for t in tags])
    if not keep.any():
        raise _Fail(EXIT_INVALID, "evaluation.tags selects no points")
    pred, truth = {}, {}
    regions = list(model.subdomains)
    for region in regions:
        if len(regions) == 1:
            m = keep
        else:
            m = keep & np.array([t.endswith(":" + region) for t in tags])
        if not m.any():
            continue
        x = cloud.points[m]
        p = model.predict(region, x)
        ref = exact_solution(ev.exact)(x) if ev.exact else {k: v[m] for k, v in cloud.fields.items()}
        for k in p:
            if k in ref:
                pred.setdefault(k, []).append(p[k])
                truth.setdefault(k, []).append(np.asarray(ref[k], float))
    if not pred:
        raise _Fail(EXIT_INVALID, "no reference values to compare against (set evaluation.exact or use a cloud"
                                  " with solution columns)")
    rep = compare({k: np.concatenate(v) for k, v in pred.items()},
                  {k: np.concatenate(v) for k, v in truth.items()}, ev.thresholds)
    for pr in ev.probes:
        rep.probes[pr.name] = line_probe(model, pr.start, pr.end, pr.n, pr.region)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "metrics.csv")
    (out / "summary.txt").write_text(rep.summary())
    _say(args, rep.summary())
    return EXIT_OK


def cmd_probe(args) -> int:
    from .config import build_problem
    from .evaluation import line_probe, write_columns
    cfg, base, seed, out = _load_run(args)
    problem, _, _ = build_problem(cfg, base, seed)
    model = _load_model(cfg, Path(args.model or out), problem)
    cols = line_probe(model, args.start, args.end, args.n, args.region)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"probe_{args.name}.csv"
    write_columns(path, cols)
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .geometry import (Axis, DesignSpace, heat_sink_space, maximin_lhs, save_cloud)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    if args.what == "domain":
        from .config import build_cloud
        cfg, base, seed, out = _load_run(args)
        out.mkdir(parents=True, exist_ok=True)
        cloud = build_cloud(cfg, base, seed)
        save_cloud(cloud, out / "cloud.csv")
        _say(args, f"wrote {len(cloud)} points to {out / 'cloud.csv'}")
        return EXIT_OK
    if args.space:
        doc = json.loads(Path(args.space).read_text())
        space = DesignSpace([Axis(a["name"], float(a["lo"]), float(a["hi"]), a.get("unit", "")) for a in doc])
    else:
        space = heat_sink_space()
    table = maximin_lhs(space, args.n, seed=seed, iterations=args.iterations)
    table.save(out / "doe.csv")
    _say(args, f"wrote {args.n} design points to {out / 'doe.csv'}")
    return EXIT_OK


def cmd_sparse_select(args) -> int:
    from .geometry import PointCloud, load_cloud, save_cloud, select_sparse_data
    import numpy as np
    cloud = load_cloud(args.cloud)
    tags = cloud.tags.astype(str)
    nodes = np.array([t.startswith("interior") for t in tags])
    if not nodes.any():
        raise _Fail(EXIT_INVALID, f"{args.cloud} has no interior points to select from")
    data = select_sparse_data(cloud.subset(np.flatnonzero(nodes)), args.fraction, seed=args.seed or 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    merged = PointCloud.concat([cloud, data])
    save_cloud(merged, out / "cloud_sparse.csv")
    _say(args, f"selected {len(data)} of {int(nodes.sum())} nodes as data; wrote {out / 'cloud_sparse.csv'}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    import csv
    import numpy as np
    from .config import build_problem
    from .network import finite_diff_check
    cfg, base, seed, out = _load_run(args)
    problem, _, cloud = build_problem(cfg, base, seed)
    rng = np.random.default_rng(seed)
    rows, worst = [], 0.0
    for region, sub in problem.model.subdomains.items():
        idx = rng.choice(len(cloud), size=min(args.points, len(cloud)), replace=False)
        x = cloud.points[np.sort(idx)]
        res = finite_diff_check(sub.params, sub.config, x, args.h)
        for name, errs in res.items():
            rows.append([region, name, format(errs["d1"], ".6e"), format(errs["d2"], ".6e")])
            worst = max(worst, errs["d1"] / args.tol1, errs["d2"] / args.tol2)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "check_grad.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "output", "d1_rel_err", "d2_rel_err"])
        w.writerows(rows)
    for r in rows:
        _say(args, f"{r[0]:>10s} {r[1]:>3s}  d1 {r[2]}  d2 {r[3]}")
    if worst >= 1.0:
        raise _Fail(EXIT_DIVERGED, "derivative check exceeded tolerance")
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .pso import load_problem, optimize
    import dataclasses
    import csv
    if not args.problem:
        raise _Fail(EXIT_INVALID, "--problem is required")
    try:
        problem, config = load_problem(args.problem)
    except (KeyError, TypeError, ValueError) as exc:
        raise _Fail(EXIT_INVALID, f"invalid problem file: {exc}")
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.iters is not None:
        config = dataclasses.replace(config, max_iters=args.iters)
    res = optimize(problem, config)
    out = Path(args.out or ".")
    res.write_snapshots(out)
    res.write_history(out / "gbest_history.csv")
    with open(out / "best.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*res.names, "objective", "fitness", "feasible"])
        w.writerow([*[format(v, ".17g") for v in res.best], format(res.best_objective, ".17g"),
                    format(res.best_fitness, ".17g"), int(res.feasible)])
    flag = "" if res.feasible else " (no feasible point found; best penalised point shown)"
    _say(args, "best " + ", ".join(f"{n}={v:.6g}" for n, v in zip(res.names, res.best))
         + f"; objective {res.best_objective:.6g}{flag}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="no progress output")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")

    p = argparse.ArgumentParser(prog="hybrid-pinn", description="Hybrid data/physics neural field solver")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train the networks of a config").set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics of a trained run")
    s.add_argument("--model", help="directory holding model_<region>.json (default: --out)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("probe", parents=[common], help="sample a trained model along a segment")
    s.add_argument("--model")
    s.add_argument("--start", type=_parse_vec, required=True)
    s.add_argument("--end", type=_parse_vec, required=True)
    s.add_argument("--n", type=int, default=101)
    s.add_argument("--region")
    s.add_argument("--name", default="line")
    s.set_defaults(fn=cmd_probe)

    s = sub.add_parser("sample", parents=[common], help="point cloud of a geometry, or a design table")
    s.add_argument("what", choices=["domain", "doe"])
    s.add_argument("--n", type=int, default=13, help="design points (doe)")
    s.add_argument("--iterations", type=int, default=2000, help="swap attempts (doe)")
    s.add_argument("--space", help="JSON list of {name, lo, hi}; default is the heat-sink box")
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("sparse-select", parents=[common], help="tag a random fraction of nodes as data")
    s.add_argument("--cloud", required=True)
    s.add_argument("--fraction", type=float, default=0.01)
    s.set_defaults(fn=cmd_sparse_select)

    s = sub.add_parser("check-grad", parents=[common], help="jet derivatives vs finite differences")
    s.add_argument("--points", type=int, default=20)
    s.add_argument("--h", type=float, default=1e-4)
    s.add_argument("--tol1", type=float, default=1e-6)
    s.add_argument("--tol2", type=float, default=1e-4)
    s.set_defaults(fn=cmd_check_grad)

    s = sub.add_parser("optimize", parents=[common], help="swarm search over a design problem")
    s.add_argument("--problem", help="problem file (JSON)")
    s.add_argument("--iters", type=int)
    s.set_defaults(fn=cmd_optimize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    _limit_threads(args.threads)
    from .geometry import CloudFormatError, SamplingError
    try:
        return args.fn(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CloudFormatError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
