"""Experiment runner: generate | smooth | mean-sim | attack | evaluate | sweep.

Every run reads one structured config document (YAML or JSON), derives all
randomness from a single root seed through named substreams, writes CSV
artifacts plus a manifest, and can be reproduced bit-identically by
pointing any subcommand back at its manifest.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import penalties
from ._rng import substream
from .attack import (
    AttackConfig,
    apply_perturbation,
    attacked_edge_histogram,
    greedy_attack,
    pgd_attack,
    random_attack,
    save_perturbation,
)
from .classify import (VictimPipeline, accuracy, bias_metric,
                       save_predictions)
from .datasets import SyntheticSpec, generate_sbm, load_dataset, save_dataset
from .location import bias_report, estimate_mean, generate_samples
from .smoothing import SmootherConfig, smooth

FORMAT_VERSION = 1

COMMANDS = ("generate", "smooth", "convergence", "mean-sim", "attack",
            "evaluate", "sweep")


class ConfigError(ValueError):
    """Config document rejected; the message names the offending field."""


# ------------------------------------------------------------ config parsing

def _mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(d, allowed, path):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")


def _get(d, key, default, path, kind=None):
    value = d.get(key, default)
    if value is not None and kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind}, got {value!r}")
    return value


def load_config(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    doc = _mapping(doc, "config")
    if "command" in doc and "config" in doc:  # manifest re-run
        _check_keys(doc, ("command", "config", "seed", "format_version",
                          "artifacts"), "manifest")
        return doc["command"], _mapping(doc["config"], "manifest.config"), \
            doc.get("seed")
    return None, doc, doc.get("seed")


def _parse_dataset(cfg):
    d = _mapping(cfg, "config.dataset")
    _check_keys(d, ("synthetic", "files"), "config.dataset")
    if ("synthetic" in d) == ("files" in d):
        raise ConfigError("config.dataset: give exactly one of synthetic / files")
    if "synthetic" in d:
        s = _mapping(d["synthetic"], "config.dataset.synthetic")
        allowed = ("n", "classes", "intra_p", "inter_q", "feature_dim",
                   "feature_scale", "feature_sigma", "class_centers",
                   "train_ratio", "val_ratio", "self_loops")
        _check_keys(s, allowed, "config.dataset.synthetic")
        try:
            spec = SyntheticSpec(**{k: (tuple(map(tuple, v)) if k == "class_centers"
                                        else v) for k, v in s.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.dataset.synthetic: {exc}") from exc
        return "synthetic", spec
    f = _mapping(d["files"], "config.dataset.files")
    _check_keys(f, ("edges", "features", "labels", "self_loops",
                    "train_ratio", "val_ratio"), "config.dataset.files")
    for key in ("edges", "features"):
        if key not in f:
            raise ConfigError(f"config.dataset.files.{key}: required")
    return "files", dict(f)


def _parse_penalty(value, path):
    try:
        penalties.from_config(value)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return value if isinstance(value, dict) else {"kind": value}


_SOLVER_KEYS = ("solver", "eta", "eta_scale", "freeze_eta")


def _parse_smoother(cfg):
    s = _mapping(cfg, "config.smoother")
    allowed = ("penalty", "lambda", "lambda_hat", "iterations", "energy_trace",
               "penalties", "solvers") + _SOLVER_KEYS
    _check_keys(s, allowed, "config.smoother")
    if "penalty" not in s:
        raise ConfigError("config.smoother.penalty: required")
    out = {
        "penalty": _parse_penalty(s["penalty"], "config.smoother.penalty"),
        "lambda": s.get("lambda"),
        "lambda_hat": s.get("lambda_hat"),
        "iterations": _get(s, "iterations", 10, "config.smoother", int),
        "solver": _get(s, "solver", "qn-irls", "config.smoother", str),
        "eta": s.get("eta"),
        "eta_scale": float(s.get("eta_scale", 1.0)),
        "freeze_eta": bool(s.get("freeze_eta", False)),
        "energy_trace": bool(s.get("energy_trace", True)),
    }
    if out["lambda"] is None and out["lambda_hat"] is None:
        out["lambda_hat"] = 0.9
    variants = s.get("penalties")
    if variants is not None:
        if not isinstance(variants, list) or not variants:
            raise ConfigError("config.smoother.penalties: expected a non-empty list")
        out["penalties"] = [
            _parse_penalty(p, f"config.smoother.penalties[{i}]")
            for i, p in enumerate(variants)
        ]
    else:
        out["penalties"] = [out["penalty"]]
    solvers = s.get("solvers")
    if solvers is not None:
        if not isinstance(solvers, list) or not solvers:
            raise ConfigError("config.smoother.solvers: expected a non-empty list")
        parsed = []
        for i, entry in enumerate(solvers):
            entry = _mapping(entry, f"config.smoother.solvers[{i}]")
            _check_keys(entry, _SOLVER_KEYS, f"config.smoother.solvers[{i}]")
            merged = {k: out[k] for k in _SOLVER_KEYS}
            merged.update(entry)
            parsed.append(merged)
        out["solvers"] = parsed
    else:
        out["solvers"] = [{k: out[k] for k in _SOLVER_KEYS}]
    return out


def _smoother_config(sm, penalty_cfg=None, solver=None, **overrides):
    penalty = penalties.from_config(penalty_cfg or sm["penalty"])
    solver = solver or {k: sm[k] for k in _SOLVER_KEYS}
    kwargs = dict(
        penalty=penalty,
        lam=sm["lambda"],
        lambda_hat=sm["lambda_hat"] if sm["lambda"] is None else None,
        iterations=sm["iterations"],
        solver=solver["solver"],
        eta=solver.get("eta"),
        eta_scale=float(solver.get("eta_scale", 1.0)),
        freeze_eta=bool(solver.get("freeze_eta", False)),
        energy_trace=sm["energy_trace"],
    )
    kwargs.update(overrides)
    if kwargs.get("lam") is not None:
        kwargs["lambda_hat"] = None
    try:
        return SmootherConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config.smoother: {exc}") from exc


def _parse_attack(cfg):
    a = _mapping(cfg, "config.attack")
    allowed = ("scope", "budget_pct", "budget_grid", "targets", "method",
               "candidate_pool", "loss", "steps", "step_size", "samples")
    _check_keys(a, allowed, "config.attack")
    grid = a.get("budget_grid")
    if grid is not None and (not isinstance(grid, list) or not grid):
        raise ConfigError("config.attack.budget_grid: expected a non-empty list")
    base = {k: v for k, v in a.items() if k != "budget_grid"}
    try:
        cfg_obj = AttackConfig(**{k: (tuple(v) if k == "targets" else v)
                                  for k, v in base.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.attack: {exc}") from exc
    return {"config": cfg_obj,
            "budget_grid": [float(b) for b in grid] if grid else None}


def _parse_mean_sim(cfg):
    m = _mapping(cfg, "config.mean_sim") if cfg is not None else {}
    _check_keys(m, ("ratios", "n_clean", "gamma", "max_iter", "tol"),
                "config.mean_sim")
    ratios = m.get("ratios", [0.10, 0.25, 0.40])
    if not isinstance(ratios, list) or not ratios:
        raise ConfigError("config.mean_sim.ratios: expected a non-empty list")
    return {
        "ratios": [float(r) for r in ratios],
        "n_clean": int(m.get("n_clean", 120)),
        "gamma": float(m.get("gamma", 4.0)),
        "max_iter": int(m.get("max_iter", 200)),
        "tol": float(m.get("tol", 1e-9)),
    }


def _parse_sweep(cfg):
    s = _mapping(cfg, "config.sweep")
    _check_keys(s, ("lambda_hat", "gamma", "iterations", "max_cells"),
                "config.sweep")
    grids = {
        "lambda_hat": [float(v) for v in s.get("lambda_hat", [0.9])],
        "gamma": [float(v) for v in s.get("gamma", [3.0])],
        "iterations": [int(v) for v in s.get("iterations", [10])],
    }
    for name, values in grids.items():
        if not values:
            raise ConfigError(f"config.sweep.{name}: empty grid")
    grids["max_cells"] = int(s.get("max_cells", 500))
    return grids


def parse_config(command, cfg):
    """Validate the whole document against the command's needs."""
    cfg = _mapping(cfg, "config")
    _check_keys(cfg, ("seed", "output_dir", "dataset", "smoother", "attack",
                      "mean_sim", "sweep"), "config")
    parsed = {"seed": cfg.get("seed"), "output_dir": cfg.get("output_dir")}
    needs_dataset = command in ("generate", "smooth", "convergence", "attack",
                                "evaluate", "sweep")
    if needs_dataset:
        if "dataset" not in cfg:
            raise ConfigError("config.dataset: required for this command")
        parsed["dataset"] = _parse_dataset(cfg["dataset"])
    if command in ("smooth", "convergence", "attack", "evaluate", "sweep"):
        if "smoother" not in cfg:
            raise ConfigError("config.smoother: required for this command")
        parsed["smoother"] = _parse_smoother(cfg["smoother"])
    if command in ("attack", "evaluate", "sweep"):
        if "attack" not in cfg:
            raise ConfigError("config.attack: required for this command")
        parsed["attack"] = _parse_attack(cfg["attack"])
    if command == "mean-sim":
        parsed["mean_sim"] = _parse_mean_sim(cfg.get("mean_sim"))
    if command == "sweep":
        if "sweep" not in cfg:
            raise ConfigError("config.sweep: required for this command")
        parsed["sweep"] = _parse_sweep(cfg["sweep"])
        if parsed["smoother"]["penalty"].get("kind") != "mcp":
            raise ConfigError(
                "config.sweep: sweeps tune the capped penalty; set "
                "config.smoother.penalty.kind to 'mcp'")
    return parsed


# -------------------------------------------------------------- CSV helpers

def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _write_trace(path, energies):
    return _write_csv(path, ["iter", "energy"],
                      [(k, e) for k, e in enumerate(energies)])


def _write_feature_rows(path, F):
    header = ["node"] + [f"f{i}" for i in range(F.shape[1])]
    return _write_csv(path, header,
                      [[node] + list(row) for node, row in enumerate(F)])


def _derived_seed(root_seed, name):
    return int(substream(root_seed, name).integers(0, 2**63 - 1))


def _penalty_tag(pcfg):
    kind = pcfg["kind"]
    if kind == "mcp":
        return f"mcp{pcfg['gamma']:g}"
    return kind


def _solver_tag(solver):
    tag = solver["solver"]
    if solver.get("eta") is not None:
        tag += f"_eta{solver['eta']:g}"
    elif float(solver.get("eta_scale", 1.0)) != 1.0:
        tag += f"_scale{solver['eta_scale']:g}"
    elif solver.get("freeze_eta"):
        tag += "_frozen"
    return tag


# ----------------------------------------------------------------- datasets

def _materialize_dataset(parsed, seed):
    kind, spec = parsed["dataset"]
    if kind == "synthetic":
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return generate_sbm(spec, seed=seed)
    files = spec
    for key in ("edges", "features", "labels"):
        path = files.get(key)
        if path is not None and not Path(path).exists():
            raise ConfigError(f"config.dataset.files.{key}: {path} does not exist")
    return load_dataset(
        files["edges"], files["features"], files.get("labels"),
        self_loops=bool(files.get("self_loops", False)),
        train_ratio=files.get("train_ratio"),
        val_ratio=files.get("val_ratio", 0.0),
        seed=seed,
    )


# ----------------------------------------------------------------- commands

def run_generate(parsed, out, seed):
    kind, spec = parsed["dataset"]
    if kind != "synthetic":
        raise ConfigError("config.dataset: generate needs a synthetic dataset section")
    g, F, split = _materialize_dataset(parsed, seed)
    save_dataset(out / "edges.csv", out / "features.csv", out / "labels.csv",
                 g, F, split.labels)
    return ["edges.csv", "features.csv", "labels.csv"]


def run_smooth(parsed, out, seed):
    g, F, split = _materialize_dataset(parsed, seed)
    sm = parsed["smoother"]
    artifacts = []
    index = 0
    for pcfg in sm["penalties"]:
        for solver in sm["solvers"]:
            cfg = _smoother_config(sm, penalty_cfg=pcfg, solver=solver)
            label = f"{index:02d}_{_penalty_tag(pcfg)}_{_solver_tag(solver)}"
            smoothed, trace = smooth(g, cfg, F)
            _write_feature_rows(out / f"features_{label}.csv", smoothed)
            artifacts.append(f"features_{label}.csv")
            if trace is not None:
                _write_trace(out / f"energy_trace_{label}.csv", trace)
                artifacts.append(f"energy_trace_{label}.csv")
            index += 1
    return artifacts


def run_mean_sim(parsed, out, seed):
    ms = parsed["mean_sim"]
    estimators = [("l2", penalties.l2()), ("l1", penalties.l1()),
                  ("mcp", penalties.mcp(ms["gamma"]))]
    artifacts = []
    report = []
    for ratio in ms["ratios"]:
        samples = generate_samples(ms["n_clean"], ratio, seed)
        for label, pen in estimators:
            est = estimate_mean(samples, pen, max_iter=ms["max_iter"],
                                tol=ms["tol"])
            name = f"trajectory_{label}_r{ratio:g}.csv"
            _write_csv(out / name, ["iter", "x", "y"],
                       [(k, z[0], z[1]) for k, z in enumerate(est.trajectory)])
            artifacts.append(name)
            distance = bias_report(samples, [(label, est)])[0]["distance"]
            report.append((label, ratio, distance))
    _write_csv(out / "bias_report.csv", ["estimator", "ratio", "distance"],
               report)
    artifacts.append("bias_report.csv")
    return artifacts


def _run_attack_method(g, pipeline, acfg, seed):
    if acfg.method == "random":
        return random_attack(g, acfg, seed=seed)
    if acfg.method == "greedy":
        return greedy_attack(g, pipeline, acfg)
    return pgd_attack(g, pipeline, acfg, seed=seed)


def _scope_nodes(acfg, split):
    if acfg.scope == "local":
        return np.asarray(acfg.targets, dtype=np.int64)
    return split.test


def _attack_once(g, split, sm, pcfg, acfg, budget_pct, root_seed,
                 iterations=None, lambda_hat=None):
    """One adaptive attack against the pipeline configured by the cell.

    Returns the row ingredients shared by evaluate and sweep, so a
    single-cell sweep reproduces the evaluate output exactly.
    """
    overrides = {}
    if iterations is not None:
        overrides["iterations"] = iterations
    if lambda_hat is not None:
        overrides["lambda_hat"] = lambda_hat
        overrides["lam"] = None
    cfg = _smoother_config(sm, penalty_cfg=pcfg, **overrides)
    scope = _scope_nodes(acfg, split)
    pipeline = VictimPipeline(config=cfg, split=split, scope=scope,
                              loss_kind=acfg.loss)
    lam_tag = f"{cfg.lam_value:.12g}"
    seed_name = (f"attack:{_penalty_tag(pcfg)}:lam{lam_tag}"
                 f":k{cfg.iterations}:b{budget_pct:g}")
    attack_seed = _derived_seed(root_seed, seed_name)
    scores_clean = pipeline.scores(g)
    acc_clean = accuracy(scores_clean, split, scope)
    loss_clean = pipeline.loss(g)
    if budget_pct == 0.0:
        ps = None
        attacked = g
        acc_after, loss_after = acc_clean, loss_clean
    else:
        cell_cfg = AttackConfig(
            scope=acfg.scope, budget_pct=budget_pct, targets=acfg.targets,
            method=acfg.method, candidate_pool=acfg.candidate_pool,
            loss=acfg.loss, steps=acfg.steps, step_size=acfg.step_size,
            samples=acfg.samples, seed=attack_seed)
        ps = _run_attack_method(g, pipeline, cell_cfg, attack_seed)
        attacked = apply_perturbation(g, ps)
        acc_after = accuracy(pipeline.scores(attacked), split, scope)
        loss_after = pipeline.loss(attacked)
    return {
        "config": cfg, "pipeline": pipeline, "perturbation": ps,
        "attacked": attacked, "acc_clean": acc_clean, "acc_after": acc_after,
        "loss_clean": loss_clean, "loss_after": loss_after,
    }


def run_attack(parsed, out, seed):
    g, F, split = _materialize_dataset(parsed, seed)
    sm, attack = parsed["smoother"], parsed["attack"]
    acfg = attack["config"]
    result = _attack_once(g, split, sm, sm["penalty"], acfg, acfg.budget_pct,
                          seed)
    ps = result["perturbation"]
    save_perturbation(out / "perturbation.csv", g, ps)
    _write_csv(out / "attack_report.csv",
               ["method", "budget", "loss_before", "loss_after",
                "acc_before", "acc_after"],
               [(acfg.method, ps.budget, result["loss_clean"],
                 result["loss_after"], result["acc_clean"],
                 result["acc_after"])])
    return ["perturbation.csv", "attack_report.csv"]


def run_evaluate(parsed, out, seed):
    g, F, split = _materialize_dataset(parsed, seed)
    sm, attack = parsed["smoother"], parsed["attack"]
    acfg = attack["config"]
    budgets = attack["budget_grid"] or [acfg.budget_pct]
    artifacts = []
    curve_rows = []
    report_rows = []
    for pcfg in sm["penalties"]:
        tag = _penalty_tag(pcfg)
        wrote_predictions = False
        for budget in budgets:
            r = _attack_once(g, split, sm, pcfg, acfg, budget, seed)
            if not wrote_predictions:
                save_predictions(out / f"predictions_{tag}.csv",
                                 r["pipeline"].scores(g))
                artifacts.append(f"predictions_{tag}.csv")
                wrote_predictions = True
            F_clean, _ = smooth(g, r["config"], F)
            F_attacked, _ = smooth(r["attacked"], r["config"], F)
            bias = bias_metric(F_clean, F_attacked)
            curve_rows.append((tag, budget, r["acc_clean"], r["acc_after"],
                               bias))
            ps = r["perturbation"]
            if ps is not None:
                report_rows.append((acfg.method, ps.budget, r["loss_clean"],
                                    r["loss_after"], r["acc_clean"],
                                    r["acc_after"]))
                name = f"perturbation_{tag}_b{budget:g}.csv"
                save_perturbation(out / name, g, ps)
                artifacts.append(name)
                injected = [p for p in ps.flips if not g.has_edge(*p)]
                if injected:
                    counts, edges = attacked_edge_histogram(
                        g, r["attacked"], F, bins=20)
                    hname = f"histogram_{tag}_b{budget:g}.csv"
                    _write_csv(out / hname, ["bin_lo", "bin_hi", "count"],
                               [(edges[i], edges[i + 1], int(c))
                                for i, c in enumerate(counts)])
                    artifacts.append(hname)
    _write_csv(out / "budget_accuracy.csv",
               ["penalty", "budget_pct", "acc_clean", "acc_attacked", "bias"],
               curve_rows)
    _write_csv(out / "attack_report.csv",
               ["method", "budget", "loss_before", "loss_after",
                "acc_before", "acc_after"], report_rows)
    return ["budget_accuracy.csv", "attack_report.csv"] + artifacts


def run_sweep(parsed, out, seed):
    g, F, split = _materialize_dataset(parsed, seed)
    sm, attack, grids = parsed["smoother"], parsed["attack"], parsed["sweep"]
    acfg = attack["config"]
    budgets = attack["budget_grid"] or [acfg.budget_pct]
    cells = [(lh, gamma, iters, budget)
             for lh in grids["lambda_hat"]
             for gamma in grids["gamma"]
             for iters in grids["iterations"]
             for budget in budgets]
    if len(cells) > grids["max_cells"]:
        raise ConfigError(
            f"config.sweep: grid of {len(cells)} cells exceeds max_cells "
            f"({grids['max_cells']})")

    def evaluate_cell(cell):
        lh, gamma, iters, budget = cell
        pcfg = {"kind": "mcp", "gamma": gamma}
        r = _attack_once(g, split, sm, pcfg, acfg, budget, seed,
                         iterations=iters, lambda_hat=lh)
        F_clean, _ = smooth(g, r["config"], F)
        F_attacked, _ = smooth(r["attacked"], r["config"], F)
        return (lh, gamma, iters, budget, r["acc_clean"], r["acc_after"],
                bias_metric(F_clean, F_attacked))

    workers = os.environ.get("RUNG_THREADS")
    workers = int(workers) if workers else (os.cpu_count() or 1)
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate_cell, cells))
    else:
        rows = [evaluate_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    _write_csv(out / "sweep.csv",
               ["lambda_hat", "gamma", "iterations", "budget_pct",
                "acc_clean", "acc_attacked", "bias"], rows)
    return ["sweep.csv"]


_RUNNERS = {
    "generate": run_generate,
    "smooth": run_smooth,
    "convergence": run_smooth,
    "mean-sim": run_mean_sim,
    "attack": run_attack,
    "evaluate": run_evaluate,
    "sweep": run_sweep,
}


def _write_manifest(out, command, cfg, seed, artifacts):
    doc = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "seed": seed,
        "config": cfg,
        "artifacts": sorted(artifacts),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rung",
        description="robust graph smoothing experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config or manifest path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
    args = parser.parse_args(argv)

    try:
        manifest_command, cfg, cfg_seed = load_config(args.config)
        command = args.command
        if manifest_command is not None:
            canon = lambda c: "smooth" if c == "convergence" else c
            if canon(manifest_command) != canon(command):
                raise ConfigError(
                    f"manifest was written by '{manifest_command}', "
                    f"not '{command}'")
            command = manifest_command
        parsed = parse_config(command, cfg)
        seed = args.seed if args.seed is not None else (
            cfg_seed if cfg_seed is not None else 0)
        seed = int(seed)
        out_dir = args.out or parsed.get("output_dir")
        if out_dir is None:
            raise ConfigError("config.output_dir: required (or pass --out)")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = _RUNNERS[command](parsed, out, seed)
        _write_manifest(out, command, cfg, seed, artifacts)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"rung: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
