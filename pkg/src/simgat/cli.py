"""Command-line entry point: ``simgat <subcommand> ...``.

Exit status 0 means success and 2 a usage error; 1 reports a validation or
computation error, with the itemized problems on stderr.  Every run that has
an output path also writes a manifest with the input hashes, the effective
configuration, library versions, the seed and the wall time.  A directory
output gets ``<dir>/manifest.json``; a file output ``foo.json`` gets
``foo.manifest.json`` beside it.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .baselines import train_baselines
from .classic import fit_gravity, fit_huff
from .clustering import DbscanParams, centroids, dbscan, featurize_clusters, merge_clusters
from .domain import (
    CLUSTER_LONG_TAIL,
    ENV_COLUMNS,
    ENV_LONG_TAIL,
    NEIGHBORHOOD_COLUMNS,
    NEIGHBORHOOD_LONG_TAIL,
    ValidationError,
    assemble_city_graph,
    cluster_feature_names,
    standardize_features,
)
from .model import SimGatConfig, SimGatModel, describe
from .synthcity import ScenarioSpec, desk_scenario, generate
from .training import (
    build_model,
    evaluate,
    grid_search,
    intercept_baseline,
    make_dataset,
    poisson_loss,
    split_days,
    train,
)
from .transport import MATRIX_POLICIES, build_cost_matrices
from .xai import group_contrast, scenario_contrast


class Run:
    """What one invocation read and wrote, kept for its manifest."""

    def __init__(self, command: str, argv):
        self.command = command
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed = None
        self.manifest: Path | None = None
        self.start = time.perf_counter()

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise ValidationError([f"input file not found: {p}"])
        self.inputs[str(p)] = io.sha256_file(p)
        return p

    def output(self, path) -> Path:
        p = Path(path)
        self.outputs.append(str(p))
        return p

    def manifest_for(self, out: Path, is_dir: bool = False) -> None:
        self.manifest = out / "manifest.json" if is_dir else out.with_name(out.stem + ".manifest.json")

    def write_manifest(self) -> None:
        if self.manifest is None:
            return
        io.write_json(
            self.manifest,
            {
                "command": self.command,
                "argv": self.argv,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "config": self.config,
                "seed": self.seed,
                "versions": {"simgat": __version__, "python": platform.python_version(), "numpy": np.__version__},
                "wall_time_s": time.perf_counter() - self.start,
            },
        )


def _load_config(run: Run, args) -> SimGatConfig:
    """Config file plus ``--seed``; a seed must come from one of them."""
    obj = io.read_json(run.input(args.config)) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    if "seed" not in obj:
        raise ValidationError(["no seed: set \"seed\" in the config file or pass --seed"])
    cfg = SimGatConfig.from_json(obj)
    run.config, run.seed = cfg.to_json(), cfg.seed
    return cfg


def _print_json(obj) -> None:
    print(json.dumps(io._plain(obj), indent=1))


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, run: Run) -> None:
    obj = io.read_json(run.input(args.spec)) if args.spec else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    spec = ScenarioSpec.from_json(obj)
    run.config, run.seed = spec.to_json(), spec.seed
    out = Path(args.out)
    run.manifest_for(out, is_dir=True)
    syn = generate(spec)
    city = syn.city
    io.write_city(run.output(out / "city.json"), city)
    io.write_flows(run.output(out / "flows.csv"), syn.flows, city)
    io.write_env(run.output(out / "env.csv"), city.dates, syn.raw["env"])
    io.write_neighborhoods(run.output(out / "neighborhoods.csv"), city.neighborhood_ids, syn.raw["neighborhoods"], syn.neighborhood_xy)
    io.write_network(run.output(out / "nodes.csv"), run.output(out / "edges.csv"), syn.network)
    attrs = syn.raw["attributes"]
    io.write_csv(run.output(out / "attributes.csv"), ["id"] + list(attrs),
                 ([nid] + [attrs[a][j] for a in attrs] for j, nid in enumerate(city.neighborhood_ids)))
    truth = dict(syn.truth)
    truth["rates"] = syn.rates
    truth["rates_layout"] = "days x clusters x neighborhoods"
    io.write_json(run.output(out / "truth.json"), truth)


def _read_context(path) -> tuple[dict, dict]:
    """``{cluster id: {"morphology": ..., "land_use": [...], ...}}``."""
    raw = io.read_json(path)
    contexts, morph = {}, {}
    for key, ctx in raw.items():
        cid = int(key)
        ctx = dict(ctx)
        if "morphology" in ctx:
            morph[cid] = ctx.pop("morphology")
        contexts[cid] = ctx
    return contexts, morph


def cmd_cluster(args, run: Run) -> None:
    pois = io.read_pois(run.input(args.pois))
    params = DbscanParams(args.eps, args.min_pts)
    run.config = {"eps": args.eps, "min_pts": args.min_pts, "target_variance": args.target_variance}
    out = run.output(args.out)
    run.manifest_for(out)
    assignment = dbscan(pois, params)
    merges = io.read_merges(run.input(args.merges)) if args.merges else []
    if merges:
        assignment = merge_clusters(assignment, merges)
    contexts, morph = _read_context(run.input(args.context)) if args.context else ({}, {})
    if assignment.n_clusters == 0:
        raise ValidationError(["no clusters found; lower --min-pts or raise --eps"])
    feats, basis, codes = featurize_clusters(pois, assignment, contexts, morph, args.target_variance)
    names = cluster_feature_names(len(feats[0].poi_counts_reduced))
    cents = centroids(pois, assignment)
    clusters = []
    for f, (cid, members) in zip(feats, assignment.cluster_members.items()):
        clusters.append(
            {
                "id": str(cid),
                "member_poi_ids": [pois[k].id for k in members],
                "centroid_xy": list(cents[cid]),
                "morphology": morph.get(cid, "plaza"),
                "features": dict(zip(names, f.vector().tolist())),
            }
        )
    io.write_json(
        out,
        {
            "params": {**run.config, "merges": [list(p) for p in merges]},
            "clusters": clusters,
            "noise_poi_ids": [pois[k].id for k in assignment.noise],
            "naics_codes": codes,
            "pca_basis": None if basis is None else basis.to_json(),
        },
    )


def cmd_network(args, run: Run) -> None:
    net = io.read_network(run.input(args.nodes), run.input(args.edges), args.boarding_penalty)
    ids, xy, _ = io.read_neighborhoods(run.input(args.neighborhoods))
    if xy is None:
        raise ValidationError([f"{args.neighborhoods}: x and y centroid columns are required"])
    clusters = io.read_json(run.input(args.clusters))["clusters"]
    cxy = np.array([c["centroid_xy"] for c in clusters], dtype=float).reshape(-1, 2)
    run.config = {"boarding_penalty_min": args.boarding_penalty, "policies": MATRIX_POLICIES}
    out = run.output(args.out)
    run.manifest_for(out)
    io.write_costs(out, build_cost_matrices(net, xy, cxy))


def _visit_totals(path, dates) -> np.ndarray:
    """Total visits per date straight from a flows file (ids need not resolve)."""
    rows = io.read_csv(path, ["date", "count"])
    pos = {d.isoformat(): k for k, d in enumerate(dates)}
    totals = np.zeros(len(dates))
    for r in rows:
        if r["date"] in pos:
            totals[pos[r["date"]]] += int(r["count"])
    return totals


def cmd_assemble(args, run: Run) -> None:
    clusters = io.read_json(run.input(args.clusters))["clusters"]
    if not clusters:
        raise ValidationError([f"{args.clusters}: no clusters"])
    c_names = list(clusters[0]["features"])
    c_raw = np.array([[c["features"][k] for k in c_names] for c in clusters], dtype=float)
    n_ids, n_xy, v_raw = io.read_neighborhoods(run.input(args.neighborhoods))
    dates, env_raw = io.read_env(run.input(args.env))
    costs = io.read_costs(run.input(args.costs))
    if args.flows:
        totals = _visit_totals(run.input(args.flows), dates)
        # previous day's total; the first day has no predecessor and reuses its own
        env_raw[:, ENV_COLUMNS.index("total_visits_prev")] = np.concatenate([totals[:1], totals[:-1]])
    out = run.output(args.out)
    run.manifest_for(out)
    U, c_stats = standardize_features(c_raw, [c for c in CLUSTER_LONG_TAIL if c in c_names], c_names)
    V, v_stats = standardize_features(v_raw, NEIGHBORHOOD_LONG_TAIL, NEIGHBORHOOD_COLUMNS)
    W, w_stats = standardize_features(env_raw, ENV_LONG_TAIL, ENV_COLUMNS)
    city = assemble_city_graph(
        U, V, list(costs.matrices.values()), W,
        {"clusters": c_stats, "neighborhoods": v_stats, "env": w_stats},
        cluster_ids=[c["id"] for c in clusters],
        neighborhood_ids=n_ids,
        cluster_feature_names=c_names,
        neighborhood_feature_names=NEIGHBORHOOD_COLUMNS,
        env_feature_names=ENV_COLUMNS,
        dates=dates,
        modes=costs.modes,
    )
    city.cluster_xy = np.array([c["centroid_xy"] for c in clusters], dtype=float)
    city.neighborhood_xy = n_xy
    io.write_city(out, city)


def _od_inputs(args, run: Run):
    """City and (m, n) flows summed over days, plus the day count and chosen cost matrix."""
    city = io.read_city(run.input(args.city))
    flows = io.read_flows(run.input(args.flows), city)
    dense = flows.to_dense(city.dates, city.m, city.n)
    mode = args.mode or city.modes[0]
    if mode not in city.modes:
        raise ValidationError([f"unknown mode {mode!r}; city has {city.modes}"])
    return city, dense.sum(axis=0), len(city.dates), city.costs[city.modes.index(mode)], mode


def _raw_column(city, table: str, column: str) -> np.ndarray:
    names = city.cluster_feature_names if table == "clusters" else city.neighborhood_feature_names
    z = city.clusters if table == "clusters" else city.neighborhoods
    if table not in city.stats:
        raise ValidationError([f"city file lacks {table} column statistics; raw masses unavailable"])
    return city.stats[table].invert(z)[:, names.index(column)]


def cmd_fit_gravity(args, run: Run) -> None:
    city, Y, days, cost, mode = _od_inputs(args, run)
    fixed = {}
    for item in args.fix or []:
        key, _, value = item.partition("=")
        fixed[key] = float(value)
    run.config = {"method": args.method, "mode": mode, "fixed": fixed}
    out = run.output(args.out)
    run.manifest_for(out)
    pop = _raw_column(city, "neighborhoods", "population")
    biz = _raw_column(city, "clusters", "business_count")
    res = fit_gravity(Y, pop, biz, cost, method=args.method, fixed=fixed, exposure=days)
    io.write_json(out, {**res.to_json("gravity"), "method": args.method, "mode": mode, "exposure_days": days})


def cmd_fit_huff(args, run: Run) -> None:
    city, Y, days, cost, mode = _od_inputs(args, run)
    run.config = {"mode": mode}
    out = run.output(args.out)
    run.manifest_for(out)
    res = fit_huff(Y, _raw_column(city, "clusters", "business_count"), cost)
    io.write_json(out, {**res.to_json("huff"), "mode": mode})


def _metrics(model, city, data, cfg, report, with_baselines: bool) -> dict:
    tr, va = split_days(data.target_days, cfg.val_fraction, cfg.seed)
    out = {
        "train_loss": evaluate(model, data, tr),
        "val_loss": evaluate(model, data, va),
        "best_epoch": None if report is None else report.best_epoch,
        "n_params": describe(model)["total"],
        "baselines": {"intercept": intercept_baseline(data, tr, va)},
    }
    if with_baselines:
        for kind, (bl, rep) in train_baselines(city, data, cfg).items():
            out["baselines"][kind] = {
                "train_loss": evaluate(bl, data, tr),
                "val_loss": rep.best_val_loss,
                "best_epoch": rep.best_epoch,
                "n_params": bl.n_params(),
            }
    out["beats_intercept"] = out["val_loss"] < out["baselines"]["intercept"]["val_loss"]
    return out


def cmd_train(args, run: Run) -> None:
    city = io.read_city(run.input(args.city))
    flows = io.read_flows(run.input(args.flows), city)
    cfg = _load_config(run, args)
    out = run.output(args.out)
    run.manifest_for(out)
    data = make_dataset(city, flows, cfg)
    model = build_model(city, data, cfg)
    report = train(model, data, cfg)
    io.write_model(out, model, report, city.stats)
    if args.metrics:
        io.write_json(run.output(args.metrics), _metrics(model, city, data, cfg, report, args.baselines))


def cmd_grid(args, run: Run) -> None:
    city = io.read_city(run.input(args.city))
    flows = io.read_flows(run.input(args.flows), city)
    base = _load_config(run, args)
    grid = io.read_json(run.input(args.grid))
    bad = [k for k in grid if k not in base.to_json() or k == "seed"]
    if bad:
        raise ValidationError([f"grid key {k!r} is not a tunable config field" for k in bad])
    run.config = {"base": base.to_json(), "grid": grid}
    out = run.output(args.out)
    run.manifest_for(out)
    io.write_json(out, grid_search(city, flows, base, grid, workers=args.workers))


def cmd_eval(args, run: Run) -> None:
    model, report = io.read_model(run.input(args.model))
    city = io.read_city(run.input(args.city))
    flows = io.read_flows(run.input(args.flows), city)
    cfg = model.config
    run.config, run.seed = cfg.to_json(), cfg.seed
    out = run.output(args.out)
    run.manifest_for(out)
    data = make_dataset(city, flows, cfg)
    io.write_json(out, _metrics(model, city, data, cfg, report, args.baselines))


def _parse_dates(spec: str) -> dict:
    """``2019-01-05,storm=2019-01-20`` -> ``{"2019-01-05": date, "storm": date}``."""
    out = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        name, _, value = item.rpartition("=")
        try:
            date = dt.date.fromisoformat(value)
        except ValueError:
            raise ValidationError([f"bad date {value!r} in --dates"]) from None
        out[name or value] = date
    if not out:
        raise ValidationError(["--dates is empty"])
    return out


def _attribute_values(run: Run, args, city):
    """``--group-by`` values from ``--attributes`` when that file has the column,
    else ``None`` so the model's own neighborhood feature is used."""
    if not args.attributes:
        return None
    rows = io.read_csv(run.input(args.attributes), ["id"])
    if not rows or args.group_by not in rows[0]:
        return None
    by_id = {r["id"]: r[args.group_by] for r in rows}
    missing = [nid for nid in city.neighborhood_ids if nid not in by_id]
    if missing:
        raise ValidationError([f"{args.attributes}: no row for neighborhood {nid!r}" for nid in missing])
    problems: list[str] = []
    values = [io._float(by_id[nid], f"{args.attributes} neighborhood {nid}", problems) for nid in city.neighborhood_ids]
    if problems:
        raise ValidationError(problems)
    return np.array(values)


def cmd_attribute(args, run: Run) -> None:
    model, _ = io.read_model(run.input(args.model))
    city = io.read_city(run.input(args.city))
    dates = _parse_dates(args.dates)
    run.config = {"dates": {k: str(v) for k, v in dates.items()}, "group_by": args.group_by, "k": args.k,
                  "freeze_attention": args.freeze_attention, "reference": "zeros"}
    run.seed = model.config.seed
    out = Path(args.out)
    run.manifest_for(out, is_dir=True)
    summaries, report = scenario_contrast(model, city, dates, freeze_attention=args.freeze_attention)
    result = {
        "reference": report.reference,
        "frozen_attention": report.frozen_attention,
        "max_residual": float(report.residual.max()),
        "scenarios": summaries,
    }
    if args.group_by:
        values = _attribute_values(run, args, city)
        result["groups"] = {
            name: group_contrast(model, city, date, args.group_by, args.k, report=report, values=values)[0]
            for name, date in dates.items()
        }
    io.write_attributions(run.output(out / "attributions.csv"), report)
    io.write_json(run.output(out / "summaries.json"), result)


def gradcheck_report(seed: int = 1, h: float = 1e-5, tolerance: float = 1e-4, hidden_dim: int = 4) -> dict:
    """Finite-difference check of the full Poisson loss on the desk scenario."""
    from .autodiff import grad_check

    syn = generate(desk_scenario(seed))
    cfg = SimGatConfig(hidden_dim=hidden_dim, lstm_window=3, seed=seed)
    data = make_dataset(syn.city, syn.flows, cfg)
    model = SimGatModel.init(cfg, data.U.shape[1], data.V.shape[1], data.env.shape[1], len(data.costs),
                             float(data.Y.mean()) + 1e-3)
    days = data.target_days
    start = time.perf_counter()
    rep = grad_check(lambda: poisson_loss(model.predict_batch(data, days), data.targets(days)),
                     model.parameters(), h, tolerance)
    rep["seconds"] = time.perf_counter() - start
    rep["graph"] = {"clusters": syn.city.n, "neighborhoods": syn.city.m, "days": len(syn.city.dates)}
    return rep


def _emit(args, run: Run, obj) -> None:
    if args.out:
        out = run.output(args.out)
        run.manifest_for(out)
        io.write_json(out, obj)
    elif args.manifest:
        run.manifest = Path(args.manifest)
    _print_json(obj)


def cmd_gradcheck(args, run: Run) -> int:
    run.config = {"h": args.h, "tolerance": args.tolerance, "hidden_dim": args.hidden_dim}
    run.seed = args.seed
    rep = gradcheck_report(args.seed, args.h, args.tolerance, args.hidden_dim)
    rep.pop("seconds")  # keeps the report file reproducible; timing lives in the manifest
    _emit(args, run, rep)
    return 0 if rep["passed"] else 1


def cmd_describe(args, run: Run) -> None:
    if args.model:
        model, _ = io.read_model(run.input(args.model))
    else:
        if None in (args.l, args.k, args.s):
            raise ValidationError(["describe needs --model or all of --l, --k, --s"])
        cfg = SimGatConfig(hidden_dim=args.h)
        model = SimGatModel(cfg, args.l, args.k, args.s, args.modes)
    run.config = {"dims": describe(model)["dims"]}
    _emit(args, run, describe(model))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simgat", description="Cost-modified graph attention flow prediction pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def cmd(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=func)
        return sp

    sp = cmd("synth", cmd_synth, "generate a synthetic city and its visitation history")
    sp.add_argument("--spec", help="scenario JSON; absent fields take their defaults")
    sp.add_argument("--seed", type=int, help="overrides the scenario seed")
    sp.add_argument("--out", required=True, help="output directory")

    sp = cmd("cluster", cmd_cluster, "DBSCAN business clusters from a POI table")
    sp.add_argument("--pois", required=True, help="CSV with id,x,y,naics,is_chain")
    sp.add_argument("--eps", type=float, default=200.0, help="neighborhood radius in metres (default 200)")
    sp.add_argument("--min-pts", type=int, default=5, help="core-point threshold, self included (default 5)")
    sp.add_argument("--merges", help="CSV of id_a,id_b cluster pairs to union")
    sp.add_argument("--context", help="JSON of per-cluster morphology and buffer overlays")
    sp.add_argument("--target-variance", type=float, default=0.9651, help="PCA variance kept (default 0.9651)")
    sp.add_argument("--out", required=True, help="clusters JSON")

    sp = cmd("network", cmd_network, "per-mode travel-time matrices from neighborhoods to clusters")
    sp.add_argument("--nodes", required=True, help="CSV with id,x,y")
    sp.add_argument("--edges", required=True, help="CSV with from,to,length_m,speed_kmh,modes[,directed]")
    sp.add_argument("--neighborhoods", required=True, help="neighborhood CSV with x,y columns")
    sp.add_argument("--clusters", required=True, help="clusters JSON (centroids are read)")
    sp.add_argument("--boarding-penalty", type=float, default=0.0, help="minutes per transit boarding (default 0)")
    sp.add_argument("--out", required=True, help="costs JSON")

    sp = cmd("assemble", cmd_assemble, "standardize raw tables into a city graph file")
    sp.add_argument("--clusters", required=True, help="clusters JSON")
    sp.add_argument("--neighborhoods", required=True, help="neighborhood CSV")
    sp.add_argument("--env", required=True, help="environment CSV")
    sp.add_argument("--costs", required=True, help="costs JSON")
    sp.add_argument("--flows", help="flows CSV; fills total_visits_prev with the lagged daily total")
    sp.add_argument("--out", required=True, help="city JSON")

    for name, func, help in (("fit-gravity", cmd_fit_gravity, "calibrate the gravity model"),
                             ("fit-huff", cmd_fit_huff, "calibrate the Huff model")):
        sp = cmd(name, func, help)
        sp.add_argument("--flows", required=True, help="flows CSV")
        sp.add_argument("--city", required=True, help="city JSON")
        sp.add_argument("--mode", help="cost matrix to use (default: the first)")
        if name == "fit-gravity":
            sp.add_argument("--method", choices=("poisson", "log-ols"), default="poisson")
            sp.add_argument("--fix", action="append", metavar="TERM=VALUE", help="pin alpha, beta or gamma")
        sp.add_argument("--out", required=True, help="params JSON")

    for name, func, help in (("train", cmd_train, "train SIM-GAT"), ("grid", cmd_grid, "grid search over configs")):
        sp = cmd(name, func, help)
        sp.add_argument("--city", required=True, help="city JSON")
        sp.add_argument("--flows", required=True, help="flows CSV")
        sp.add_argument("--config", help="config JSON; must set seed unless --seed is given")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        if name == "train":
            sp.add_argument("--metrics", help="also write a metrics JSON")
            sp.add_argument("--baselines", action="store_true", help="train GCN and GraphSAGE for the metrics")
            sp.add_argument("--out", required=True, help="model JSON")
        else:
            sp.add_argument("--grid", required=True, help="JSON mapping config field -> list of values")
            sp.add_argument("--workers", type=int, help="parallel trials (default: SIMGAT_THREADS or cores)")
            sp.add_argument("--out", required=True, help="results JSON")

    sp = cmd("eval", cmd_eval, "losses of a trained model against the baselines")
    sp.add_argument("--model", required=True)
    sp.add_argument("--city", required=True)
    sp.add_argument("--flows", required=True)
    sp.add_argument("--baselines", action="store_true", help="also train GCN and GraphSAGE")
    sp.add_argument("--out", required=True, help="metrics JSON")

    sp = cmd("attribute", cmd_attribute, "DeepLIFT contributions of cluster features")
    sp.add_argument("--model", required=True)
    sp.add_argument("--city", required=True)
    sp.add_argument("--dates", required=True, help="comma list of DATE or NAME=DATE")
    sp.add_argument("--group-by", help="neighborhood attribute for a top-k versus bottom-k contrast")
    sp.add_argument("--attributes", help="CSV of id plus extra neighborhood attributes for --group-by")
    sp.add_argument("--k", type=int, default=10, help="group size (default 10)")
    sp.add_argument("--freeze-attention", action="store_true", help="hold attention at its reference value")
    sp.add_argument("--out", required=True, help="output directory")

    sp = cmd("gradcheck", cmd_gradcheck, "finite-difference gradient check on a small synthetic graph")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--hidden-dim", type=int, default=4)
    sp.add_argument("--out", help="also write the report here")
    sp.add_argument("--manifest", help="manifest path when no --out is given")

    sp = cmd("describe", cmd_describe, "parameter inventory of a model")
    sp.add_argument("--model", help="model JSON")
    sp.add_argument("--h", type=int, default=8)
    sp.add_argument("--l", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--s", type=int)
    sp.add_argument("--modes", type=int, default=1)
    sp.add_argument("--out", help="also write the inventory here")
    sp.add_argument("--manifest", help="manifest path when no --out is given")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    run = Run(args.command, argv)
    try:
        status = args.func(args, run) or 0
    except ValidationError as exc:
        print(f"simgat {args.command}: {len(exc.problems)} problem(s)", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, IndexError, OSError, np.linalg.LinAlgError) as exc:
        print(f"simgat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    run.write_manifest()
    return status


if __name__ == "__main__":
    sys.exit(main())
