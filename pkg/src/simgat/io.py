"""CSV and JSON readers/writers for every file the command line touches.

Floats go to CSV with 17 significant digits and to JSON through Python's
shortest round-trip repr, so a value read back is bit-identical and
re-running a command reproduces its files byte for byte.  JSON files are
written to a temporary name and moved into place.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .domain import (
    ENV_COLUMNS,
    NEIGHBORHOOD_COLUMNS,
    CityGraph,
    ColumnStats,
    FlowTable,
    Poi,
    ValidationError,
    check_unique_ids,
    validate_city_graph,
)
from .model import SimGatConfig, SimGatModel
from .training import TrainReport
from .transport import CostMatrixSet, Edge, RoadNetwork


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _plain(obj):
    """numpy -> builtin types, recursively."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (dt.date, np.datetime64)):
        return str(obj)
    return obj


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(_plain(obj), indent=1, allow_nan=False) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path, required) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError([f"{path}: empty file (header required)"])
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ValidationError([f"{path}: missing columns {missing}"])
        return list(reader)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _float(value, where: str, problems: list) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        problems.append(f"{where}: {value!r} is not a number")
        return float("nan")


def _bool(value) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "y", "t")


# --------------------------------------------------------------------------
# POIs, merges


def read_pois(path) -> list[Poi]:
    rows = read_csv(path, ["id", "x", "y", "naics", "is_chain"])
    pois, problems = [], []
    for k, r in enumerate(rows, start=2):
        try:
            pois.append(Poi(r["id"], float(r["x"]), float(r["y"]), r["naics"].strip(), _bool(r["is_chain"])))
        except ValueError as exc:
            problems.append(f"{path} line {k}: {exc}")
    if problems:
        raise ValidationError(problems)
    check_unique_ids(pois)
    return pois


def write_pois(path, pois) -> None:
    write_csv(path, ["id", "x", "y", "naics", "is_chain"], ((p.id, p.x, p.y, p.naics, p.is_chain) for p in pois))


def read_merges(path) -> list[tuple[int, int]]:
    rows = read_csv(path, ["id_a", "id_b"])
    try:
        return [(int(r["id_a"]), int(r["id_b"])) for r in rows]
    except ValueError as exc:
        raise ValidationError([f"{path}: {exc}"]) from None


# --------------------------------------------------------------------------
# neighborhoods, environment, flows


def read_neighborhoods(path):
    """Returns ``(ids, xy or None, raw (m, 21) matrix)``.

    ``x``/``y`` centroid columns are optional; the 21 attribute columns are
    required by name.
    """
    rows = read_csv(path, ["id"] + NEIGHBORHOOD_COLUMNS)
    problems: list[str] = []
    ids = [r["id"] for r in rows]
    raw = np.array(
        [[_float(r[c], f"{path} line {k} column {c}", problems) for c in NEIGHBORHOOD_COLUMNS] for k, r in enumerate(rows, 2)]
    ).reshape(len(rows), len(NEIGHBORHOOD_COLUMNS))
    xy = None
    if rows and "x" in rows[0] and "y" in rows[0]:
        xy = np.array([[_float(r["x"], f"{path} line {k}", problems), _float(r["y"], f"{path} line {k}", problems)] for k, r in enumerate(rows, 2)])
    if len(set(ids)) != len(ids):
        problems.append(f"{path}: duplicate neighborhood ids")
    if problems:
        raise ValidationError(problems)
    return ids, xy, raw


def write_neighborhoods(path, ids, raw, xy=None) -> None:
    header = ["id"] + (["x", "y"] if xy is not None else []) + NEIGHBORHOOD_COLUMNS
    rows = []
    for k, nid in enumerate(ids):
        rows.append([nid] + (list(xy[k]) if xy is not None else []) + list(raw[k]))
    write_csv(path, header, rows)


def read_env(path):
    """Returns ``(dates, raw (days, 12) matrix)``, sorted and checked contiguous."""
    rows = read_csv(path, ["date"] + ENV_COLUMNS)
    problems: list[str] = []
    recs = []
    for k, r in enumerate(rows, 2):
        try:
            d = dt.date.fromisoformat(r["date"])
        except ValueError:
            problems.append(f"{path} line {k}: bad date {r['date']!r}")
            continue
        recs.append((d, [_float(r[c], f"{path} line {k} column {c}", problems) for c in ENV_COLUMNS]))
    recs.sort(key=lambda t: t[0])
    dates = [d for d, _ in recs]
    for prev, cur in zip(dates, dates[1:]):
        if (cur - prev).days != 1:
            problems.append(f"{path}: dates not contiguous between {prev} and {cur}")
    if problems:
        raise ValidationError(problems)
    return dates, np.array([v for _, v in recs]).reshape(len(recs), len(ENV_COLUMNS))


def write_env(path, dates, raw) -> None:
    write_csv(path, ["date"] + ENV_COLUMNS, ([d.isoformat()] + list(row) for d, row in zip(dates, raw)))


def read_flows(path, city: CityGraph) -> FlowTable:
    rows = read_csv(path, ["date", "neighborhood_id", "cluster_id", "count"])
    nidx = {v: k for k, v in enumerate(city.neighborhood_ids)}
    cidx = {v: k for k, v in enumerate(city.cluster_ids)}
    problems = []
    dates, js, is_, cs = [], [], [], []
    for k, r in enumerate(rows, 2):
        if r["neighborhood_id"] not in nidx:
            problems.append(f"{path} line {k}: unknown neighborhood {r['neighborhood_id']!r}")
            continue
        if r["cluster_id"] not in cidx:
            problems.append(f"{path} line {k}: unknown cluster {r['cluster_id']!r}")
            continue
        try:
            count = int(r["count"])
            dates.append(np.datetime64(dt.date.fromisoformat(r["date"]), "D"))
        except ValueError as exc:
            problems.append(f"{path} line {k}: {exc}")
            continue
        if count < 0:
            problems.append(f"{path} line {k}: negative count")
        js.append(nidx[r["neighborhood_id"]])
        is_.append(cidx[r["cluster_id"]])
        cs.append(count)
    if problems:
        raise ValidationError(problems)
    try:
        return FlowTable(np.array(dates, dtype="datetime64[D]"), js, is_, cs)
    except ValueError as exc:
        raise ValidationError([f"{path}: {exc}"]) from None


def write_flows(path, flows: FlowTable, city: CityGraph) -> None:
    order = np.lexsort((flows.cluster, flows.neighborhood, flows.dates.astype(np.int64)))
    write_csv(
        path,
        ["date", "neighborhood_id", "cluster_id", "count"],
        (
            (str(flows.dates[k]), city.neighborhood_ids[flows.neighborhood[k]], city.cluster_ids[flows.cluster[k]], int(flows.count[k]))
            for k in order
        ),
    )


# --------------------------------------------------------------------------
# networks and costs


def read_network(nodes_path, edges_path, boarding_penalty_min: float = 0.0) -> RoadNetwork:
    node_rows = read_csv(nodes_path, ["id", "x", "y"])
    edge_rows = read_csv(edges_path, ["from", "to", "length_m", "speed_kmh", "modes"])
    problems: list[str] = []
    nodes = {r["id"]: (_float(r["x"], f"{nodes_path} node {r['id']}", problems), _float(r["y"], f"{nodes_path} node {r['id']}", problems)) for r in node_rows}
    edges = []
    for k, r in enumerate(edge_rows, 2):
        speed = r["speed_kmh"].strip()
        try:
            edges.append(
                Edge(
                    r["from"],
                    r["to"],
                    float(r["length_m"]),
                    float(speed) if speed else None,
                    frozenset(m.strip() for m in r["modes"].split("|") if m.strip()),
                    _bool(r.get("directed", "false")),
                )
            )
        except ValueError as exc:
            problems.append(f"{edges_path} line {k}: {exc}")
    if problems:
        raise ValidationError(problems)
    try:
        return RoadNetwork(nodes, edges, boarding_penalty_min)
    except ValueError as exc:
        raise ValidationError([str(exc)]) from None


def write_network(nodes_path, edges_path, net: RoadNetwork) -> None:
    write_csv(nodes_path, ["id", "x", "y"], ((nid, x, y) for nid, (x, y) in net.nodes.items()))
    write_csv(
        edges_path,
        ["from", "to", "length_m", "speed_kmh", "modes", "directed"],
        (
            (e.source, e.target, e.length_m, "" if e.speed_kmh is None else e.speed_kmh, "|".join(sorted(e.modes)), e.directed)
            for e in net.edges
        ),
    )


def read_costs(path) -> CostMatrixSet:
    return CostMatrixSet.from_json(read_json(path))


def write_costs(path, costs: CostMatrixSet) -> None:
    write_json(path, costs.to_json())


# --------------------------------------------------------------------------
# city graph


def city_to_json(city: CityGraph) -> dict:
    return {
        "cluster_ids": city.cluster_ids,
        "neighborhood_ids": city.neighborhood_ids,
        "cluster_feature_names": city.cluster_feature_names,
        "neighborhood_feature_names": city.neighborhood_feature_names,
        "env_feature_names": city.env_feature_names,
        "dates": [d.isoformat() for d in city.dates],
        "modes": city.modes,
        "clusters": city.clusters,
        "neighborhoods": city.neighborhoods,
        "env": city.env,
        "costs": {"modes": city.modes, "m": city.m, "n": city.n, "matrices": [np.asarray(c).reshape(-1) for c in city.costs]},
        "column_stats": {k: v.to_json() for k, v in city.stats.items()},
        "cluster_xy": city.cluster_xy,
        "neighborhood_xy": city.neighborhood_xy,
    }


def city_from_json(obj: dict) -> CityGraph:
    try:
        m, n = obj["costs"]["m"], obj["costs"]["n"]
        city = CityGraph(
            clusters=np.array(obj["clusters"], dtype=float),
            neighborhoods=np.array(obj["neighborhoods"], dtype=float),
            costs=[np.array(c, dtype=float).reshape(m, n) for c in obj["costs"]["matrices"]],
            env=np.array(obj["env"], dtype=float),
            cluster_ids=list(obj["cluster_ids"]),
            neighborhood_ids=list(obj["neighborhood_ids"]),
            cluster_feature_names=list(obj["cluster_feature_names"]),
            neighborhood_feature_names=list(obj["neighborhood_feature_names"]),
            env_feature_names=list(obj["env_feature_names"]),
            dates=[dt.date.fromisoformat(d) for d in obj["dates"]],
            modes=list(obj["modes"]),
            stats={k: ColumnStats.from_json(v) for k, v in obj.get("column_stats", {}).items()},
            cluster_xy=None if obj.get("cluster_xy") is None else np.array(obj["cluster_xy"], dtype=float),
            neighborhood_xy=None if obj.get("neighborhood_xy") is None else np.array(obj["neighborhood_xy"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError([f"malformed city file: {exc!r}"]) from None
    problems = validate_city_graph(city)
    if problems:
        raise ValidationError(problems)
    return city


def read_city(path) -> CityGraph:
    return city_from_json(read_json(path))


def write_city(path, city: CityGraph) -> None:
    write_json(path, city_to_json(city))


# --------------------------------------------------------------------------
# model checkpoints


def model_to_json(model: SimGatModel, report: TrainReport | None = None, stats: dict | None = None) -> dict:
    return {
        "config": model.config.to_json(),
        "dims": {"l": model.l, "k": model.k, "s": model.s, "modes": model.n_modes},
        "column_stats": {k: v.to_json() for k, v in (stats or {}).items()},
        "parameters": {name: {"shape": list(p.shape), "data": p.data.reshape(-1)} for name, p in model.params.items()},
        "train_report": None if report is None else report.to_json(),
    }


def model_from_json(obj: dict):
    """Returns ``(model, report or None)``."""
    try:
        cfg = SimGatConfig.from_json(obj["config"])
        dims = obj["dims"]
        params = {name: np.array(p["data"], dtype=float).reshape(p["shape"]) for name, p in obj["parameters"].items()}
        model = SimGatModel(cfg, dims["l"], dims["k"], dims["s"], dims["modes"], params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError([f"malformed model file: {exc}"]) from None
    rep = obj.get("train_report")
    return model, (TrainReport.from_json(rep) if rep else None)


def read_model(path):
    return model_from_json(read_json(path))


def write_model(path, model: SimGatModel, report: TrainReport | None = None, stats: dict | None = None) -> None:
    write_json(path, model_to_json(model, report, stats))


# --------------------------------------------------------------------------
# attribution output


def write_attributions(path, report) -> None:
    write_csv(path, ["date", "cluster_id", "neighborhood_id", "feature", "contribution", "residual"], report.rows())
