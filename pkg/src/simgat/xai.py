"""DeepLIFT attribution of predicted flows to business-cluster features.

The attribution target is the predicted rate ``lambda[i, j]`` for one day.
Only cluster ``i``'s feature row differs between the actual and the
reference run, so the contributions over its ``l`` features are meant to add
up to ``lambda(x) - lambda(x_ref)``; the gap is kept as the residual.  The
default reference is the zero row, i.e. the average cluster in standardized
units.

Besides the signed contribution ``m * (x - x_ref)`` every report carries a
*directional* contribution ``m * |x - x_ref|``.  Its sign says whether moving
the feature up raises the prediction, independent of which side of the
reference a cluster sits on; box plots of standardized features need it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, propagate_multipliers
from .domain import CityGraph
from .model import SimGatModel
from .training import env_columns

BOX_KEYS = ("min", "q1", "median", "q3", "max", "mean")


@dataclass
class Attribution:
    """Contributions of cluster ``i``'s features to ``lambda[i, j]``."""

    cluster: int
    neighborhood: int
    features: list[str]
    contributions: np.ndarray
    directional: np.ndarray
    prediction: float
    reference_prediction: float
    residual: float

    @property
    def delta(self) -> float:
        return self.prediction - self.reference_prediction


@dataclass
class AttributionReport:
    """Per (date, cluster, neighborhood, feature) contribution scores."""

    dates: list
    cluster_ids: list[str]
    neighborhood_ids: list[str]
    features: list[str]
    contributions: np.ndarray  # (dates, n, m, l)
    directional: np.ndarray  # (dates, n, m, l)
    delta: np.ndarray  # (dates, n, m)
    residual: np.ndarray  # (dates, n, m)
    reference: str
    frozen_attention: bool = False
    meta: dict = field(default_factory=dict)

    def rows(self):
        """(date, cluster_id, neighborhood_id, feature, contribution, residual) tuples."""
        for d, date in enumerate(self.dates):
            for i, cid in enumerate(self.cluster_ids):
                for j, nid in enumerate(self.neighborhood_ids):
                    for f, name in enumerate(self.features):
                        yield (str(date), cid, nid, name, float(self.contributions[d, i, j, f]), float(self.residual[d, i, j]))


def _window(model: SimGatModel, city: CityGraph, date) -> np.ndarray:
    t = city.date_index(date)
    T = model.config.lstm_window
    if t < T - 1:
        raise ValueError(f"{date}: fewer than {T} days of environment history")
    return city.env[t - T + 1 : t + 1][:, env_columns(city, model.config)]


def _reference_row(reference, l: int) -> np.ndarray:
    ref = np.zeros(l) if reference is None else np.asarray(reference, dtype=float)
    if ref.shape != (l,):
        raise ValueError(f"reference must have shape ({l},), got {ref.shape}")
    return ref


def attribute_cluster(model: SimGatModel, city: CityGraph, env_window, cluster: int, reference=None,
                      freeze_attention: bool = False):
    """DeepLIFT for ``lambda[cluster, j]`` over every neighborhood ``j``.

    Returns ``(contributions (m, l), delta (m,), residual (m,), rates (m,))``.
    With ``freeze_attention`` both runs use the attention weights of the
    reference run.
    """
    U = np.asarray(city.clusters, dtype=float)
    n, l = U.shape
    if not 0 <= cluster < n:
        raise IndexError(f"cluster index {cluster} out of range for {n} clusters")
    U_ref = U.copy()
    U_ref[cluster] = _reference_row(reference, l)
    w = np.asarray(env_window, dtype=float)[-model.config.lstm_window :]
    frozen = None
    if freeze_attention:
        frozen = model.forward(U_ref, city.neighborhoods, city.costs, w).alpha.data
    outs, tapes, inputs = [], [], []
    for X in (U, U_ref):
        with Tape() as tape:
            x = Tensor(X, requires_grad=True)
            rate = model.forward(x, city.neighborhoods, city.costs, w, frozen).rate
            cells = [rate[cluster, j] for j in range(city.m)]
        outs.append(cells)
        tapes.append(tape)
        inputs.append(x)
    contrib = np.zeros((city.m, l))
    delta = np.zeros(city.m)
    for j in range(city.m):
        mult = propagate_multipliers(tapes[0], tapes[1], outs[0][j], outs[1][j], [inputs[0]])[0]
        contrib[j] = mult[cluster] * (U[cluster] - U_ref[cluster])
        delta[j] = float(outs[0][j].data - outs[1][j].data)
    residual = np.abs(contrib.sum(axis=1) - delta)
    rates = np.array([float(c.data) for c in outs[0]])
    return contrib, delta, residual, rates


def deeplift_attribute(model: SimGatModel, city: CityGraph, env_window, target, reference=None,
                       freeze_attention: bool = False) -> Attribution:
    """Contributions of cluster ``i``'s features to ``lambda[i, j]``, ``target = (i, j)``."""
    i, j = target
    if not 0 <= j < city.m:
        raise IndexError(f"neighborhood index {j} out of range for {city.m} neighborhoods")
    contrib, delta, residual, rates = attribute_cluster(model, city, env_window, i, reference, freeze_attention)
    diff = np.asarray(city.clusters[i]) - _reference_row(reference, city.clusters.shape[1])
    return Attribution(
        cluster=i,
        neighborhood=j,
        features=list(city.cluster_feature_names),
        contributions=contrib[j],
        directional=contrib[j] * np.sign(diff),
        prediction=float(rates[j]),
        reference_prediction=float(rates[j] - delta[j]),
        residual=float(residual[j]),
    )


def attribute_dates(model: SimGatModel, city: CityGraph, dates, reference=None,
                    freeze_attention: bool = False) -> AttributionReport:
    """Attribution over every (cluster, neighborhood) pair for each date."""
    n, l = city.clusters.shape
    ref = _reference_row(reference, l)
    sign = np.sign(city.clusters - ref[None, :])
    D = len(dates)
    C = np.zeros((D, n, city.m, l))
    delta = np.zeros((D, n, city.m))
    resid = np.zeros((D, n, city.m))
    for d, date in enumerate(dates):
        w = _window(model, city, date)
        for i in range(n):
            C[d, i], delta[d, i], resid[d, i], _ = attribute_cluster(model, city, w, i, ref, freeze_attention)
    desc = "zero vector (average cluster)" if reference is None else "user-supplied cluster feature row"
    return AttributionReport(
        dates=list(dates),
        cluster_ids=list(city.cluster_ids),
        neighborhood_ids=list(city.neighborhood_ids),
        features=list(city.cluster_feature_names),
        contributions=C,
        directional=C * sign[None, :, None, :],
        delta=delta,
        residual=resid,
        reference=desc,
        frozen_attention=freeze_attention,
    )


def box_stats(values) -> dict:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "mean": float(v.mean())}


def _summaries(report: AttributionReport, d: int, neighborhoods=None) -> dict:
    sel = slice(None) if neighborhoods is None else np.asarray(neighborhoods)
    out = {"contribution": {}, "directional": {}}
    for f, name in enumerate(report.features):
        out["contribution"][name] = box_stats(report.contributions[d][:, sel, f])
        out["directional"][name] = box_stats(report.directional[d][:, sel, f])
    return out


def scenario_contrast(model: SimGatModel, city: CityGraph, dates: dict, reference=None,
                      freeze_attention: bool = False):
    """Per-variable box statistics for each named scenario date.

    ``dates`` maps a scenario name (e.g. normal / hazard / lockdown) to a
    date.  Returns ``(summaries, report)`` where ``summaries[name]`` holds
    ``{"date", "contribution": {feature: box}, "directional": {...}}``.
    """
    if not dates:
        raise ValueError("no scenario dates given")
    names = list(dates)
    for name in names:
        city.date_index(dates[name])  # raises on a missing date
    report = attribute_dates(model, city, [dates[k] for k in names], reference, freeze_attention)
    summaries = {}
    for d, name in enumerate(names):
        summaries[name] = {"date": str(dates[name]), **_summaries(report, d)}
    return summaries, report


def neighborhood_attribute(city: CityGraph, attribute: str) -> np.ndarray:
    """Raw values of a neighborhood attribute when the stats allow inversion,
    standardized values otherwise (the ranking is the same either way)."""
    if attribute not in city.neighborhood_feature_names:
        raise KeyError(f"unknown neighborhood attribute {attribute!r}")
    col = city.neighborhood_feature_names.index(attribute)
    stats = city.stats.get("neighborhoods")
    if stats is not None:
        return stats.invert(city.neighborhoods)[:, col]
    return np.asarray(city.neighborhoods[:, col], dtype=float)


def group_contrast(model: SimGatModel, city: CityGraph, date, attribute: str, k: int = 10,
                   reference=None, freeze_attention: bool = False, report: AttributionReport | None = None,
                   values=None):
    """Top-k versus bottom-k neighborhoods ranked by ``attribute``.

    Returns ``(result, report)``; ``result`` holds the two id lists, the
    per-variable box statistics for each group and, per feature, the
    (attribute value, contribution) scatter over all pairs.  A ``report``
    that already covers ``date`` is reused instead of recomputed.  ``values``
    supplies the attribute for attributes that are not model features.
    """
    if values is None:
        values = neighborhood_attribute(city, attribute)
    values = np.asarray(values, dtype=float)
    if values.shape != (city.m,):
        raise ValueError(f"need one {attribute!r} value per neighborhood, got shape {values.shape}")
    if np.ptp(values) == 0:
        raise ValueError(f"attribute {attribute!r} is constant: no ranking possible")
    if not 1 <= k <= city.m // 2:
        raise ValueError(f"k must lie in [1, m/2] = [1, {city.m // 2}], got {k}")
    order = np.lexsort((np.arange(city.m), values))  # ascending, ties by index
    bottom, top = np.sort(order[:k]), np.sort(order[::-1][:k])
    keys = [] if report is None else [str(x) for x in report.dates]
    if str(date) in keys:
        d = keys.index(str(date))
    else:
        report, d = attribute_dates(model, city, [date], reference, freeze_attention), 0
    scatter = {}
    vals = np.broadcast_to(values[None, :], (city.n, city.m)).ravel()
    for f, name in enumerate(report.features):
        scatter[name] = [[float(a), float(c)] for a, c in zip(vals, report.contributions[d][:, :, f].ravel())]
    result = {
        "date": str(date),
        "attribute": attribute,
        "k": k,
        "top": [city.neighborhood_ids[j] for j in top],
        "bottom": [city.neighborhood_ids[j] for j in bottom],
        "top_index": top.tolist(),
        "bottom_index": bottom.tolist(),
        "summaries": {"top": _summaries(report, d, top), "bottom": _summaries(report, d, bottom)},
        "scatter": scatter,
    }
    return result, report
