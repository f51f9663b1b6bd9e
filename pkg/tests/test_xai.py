import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simgat import autodiff as ad
from simgat.autodiff import Tape, Tensor, propagate_multipliers
from simgat.domain import NEIGHBORHOOD_COLUMNS
from simgat.model import SimGatConfig
from simgat.synthcity import ScenarioSpec, generate
from simgat.training import fit_simgat
from simgat.xai import (
    attribute_cluster,
    attribute_dates,
    box_stats,
    deeplift_attribute,
    group_contrast,
    neighborhood_attribute,
    scenario_contrast,
)


@pytest.fixture(scope="module")
def trained(desk):
    cfg = SimGatConfig(hidden_dim=4, lstm_window=3, epochs=5, seed=0)
    model, _, _ = fit_simgat(desk.city, desk.flows, cfg)
    return model, desk.city


def _window(city, model, t):
    return city.env[t - model.config.lstm_window + 1 : t + 1]


@pytest.mark.parametrize("frozen", [False, True])
def test_contributions_add_up_to_the_rate_change(trained, frozen):
    model, city = trained
    for i in range(city.n):
        contrib, delta, residual, rates = attribute_cluster(model, city, _window(city, model, 8), i,
                                                            freeze_attention=frozen)
        assert residual.max() < 1e-9
        np.testing.assert_allclose(contrib.sum(axis=1), delta, atol=1e-9)
        assert np.all(rates > 0)


def test_single_target_matches_cluster_sweep(trained):
    model, city = trained
    w = _window(city, model, 9)
    a = deeplift_attribute(model, city, w, (2, 4))
    contrib, delta, _, _ = attribute_cluster(model, city, w, 2)
    np.testing.assert_array_equal(a.contributions, contrib[4])
    assert a.delta == pytest.approx(delta[4], abs=1e-12)
    np.testing.assert_array_equal(a.directional, a.contributions * np.sign(city.clusters[2]))
    with pytest.raises(IndexError):
        deeplift_attribute(model, city, w, (0, city.m))


def test_identical_input_and_reference_give_zero(trained):
    model, city = trained
    contrib, delta, _, _ = attribute_cluster(model, city, _window(city, model, 8), 1, reference=city.clusters[1])
    assert np.all(contrib == 0) and np.all(delta == 0)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(-20, 20))
def test_softmax_attributions_ignore_logit_shifts(seed, c):
    rng = np.random.default_rng(seed)
    W, v = rng.normal(size=(3, 4)), rng.normal(size=4)
    x, ref = rng.normal(size=3), rng.normal(size=3)

    def contributions(shift):
        outs, tapes, ins = [], [], []
        for val in (x, ref):
            with Tape() as tape:
                t = Tensor(val, requires_grad=True)
                outs.append(ad.softmax(t @ W + shift, axis=-1) @ v)
            tapes.append(tape)
            ins.append(t)
        return propagate_multipliers(tapes[0], tapes[1], outs[0], outs[1], [ins[0]])[0] * (x - ref)

    np.testing.assert_allclose(contributions(c), contributions(0.0), atol=1e-9)


def test_report_layout_and_rows(trained):
    model, city = trained
    dates = city.dates[5:7]
    rep = attribute_dates(model, city, dates)
    l = city.clusters.shape[1]
    assert rep.contributions.shape == (2, city.n, city.m, l)
    rows = list(rep.rows())
    assert len(rows) == 2 * city.n * city.m * l
    assert rows[0][:4] == (str(dates[0]), city.cluster_ids[0], city.neighborhood_ids[0], city.cluster_feature_names[0])


def test_early_dates_lack_a_window(trained):
    model, city = trained
    with pytest.raises(ValueError, match="history"):
        attribute_dates(model, city, [city.dates[0]])


def test_box_stats_match_percentiles():
    v = np.random.default_rng(0).normal(size=101)
    b = box_stats(v)
    assert (b["q1"], b["median"], b["q3"]) == tuple(np.percentile(v, [25, 50, 75]))
    assert b["min"] == v.min() and b["max"] == v.max()
    with pytest.raises(ValueError):
        box_stats([])


def test_scenario_contrast_names_and_missing_dates(trained):
    model, city = trained
    summaries, rep = scenario_contrast(model, city, {"normal": city.dates[4], "storm": city.dates[5]})
    assert list(summaries) == ["normal", "storm"]
    assert set(summaries["storm"]["contribution"]) == set(city.cluster_feature_names)
    with pytest.raises(KeyError):
        scenario_contrast(model, city, {"x": "2030-01-01"})


def test_group_contrast_ranks_and_validates(trained):
    model, city = trained
    values = neighborhood_attribute(city, "population")
    res, rep = group_contrast(model, city, city.dates[6], "population", k=2)
    assert set(res["top_index"]) == set(np.argsort(values)[-2:])
    assert set(res["bottom_index"]) == set(np.argsort(values)[:2])
    assert len(res["scatter"]["chain_ratio"]) == city.n * city.m
    again, _ = group_contrast(model, city, city.dates[6], "population", k=2, report=rep)
    assert again == res
    with pytest.raises(ValueError, match=r"\[1, m/2\]"):
        group_contrast(model, city, city.dates[6], "population", k=city.m)
    with pytest.raises(ValueError, match="constant"):
        group_contrast(model, city, city.dates[6], "income", values=np.ones(city.m))
    with pytest.raises(KeyError):
        neighborhood_attribute(city, "income")


def test_planted_interaction_shows_in_the_low_group():
    # chain_ratio raises visits only from neighborhoods with below-median auto ownership
    probe = generate(ScenarioSpec(seed=7, n_neighborhoods=30, days=30))
    ao = probe.raw["neighborhoods"][:, NEIGHBORHOOD_COLUMNS.index("auto_ownership")]
    spec = ScenarioSpec(seed=7, n_neighborhoods=30, days=30, interaction={
        "feature": "chain_ratio", "attribute": "auto_ownership", "threshold": float(np.median(ao)), "coef": 1.5})
    syn = generate(spec)
    model, _, _ = fit_simgat(syn.city, syn.flows, SimGatConfig(epochs=40, seed=0))
    res, rep = group_contrast(model, syn.city, syn.city.dates[-3], "auto_ownership", k=5)
    f = syn.city.cluster_feature_names.index("chain_ratio")
    mag = np.abs(rep.contributions[0, :, :, f])
    assert np.median(mag[:, res["bottom_index"]]) > np.median(mag[:, res["top_index"]])
