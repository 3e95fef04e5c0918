import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dclab.context import (
    INTER, INTRA, FeatureSpec, PredictorSet, Sample, StepPredictor, extract_features,
    feature_layout, fit_predictors, predict_params, predictors_from_text, predictors_to_text,
    side_channel, step_features,
)
from dclab.entropy import SCALE_FLOOR
from dclab.errors import ConfigError, ContractViolation, InputError, NumericalError, StreamError
from dclab.lattice import Lattice
from dclab.schedule import build_schedule
from dclab.sources import GaussMarkovSpec, conditional_stats_oracle, gauss_markov_field

from oracles import ar1_conditional

LEFT_ONLY = FeatureSpec(side=False, temporal=False, offsets=((0, -1),))


def test_quadtree_step0_has_no_spatial_or_cross():
    for g in range(4):
        lay = feature_layout("quadtree", 0, g, FeatureSpec(), INTER)
        assert lay.names == ("side", "temporal")


def test_quadtree_step3_has_eight_neighbors_and_three_groups():
    for g in range(4):
        lay = feature_layout("quadtree", 3, g, FeatureSpec())
        assert len(lay.spatial) == 8 and len(lay.cross) == 3


def test_zero_latent_features():
    sched = build_schedule("quadtree", 8, 8)
    zero = Lattice.zeros(4, 8, 8)
    g = 1
    r, c = [p for p in np.argwhere(sched.order[g] == 3) if 0 < p[0] < 7 and 0 < p[1] < 7][0]
    vec = extract_features(zero, sched, 3, g, (int(r), int(c)), side=zero)
    lay = feature_layout("quadtree", 3, g, FeatureSpec())
    vals = vec[lay.spatial_value_columns]
    flags = vec[[i + 1 for i in lay.spatial_value_columns]]
    assert np.all(vals == 0) and np.all(flags == 1)


def test_extract_rejects_wrong_step():
    sched = build_schedule("checkerboard", 4, 4)
    with pytest.raises(InputError):
        extract_features(Lattice.zeros(1, 4, 4), sched, 1, 0, (0, 0), side=Lattice.zeros(1, 4, 4))


def test_feature_spec_needs_a_source():
    with pytest.raises(InputError):
        FeatureSpec(side=False, temporal=False, axis=False, diagonal=False, cross_group=False)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["quadtree", "checkerboard", "dual_spatial", "raster"]),
       st.integers(0, 2**31 - 1))
def test_causality_mutation(kind, seed):
    """Changing anything not yet coded never moves a current-step feature."""
    rng = np.random.default_rng(seed)
    h, w = 6, 7
    sched = build_schedule(kind, h, w)
    cpg = 2
    c = cpg * sched.group_count
    lat = rng.normal(size=(c, h, w))
    side = rng.normal(size=(c, h, w))
    s = int(rng.integers(0, sched.step_count))
    g = int(rng.integers(0, sched.group_count))
    pos = sched.steps[s].positions[g]
    if len(pos) == 0:
        return
    lay = feature_layout(kind, sched.step_class(s), g, FeatureSpec())
    before = step_features(lat, sched, g, pos, lay, side, audit=True)
    mutated = lat.copy()
    future = np.repeat(sched.order, cpg, axis=0) >= s
    mutated[future] = rng.normal(size=int(future.sum())) * 100
    after = step_features(mutated, sched, g, pos, lay, side, audit=True)
    assert np.array_equal(before, after)


def test_ar1_left_neighbor_matches_closed_form():
    spec = GaussMarkovSpec(250, 400, rho_h=0.9, seed=7)
    pset = fit_predictors([Sample(gauss_markov_field(spec).data)], "raster", spec=LEFT_ONLY)
    p = pset.get(INTRA, 0, 0)
    w_ref, std_ref = ar1_conditional(0.9, 1.0)
    assert abs(p.weights[p.layout.spatial_value_columns[0]] - w_ref) <= 0.02
    assert abs(p.scale - std_ref) <= 0.03 * std_ref


def test_iid_source_weights_vanish():
    spec = GaussMarkovSpec(128, 128, channels=4, seed=3)
    ctx = FeatureSpec(side=False, temporal=False)
    pset = fit_predictors([Sample(gauss_markov_field(spec).data)], "quadtree", ridge_lambda=1e-6,
                          spec=ctx)
    for (ft, cls, g), p in pset.predictors.items():
        cols = p.layout.spatial_value_columns + p.layout.cross_value_columns
        assert np.all(np.abs(p.weights[cols]) < 0.05)
        assert abs(p.scale - 1.0) <= 0.03


def test_constant_source_clamps_scale():
    lat = np.full((1, 32, 32), 2.5)
    pset = fit_predictors([Sample(lat, side_channel(lat))], "checkerboard", ridge_lambda=1e-6)
    for p in pset.predictors.values():
        assert p.scale == SCALE_FLOOR
        assert predict_params(p, np.zeros(p.layout.size)).scale == SCALE_FLOOR


def test_more_context_never_hurts_in_sample():
    spec = GaussMarkovSpec(64, 64, channels=4, rho_h=0.8, rho_v=0.7, rho_c=0.5, seed=2)
    lat = gauss_markov_field(spec).data
    side = side_channel(lat)
    nested = [
        FeatureSpec(side=True, temporal=False, axis=False, diagonal=False, cross_group=False),
        FeatureSpec(side=True, temporal=False, axis=True, diagonal=False, cross_group=False),
        FeatureSpec(side=True, temporal=False, axis=True, diagonal=True, cross_group=False),
        FeatureSpec(side=True, temporal=False, axis=True, diagonal=True, cross_group=True),
    ]
    scales = []
    for fs in nested:
        pset = fit_predictors([Sample(lat, side)], "quadtree", ridge_lambda=1e-9, spec=fs)
        scales.append([pset.get(INTRA, s, g).scale for s in range(4) for g in range(4)])
    scales = np.array(scales)
    assert np.all(np.diff(scales, axis=0) <= 1e-9)


def test_rank_deficient_without_ridge():
    # on a square grid several availability flags coincide, so the design is singular
    spec = GaussMarkovSpec(32, 32, channels=4, rho_h=0.5, seed=1)
    lat = gauss_markov_field(spec).data
    sample = Sample(lat, side_channel(lat))
    with pytest.raises(NumericalError):
        fit_predictors([sample], "quadtree")
    fit_predictors([sample], "quadtree", ridge_lambda=1e-3)


def test_too_few_samples():
    with pytest.raises(InputError):
        fit_predictors([Sample(np.zeros((4, 4, 4)))], "quadtree")


def test_fit_is_deterministic_and_text_round_trips():
    spec = GaussMarkovSpec(32, 32, channels=4, rho_h=0.9, rho_v=0.9, seed=4)
    lat = gauss_markov_field(spec).data
    a = fit_predictors([Sample(lat, side_channel(lat))], "quadtree", ridge_lambda=1e-6,
                       scale_model="affine")
    b = fit_predictors([Sample(lat, side_channel(lat))], "quadtree", ridge_lambda=1e-6,
                       scale_model="affine")
    text = predictors_to_text(a)
    assert text == predictors_to_text(b)
    back = predictors_from_text(text)
    X = np.random.default_rng(0).normal(size=(20, a.get(INTRA, 3, 2).layout.size))
    for key, p in a.predictors.items():
        m0, s0 = p.predict(X[:, :p.layout.size])
        m1, s1 = back.predictors[key].predict(X[:, :p.layout.size])
        assert np.array_equal(m0, m1) and np.array_equal(s0, s1)
    with pytest.raises(StreamError):
        predictors_from_text("garbage")


def test_predictor_set_lookup_errors():
    pset = PredictorSet("checkerboard", 1, FeatureSpec())
    with pytest.raises(ConfigError):
        pset.get(INTRA, 0, 0)
    with pytest.raises(ConfigError):
        pset.check(build_schedule("quadtree", 4, 4), INTRA)


def test_affine_scale_respects_floor():
    lay = feature_layout("checkerboard", 1, 0, FeatureSpec())
    p = StepPredictor(lay, np.zeros(lay.size), 0.0, 1.0, np.zeros(lay.size), -5.0)
    _, scale = p.predict(np.zeros((3, lay.size)))
    assert np.all(scale == SCALE_FLOOR)


def _weight_error(n_side, seeds):
    ctx = ((0, -1), (-1, 0))
    ref, _ = conditional_stats_oracle(GaussMarkovSpec(8, 8, rho_h=0.9, rho_v=0.9), ctx)
    errs = []
    for seed in seeds:
        spec = GaussMarkovSpec(n_side, n_side, rho_h=0.9, rho_v=0.9, seed=seed)
        pset = fit_predictors([Sample(gauss_markov_field(spec).data)], "raster",
                              spec=FeatureSpec(side=False, temporal=False, offsets=ctx))
        p = pset.get(INTRA, 0, 0)
        errs.append(p.weights[p.layout.spatial_value_columns] - ref)
    return float(np.sqrt(np.mean(np.square(errs))))


def test_fit_converges_to_oracle():
    small = _weight_error(48, range(100, 130))
    large = _weight_error(96, range(200, 230))  # 4x the samples
    assert 0.3 < large / small < 0.75
