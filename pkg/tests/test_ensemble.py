"""Boosting algebra, member training, voting, and ensemble persistence.

The independent oracle is a from-scratch textbook AdaBoost round written in
plain Python (math module, list comprehensions); the library must agree
with it elementwise at learning rate 1 without sharing any code paths.
"""

import math

import numpy as np
import pytest

from synthscan.ensemble import (
    EnsembleConfig,
    EnsembleModel,
    Member,
    clamp_error,
    evaluate,
    init_weights,
    load_ensemble,
    model_weight,
    predict,
    predict_batch,
    save_ensemble,
    train_ensemble,
    train_member,
    update_weights,
    weighted_error,
)
from synthscan.errors import (
    CorruptDataError,
    DataFormatError,
    NumericError,
    ParameterError,
)
from synthscan.features import synth_features
from synthscan.mlp import TrainConfig, init_mlp, predict_sign, save_model


# ---------------------------------------------------------------- oracles


def reference_boost_round(w, preds, labels, eta=1.0, lo=0.001, hi=0.5):
    """Plain-Python weighted-error -> clamp -> model weight -> reweight."""
    mass = sum(w)
    eps = sum(wi for wi, p, y in zip(w, preds, labels) if p != y) / mass
    eps = min(max(eps, lo), hi)
    alpha = 0.5 * math.log((1.0 - eps) / eps)
    scaled = [wi * math.exp(-eta * alpha * p * y) for wi, p, y in zip(w, preds, labels)]
    z = sum(scaled)
    return [v / z for v in scaled], alpha, eps


def rigged_voter(in_dim, vote):
    """Zero-weight network whose output bias alone fixes the vote.

    All-zero weights keep every pre-activation at zero through the stack, so
    the eval-mode output is sigmoid(final bias): bias 0 -> 0.5 -> +1 under
    the >= 0.5 rule, bias -1 -> below 0.5 -> -1.
    """
    m = init_mlp([in_dim, 4, 1], seed=0)
    for w in m.weights:
        w[:] = 0.0
    for b in m.biases:
        b[:] = 0.0
    if vote < 0:
        m.biases[-1][0] = -1.0
    return m


def test_oracle_round_sanity():
    # half the mass wrong -> error 0.5 -> alpha 0 -> weights unchanged
    w, alpha, eps = reference_boost_round(
        [0.25] * 4, [1, 1, 1, 1], [1, 1, -1, -1]
    )
    assert eps == 0.5 and alpha == 0.0
    assert w == [0.25] * 4


def test_rigged_voters_vote_as_labeled():
    x = np.random.default_rng(0).normal(size=(6, 5))
    assert (predict_sign(rigged_voter(5, +1), x) == 1).all()
    assert (predict_sign(rigged_voter(5, -1), x) == -1).all()


# ---------------------------------------------------------- weight algebra


def test_init_weights_uniform():
    w = init_weights(4)
    assert w.tolist() == [0.25, 0.25, 0.25, 0.25]
    assert init_weights(1).tolist() == [1.0]
    assert abs(init_weights(100_000).sum() - 1.0) < 1e-9


def test_init_weights_rejects_empty():
    with pytest.raises(ParameterError):
        init_weights(0)


def test_weighted_error_uniform_half_wrong():
    x = np.zeros((4, 5))
    labels = np.array([1, 1, -1, -1], dtype=np.int8)
    err = weighted_error(rigged_voter(5, +1), x, labels, init_weights(4))
    assert err == 0.5


def test_weighted_error_weights_mass_not_count():
    # the two lightest samples are the wrong ones: 0.1 + 0.1 of mass 1
    x = np.zeros((4, 5))
    labels = np.array([1, 1, -1, -1], dtype=np.int8)
    w = np.array([0.4, 0.4, 0.1, 0.1])
    assert weighted_error(rigged_voter(5, +1), x, labels, w) == pytest.approx(
        0.2, abs=1e-15
    )


def test_weighted_error_normalizes_by_total_mass():
    x = np.zeros((4, 5))
    labels = np.array([1, 1, -1, -1], dtype=np.int8)
    w = np.array([2.0, 2.0, 1.0, 1.0])
    assert weighted_error(rigged_voter(5, +1), x, labels, w) == pytest.approx(
        1.0 / 3.0, abs=1e-15
    )


def test_weighted_error_extremes():
    x = np.zeros((3, 5))
    all_pos = np.array([1, 1, 1], dtype=np.int8)
    all_neg = np.array([-1, -1, -1], dtype=np.int8)
    assert weighted_error(rigged_voter(5, +1), x, all_pos, init_weights(3)) == 0.0
    assert weighted_error(rigged_voter(5, +1), x, all_neg, init_weights(3)) == 1.0


def test_clamp_error_endpoints_and_interior():
    assert clamp_error(0.0) == 0.001
    assert clamp_error(0.7) == 0.5
    assert clamp_error(0.3) == 0.3
    assert clamp_error(0.0005) == 0.001
    assert clamp_error(0.2, lo=0.05, hi=0.25) == 0.2
    assert clamp_error(0.3, lo=0.05, hi=0.25) == 0.25


def test_model_weight_values():
    assert model_weight(0.5) == 0.0
    assert model_weight(0.001) == pytest.approx(0.5 * math.log(999.0), abs=1e-12)
    # strictly decreasing in the error
    grid = [0.001, 0.01, 0.1, 0.25, 0.4, 0.499]
    values = [model_weight(e) for e in grid]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_model_weight_domain():
    with pytest.raises(ParameterError):
        model_weight(0.0)
    with pytest.raises(ParameterError):
        model_weight(1.0)


def test_update_weights_alpha_zero_is_identity():
    w = init_weights(4)
    out = update_weights(w, 0.0, [1, -1, 1, -1], [1, 1, -1, -1], eta=0.25)
    np.testing.assert_array_equal(out, w)


def test_update_weights_two_group_ratio():
    # uniform start, one shared prediction sign: every miss gains the same
    # factor and every hit loses the same factor, so the miss/hit weight
    # ratio is exactly exp(2 * eta * alpha)
    n = 8
    preds = np.ones(n)
    labels = np.array([1, 1, 1, 1, -1, -1, -1, -1])
    alpha, eta = 0.8, 0.25
    out = update_weights(init_weights(n), alpha, preds, labels, eta)
    ratio = out[4] / out[0]
    assert ratio == pytest.approx(math.exp(2.0 * eta * alpha), rel=1e-12)
    assert np.allclose(out[:4], out[0]) and np.allclose(out[4:], out[4])


def test_update_weights_simplex_preserved_over_random_rounds():
    rng = np.random.default_rng(99)
    w = init_weights(64)
    for _ in range(100):
        preds = rng.choice([-1, 1], size=64)
        labels = rng.choice([-1, 1], size=64)
        alpha = float(rng.uniform(0.0, 3.0))
        eta = float(rng.uniform(0.05, 1.0))
        w = update_weights(w, alpha, preds, labels, eta)
        assert abs(w.sum() - 1.0) < 1e-9
        assert (w > 0).all()


def test_update_weights_rejects_bad_signs_and_shapes():
    w = init_weights(3)
    with pytest.raises(ParameterError):
        update_weights(w, 0.5, [1, 0, 1], [1, 1, 1], eta=1.0)
    with pytest.raises(ParameterError):
        update_weights(w, 0.5, [1, 1, 1], [1, 1, -2], eta=1.0)
    with pytest.raises(ParameterError):
        update_weights(w, 0.5, [1, 1], [1, 1, 1], eta=1.0)


def test_update_weights_degenerate_mass_raises():
    w = init_weights(2)
    with pytest.raises(NumericError):
        update_weights(w, 1e6, [1, 1], [-1, -1], eta=1e6)


def test_matches_textbook_adaboost_at_unit_rate():
    # the library round (error -> clamp -> alpha -> reweight) must agree
    # with the independent plain-Python implementation elementwise
    rng = np.random.default_rng(1234)
    for _ in range(50):
        n = 20
        w = rng.random(n) + 0.01
        w = w / w.sum()
        preds = rng.choice([-1, 1], size=n)
        labels = rng.choice([-1, 1], size=n)
        ref_w, ref_alpha, ref_eps = reference_boost_round(
            w.tolist(), preds.tolist(), labels.tolist()
        )
        eps = float(w[preds != labels].sum() / w.sum())
        alpha = model_weight(clamp_error(eps))
        ours = update_weights(w, alpha, preds, labels, eta=1.0)
        assert alpha == pytest.approx(ref_alpha, abs=1e-12)
        assert clamp_error(eps) == pytest.approx(ref_eps, abs=1e-12)
        np.testing.assert_allclose(ours, ref_w, rtol=0, atol=1e-12)


# -------------------------------------------------------------- member loop


def member_config(**kw):
    train = TrainConfig(
        learning_rate=kw.pop("learning_rate", 3e-2),
        batch_size=kw.pop("batch_size", 64),
        epochs=kw.pop("epochs", 3),
        seed=kw.pop("seed", 7),
    )
    return EnsembleConfig(
        T=kw.pop("T", 6), stride=kw.pop("stride", 3), hidden_dims=kw.pop("hidden_dims", (8, 4)), train=train, **kw
    )


def separable_cloud(n_per_class, dim, gap, seed):
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    labels = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)]).astype(np.int8)
    x = rng.standard_normal((2 * n_per_class, dim)) + labels[:, None] * (gap / 2.0) * direction
    return x, labels


def test_train_member_final_alpha_matches_logged_error():
    x, y = separable_cloud(60, 4, gap=2.0, seed=3)
    cfg = member_config(epochs=3)
    res = train_member(0, x, y, cfg)
    assert len(res.log) == 3
    assert res.member.timestep == 0
    expected = model_weight(clamp_error(res.log[-1].weighted_error, cfg.eps_lo, cfg.eps_hi))
    assert res.member.alpha == expected


def test_train_member_perfect_classifier_hits_clamp_floor():
    # hugely separated classes: the trained net misses nothing, the zero
    # error clamps to 0.001, and the member weight is 0.5 ln 999
    x, y = separable_cloud(200, 4, gap=10.0, seed=11)
    res = train_member(0, x, y, member_config(epochs=5))
    assert res.log[-1].weighted_error == 0.0
    assert res.member.alpha == 0.5 * math.log(999.0)


def test_train_member_reweights_misses_above_uniform():
    x, y = separable_cloud(100, 4, gap=1.0, seed=5)
    cfg = member_config(epochs=1)
    res = train_member(0, x, y, cfg)
    eps = res.log[-1].weighted_error
    assert 0.0 < eps < 0.5  # premise: an imperfect but better-than-chance round
    miss = predict_sign(res.member.model, x) != y
    uniform = 1.0 / len(x)
    assert (res.final_sample_weights[miss] > uniform).all()
    assert (res.final_sample_weights[~miss] < uniform).all()
    assert abs(res.final_sample_weights.sum() - 1.0) < 1e-9


def test_train_member_is_deterministic(tmp_path):
    x, y = separable_cloud(50, 4, gap=2.0, seed=9)
    cfg = member_config(epochs=2)
    a = train_member(3, x, y, cfg)
    b = train_member(3, x, y, cfg)
    save_model(a.member.model, tmp_path / "a.emlp")
    save_model(b.member.model, tmp_path / "b.emlp")
    assert (tmp_path / "a.emlp").read_bytes() == (tmp_path / "b.emlp").read_bytes()
    assert a.member.alpha == b.member.alpha
    np.testing.assert_array_equal(a.final_sample_weights, b.final_sample_weights)


def test_member_seeds_differ_by_timestep():
    x, y = separable_cloud(50, 4, gap=2.0, seed=9)
    cfg = member_config(epochs=1)
    a = train_member(0, x, y, cfg)
    b = train_member(3, x, y, cfg)
    assert any(
        not np.array_equal(wa, wb)
        for wa, wb in zip(a.member.model.weights, b.member.model.weights)
    )


# ------------------------------------------------------------ full ensemble


def small_dataset(**kw):
    return synth_features(
        n_per_class=kw.pop("n_per_class", 60),
        dim=kw.pop("dim", 6),
        timesteps=kw.pop("timesteps", (0, 3, 6)),
        gap=kw.pop("gap", 5.0),
        overlap_frac=kw.pop("overlap_frac", 0.0),
        seed=kw.pop("seed", 21),
    )


def test_train_ensemble_structure_and_accuracy():
    ds = small_dataset()
    cfg = member_config(epochs=3)
    model, logs = train_ensemble(ds, cfg)
    assert tuple(m.timestep for m in model.members) == (0, 3, 6)
    assert sorted(logs) == [0, 3, 6]
    assert all(len(log) == 3 for log in logs.values())
    result = evaluate(model, ds)
    assert result.accuracy >= 0.9


def test_train_ensemble_requires_all_timesteps():
    ds = small_dataset(timesteps=(0, 3))
    with pytest.raises(ParameterError):
        train_ensemble(ds, member_config())


def test_train_ensemble_chained_weights_runs_deterministically():
    ds = small_dataset(n_per_class=30)
    cfg = member_config(epochs=2, chain_weights=True)
    m1, _ = train_ensemble(ds, cfg)
    m2, _ = train_ensemble(ds, cfg)
    for a, b in zip(m1.members, m2.members):
        assert a.alpha == b.alpha
        for wa, wb in zip(a.model.weights, b.model.weights):
            np.testing.assert_array_equal(wa, wb)


def test_ensemble_model_rejects_wrong_timestep_grid():
    m = rigged_voter(5, +1)
    with pytest.raises(ParameterError):
        EnsembleModel(
            members=(Member(0, m, 1.0), Member(2, m, 1.0)), stride=3, T=3, eta=0.25
        )


# ----------------------------------------------------------------- voting


def rigged_ensemble(votes, alphas, in_dim=5):
    members = tuple(
        Member(k, rigged_voter(in_dim, v), a)
        for k, (v, a) in enumerate(zip(votes, alphas))
    )
    return EnsembleModel(members=members, stride=1, T=len(votes) - 1, eta=0.25)


def test_predict_zero_score_breaks_toward_synthetic():
    e = rigged_ensemble(votes=[+1, -1, -1], alphas=[2.0, 1.0, 1.0])
    feats = {k: np.zeros(5) for k in range(3)}
    label, score = predict(e, feats)
    assert score == 0.0
    assert label == 1


def test_predict_weighted_majority():
    e = rigged_ensemble(votes=[+1, -1, -1], alphas=[0.5, 1.0, 1.0])
    label, score = predict(e, {k: np.zeros(5) for k in range(3)})
    assert label == -1
    assert score == pytest.approx(-1.5)
    e2 = rigged_ensemble(votes=[+1, +1, +1], alphas=[0.5, 0.5, 0.5])
    label2, score2 = predict(e2, {k: np.zeros(5) for k in range(3)})
    assert (label2, score2) == (1, pytest.approx(1.5))


def test_predict_single_member_equals_sign_prediction():
    x, y = separable_cloud(20, 4, gap=3.0, seed=13)
    res = train_member(0, x, y, member_config(epochs=2))
    single = EnsembleModel(members=(res.member,), stride=1, T=0, eta=0.25)
    direct = predict_sign(res.member.model, x)
    for i in range(len(x)):
        label, score = predict(single, {0: x[i]})
        assert label == direct[i]
        assert score == pytest.approx(res.member.alpha * direct[i])


def test_predict_missing_timestep_raises():
    e = rigged_ensemble(votes=[+1, -1], alphas=[1.0, 1.0])
    with pytest.raises(ParameterError):
        predict(e, {0: np.zeros(5)})


def test_predict_batch_matches_per_image_predict():
    ds = small_dataset(n_per_class=15)
    model, _ = train_ensemble(ds, member_config(epochs=2))
    labels, scores = predict_batch(model, ds)
    ts = {t: i for i, t in enumerate(ds.timesteps)}
    for i in range(ds.n_images):
        feats = {t: ds.vectors[i, ts[t], :] for t in ds.timesteps}
        label_i, score_i = predict(model, feats)
        assert labels[i] == label_i
        assert scores[i] == pytest.approx(score_i, abs=1e-12)


# --------------------------------------------------------------- evaluation


def test_evaluate_counting_identities():
    ds = small_dataset(n_per_class=25, overlap_frac=0.3)
    model, _ = train_ensemble(ds, member_config(epochs=2))
    r = evaluate(model, ds)
    assert r.n == ds.n_images
    assert r.accuracy == r.correct / r.n
    assert sum(s.n for s in r.per_tag.values()) == r.n
    assert sum(s.correct for s in r.per_tag.values()) == r.correct
    assert sum(r.confusion.values()) == r.n
    assert r.confusion["tp"] + r.confusion["tn"] == r.correct
    assert set(r.per_tag) == {"hard", "original"}
    assert r.per_class[1].n == r.per_class[-1].n == ds.n_images // 2


def test_evaluate_constant_voter_on_balanced_data_is_half():
    ds = small_dataset(n_per_class=20, timesteps=(0,))
    e = EnsembleModel(
        members=(Member(0, rigged_voter(ds.dim, +1), 1.0),), stride=1, T=0, eta=0.25
    )
    r = evaluate(e, ds)
    assert r.accuracy == 0.5
    assert r.confusion == {"tp": 20, "tn": 0, "fp": 20, "fn": 0}


# -------------------------------------------------------------- persistence


def test_save_load_round_trip(tmp_path):
    ds = small_dataset(n_per_class=20)
    model, _ = train_ensemble(ds, member_config(epochs=2))
    out = tmp_path / "ens"
    save_ensemble(model, out)
    loaded = load_ensemble(out)
    assert (loaded.T, loaded.stride, loaded.eta) == (model.T, model.stride, model.eta)
    assert [m.alpha for m in loaded.members] == [m.alpha for m in model.members]
    # predictions identical through the round trip
    l1, s1 = predict_batch(model, ds)
    l2, s2 = predict_batch(loaded, ds)
    np.testing.assert_array_equal(l1, l2)
    np.testing.assert_array_equal(s1, s2)
    # re-saving the loaded ensemble reproduces every byte
    out2 = tmp_path / "ens2"
    save_ensemble(loaded, out2)
    for f in sorted(out.iterdir()):
        assert (out2 / f.name).read_bytes() == f.read_bytes(), f.name


def test_load_ensemble_accepts_manifest_path(tmp_path):
    ds = small_dataset(n_per_class=15, timesteps=(0, 3, 6))
    model, _ = train_ensemble(ds, member_config(epochs=1))
    save_ensemble(model, tmp_path)
    loaded = load_ensemble(tmp_path / "ensemble.txt")
    assert len(loaded.members) == 3


def test_load_ensemble_missing_manifest(tmp_path):
    with pytest.raises(DataFormatError):
        load_ensemble(tmp_path / "nowhere")


def test_load_ensemble_member_count_mismatch(tmp_path):
    ds = small_dataset(n_per_class=15)
    model, _ = train_ensemble(ds, member_config(epochs=1))
    save_ensemble(model, tmp_path)
    manifest = tmp_path / "ensemble.txt"
    lines = manifest.read_text().splitlines()
    manifest.write_text("\n".join(lines[:-1]) + "\n")  # drop one member line
    with pytest.raises(CorruptDataError):
        load_ensemble(tmp_path)


def test_load_ensemble_bad_member_line(tmp_path):
    ds = small_dataset(n_per_class=15)
    model, _ = train_ensemble(ds, member_config(epochs=1))
    save_ensemble(model, tmp_path)
    manifest = tmp_path / "ensemble.txt"
    text = manifest.read_text().replace("\n0 ", "\nzero ", 1)
    manifest.write_text(text)
    with pytest.raises(CorruptDataError):
        load_ensemble(tmp_path)


def test_load_ensemble_missing_member_file(tmp_path):
    ds = small_dataset(n_per_class=15)
    model, _ = train_ensemble(ds, member_config(epochs=1))
    save_ensemble(model, tmp_path)
    (tmp_path / "member_03.emlp").unlink()
    with pytest.raises(CorruptDataError):
        load_ensemble(tmp_path)


def test_load_ensemble_bad_header(tmp_path):
    ds = small_dataset(n_per_class=15)
    model, _ = train_ensemble(ds, member_config(epochs=1))
    save_ensemble(model, tmp_path)
    manifest = tmp_path / "ensemble.txt"
    manifest.write_text(manifest.read_text().replace("stride = 3", "stride = soon"))
    with pytest.raises(CorruptDataError):
        load_ensemble(tmp_path)


# ------------------------------------------------------------ config checks


def test_config_validation():
    with pytest.raises(ParameterError):
        EnsembleConfig(T=24, stride=5)  # 5 does not divide 24
    with pytest.raises(ParameterError):
        EnsembleConfig(eta=0.0)
    with pytest.raises(ParameterError):
        EnsembleConfig(eps_lo=0.0)
    with pytest.raises(ParameterError):
        EnsembleConfig(eps_lo=0.4, eps_hi=0.3)
    with pytest.raises(ParameterError):
        EnsembleConfig(eps_hi=0.7)
    assert EnsembleConfig().member_timesteps == (0, 3, 6, 9, 12, 15, 18, 21, 24)
    assert EnsembleConfig(T=24, stride=8).member_timesteps == (0, 8, 16, 24)
