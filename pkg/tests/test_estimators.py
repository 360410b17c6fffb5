import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from fastkern import (
    AdditiveRegressor,
    BoxDomain,
    CgConfig,
    DiffOperatorSpec,
    FittedModel,
    LowBiasRegressor,
    MultiIndexGrid,
    OutOfDomainError,
    PhysicsInformedRegressor,
    SampleSet,
    SobolevRegressor,
    fit_additive,
    fit_dense_oracle,
    fit_lowbias,
    fit_pik_box,
    fit_pik_collocation,
    fit_sobolev,
    grid_search_lambda,
    predict,
    rhs_vector,
    schedule_hyperparams,
    sobolev_diagonal,
)

from .oracles import box_penalty_quadrature, derivative_features, design_matrix, direct_type2, rel

TIGHT = CgConfig(tol=1e-12)
FPRIME_MINUS_F = DiffOperatorSpec.parse("1:1,-1:0")


def _data(rng, n, d, L=1.0, lo=-1.0, hi=1.0):
    X = rng.uniform(lo * L, hi * L, (n, d))
    Y = np.sin(2 * X).sum(axis=1) + 0.3 * rng.standard_normal(n)
    return SampleSet(X, Y, L)


def _dense_solution(S, m, reg_diag, extra=None):
    Phi = design_matrix(S.X, m, S.L)
    A = Phi.conj().T @ Phi / S.n + np.diag(reg_diag)
    if extra is not None:
        A = A + extra
    return np.linalg.solve(A, Phi.conj().T @ S.Y / S.n)


def _sobolev_reg(d, m, s):
    return sobolev_diagonal(MultiIndexGrid(d, m), s) ** 2


# -- rhs_vector ----------------------------------------------------------------------

def test_rhs_zero_response(rng):
    S = SampleSet(rng.uniform(-1, 1, (20, 2)), np.zeros(20), 1.0)
    assert np.array_equal(rhs_vector(S, 3), np.zeros(49))


def test_rhs_single_origin_point():
    v = rhs_vector(SampleSet(np.zeros((1, 1)), [3.0], 1.0), 4)
    assert np.allclose(v, 3.0, atol=1e-9)


def test_rhs_matches_dense(rng):
    S = _data(rng, 80, 1)
    v = rhs_vector(S, 5)
    Phi = design_matrix(S.X, 5, 1.0)
    assert rel(v, Phi.conj().T @ S.Y / S.n) <= 1e-10
    assert rel(v[::-1], np.conj(v)) <= 1e-10


# -- fits against dense oracles --------------------------------------------------------

def test_sobolev_matches_dense(rng):
    S = _data(rng, 50, 1)
    model = fit_sobolev(S, 2.0, 0.1, 4)
    assert rel(model.theta, _dense_solution(S, 4, 0.1 * _sobolev_reg(1, 4, 2.0))) <= 1e-7
    assert model.report.converged and model.kind == "sobolev"


def test_huge_lambda_crushes_solution(rng):
    S = _data(rng, 50, 1)
    model = fit_sobolev(S, 2.0, 1e12, 4)
    assert np.linalg.norm(model.theta) <= 1e-9 * np.linalg.norm(rhs_vector(S, 4))


def test_lowbias_matches_dense_and_ignores_s(rng):
    S = _data(rng, 50, 1)
    a = fit_lowbias(S, 1.0, 0.1, 4)
    b = fit_lowbias(S, 3.5, 0.1, 4)
    assert rel(a.theta, _dense_solution(S, 4, np.full(9, 0.1))) <= 1e-7
    assert np.array_equal(a.theta, b.theta)


def test_pik_box_zero_mu_equals_sobolev(rng):
    S = _data(rng, 60, 1)
    box = BoxDomain([0.0], [1.0], 1.0)
    a = fit_pik_box(S, 1.5, 0.05, 0.0, FPRIME_MINUS_F, box, 4)
    b = fit_sobolev(S, 1.5, 0.05, 4)
    assert rel(a.theta, b.theta) <= 1e-12


def test_pik_box_matches_quadrature_oracle(rng):
    L = np.pi / 2
    S = _data(rng, 40, 1, L=L, lo=0, hi=1 / L)
    box = BoxDomain([0.0], [1.0], L)
    model = fit_pik_box(S, 1.0, 0.05, 1.0, FPRIME_MINUS_F, box, 3, cg=TIGHT)
    P = box_penalty_quadrature(3, L, FPRIME_MINUS_F.terms, [0.0], [1.0])
    ref = _dense_solution(S, 3, 0.05 * _sobolev_reg(1, 3, 1.0), P)
    assert rel(model.theta, ref) <= 1e-6


def test_pik_box_2d_laplacian_matches_quadrature(rng):
    S = _data(rng, 80, 2)
    op = DiffOperatorSpec.parse("1:20,1:02")
    box = BoxDomain([-0.5, 0.0], [0.5, 0.8], 1.0)
    model = fit_pik_box(S, 1.5, 0.05, 0.01, op, box, 2, cg=TIGHT)
    P = 0.01 * box_penalty_quadrature(2, 1.0, op.terms, [-0.5, 0.0], [0.5, 0.8], nodes=40)
    assert rel(model.theta, _dense_solution(S, 2, 0.05 * _sobolev_reg(2, 2, 1.5), P)) <= 1e-6


def test_pik_collocation_zero_mu_and_dense(rng):
    S = _data(rng, 40, 1)
    C = rng.uniform(-1, 1, (60, 1))
    z = fit_pik_collocation(S, C, 1.5, 0.05, 0.0, FPRIME_MINUS_F, 3)
    assert rel(z.theta, fit_sobolev(S, 1.5, 0.05, 3).theta) <= 1e-12
    model = fit_pik_collocation(S, C, 1.5, 0.05, 0.7, FPRIME_MINUS_F, 3, cg=TIGHT)
    Psi = derivative_features(C, 3, 1.0, FPRIME_MINUS_F.terms)
    ref = _dense_solution(S, 3, 0.05 * _sobolev_reg(1, 3, 1.5), 0.7 * Psi.conj().T @ Psi / 60)
    assert rel(model.theta, ref) <= 1e-6
    assert model.info["n_collocation"] == 60


def test_collocation_approaches_box(rng):
    L = np.pi / 2
    S = _data(rng, 500, 1, L=L, lo=0, hi=1 / L)
    box = BoxDomain([0.0], [1.0], L)
    C = rng.uniform(0, 1, (10**5, 1))
    a = fit_pik_collocation(S, C, 1.0, 0.01, 1.0, FPRIME_MINUS_F, 4, cg=TIGHT)
    b = fit_pik_box(S, 1.0, 0.01, 1.0, FPRIME_MINUS_F, box, 4, cg=TIGHT)
    # uniform collocation on a box of volume V estimates V^-1 int; rescale mu accordingly
    scale = box.volume / (4 * L)
    c = fit_pik_collocation(S, C, 1.0, 0.01, scale, FPRIME_MINUS_F, 4, cg=TIGHT)
    assert rel(c.theta, b.theta) <= 5e-2
    assert rel(a.theta, b.theta) > rel(c.theta, b.theta)


def test_additive_single_feature_equals_lowbias(rng):
    S = _data(rng, 100, 1)
    a = fit_additive(S, 2.0, 0.01, 5, cg=TIGHT)
    b = fit_lowbias(S, 2.0, 0.01, 5, cg=TIGHT)
    assert rel(a.theta, b.theta) <= 1e-10


def test_additive_matches_dense_block_gram(rng):
    S = _data(rng, 60, 3)
    model = fit_additive(S, 2.0, 0.05, 2)
    Phi = np.hstack([design_matrix(S.X[:, [l]], 2, 1.0) for l in range(3)])
    A = Phi.conj().T @ Phi / 60 + 0.05 * np.eye(15)
    assert rel(model.theta, np.linalg.solve(A, Phi.conj().T @ S.Y / 60)) <= 1e-7


def test_additive_large_dimension(rng):
    S = _data(rng, 500, 9)
    model = fit_additive(S, 2.0, 0.01, 3)
    assert model.theta.size == 9 * 7 and model.report.converged
    assert predict(model, S.X[:5]).shape == (5,)


# -- dense oracle ------------------------------------------------------------------------

def test_dense_oracle_least_squares_at_zero_lambda(rng):
    S = _data(rng, 200, 1)
    model = fit_dense_oracle(S, "lowbias", 1.0, 0.0, 3)
    Phi = design_matrix(S.X, 3, 1.0)
    ref = np.linalg.lstsq(Phi, S.Y.astype(complex), rcond=None)[0]
    assert rel(model.theta, ref) <= 1e-8


def test_dense_oracle_agrees_with_fast_sobolev(rng):
    for _ in range(20):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(1, 5 - d))
        S = _data(rng, int(rng.integers(20, 200)), d)
        lam = float(10 ** rng.uniform(-2, 0))
        s = d / 2 + float(rng.uniform(0.2, 2))
        oracle = fit_dense_oracle(S, "sobolev", s, lam, m)
        assert rel(oracle.theta, _dense_solution(S, m, lam * _sobolev_reg(d, m, s))) <= 1e-10
        assert rel(fit_sobolev(S, s, lam, m, cg=TIGHT).theta, oracle.theta) <= 1e-7


def test_dense_oracle_agrees_with_fast_additive(rng):
    for _ in range(10):
        d = int(rng.integers(2, 6))
        m = int(rng.integers(1, 5))
        S = _data(rng, int(rng.integers(50, 200)), d)
        lam = float(10 ** rng.uniform(-2, 0))
        a = fit_additive(S, 2.0, lam, m, cg=TIGHT)
        assert rel(a.theta, fit_dense_oracle(S, "additive", 2.0, lam, m).theta) <= 1e-7


def test_dense_oracle_caps(rng):
    with pytest.raises(ValueError):
        fit_dense_oracle(_data(rng, 10, 3), "sobolev", 2.0, 0.1, 6)
    with pytest.raises(ValueError):
        fit_dense_oracle(_data(rng, 5001, 1), "sobolev", 1.0, 0.1, 2)


# -- predict ---------------------------------------------------------------------------

def _model(theta, d, m, kind="sobolev"):
    return FittedModel(kind=kind, theta=theta, d=d, m=m, L=1.0, s=2.0, lam=0.1)


def test_predict_constant_model(rng):
    theta = np.zeros(25, dtype=complex)
    theta[12] = 2.5
    assert np.allclose(predict(_model(theta, 2, 2), rng.uniform(-1, 1, (30, 2))), 2.5, atol=1e-12)


def test_predict_matches_direct_summation(rng):
    m = 6
    theta = rng.standard_normal(13) + 1j * rng.standard_normal(13)
    theta = 0.5 * (theta + np.conj(theta[::-1]))
    X = rng.uniform(-1, 1, (100, 1))
    ref = direct_type2(np.pi * X / 2, theta, m)
    assert rel(predict(_model(theta, 1, m), X), ref.real) <= 1e-9


def test_predict_interpolation_regime(rng):
    S = _data(rng, 6, 1)
    model = fit_sobolev(S, 1.0, 1e-10, 4, cg=CgConfig(tol=1e-13))
    assert np.linalg.norm(predict(model, S.X) - S.Y) <= 1e-4 * np.linalg.norm(S.Y)


def test_predict_rejects_out_of_domain_rows(rng):
    model = _model(np.ones(9), 1, 4)
    X = np.array([[0.1], [1.5], [0.0], [-3.0]])
    with pytest.raises(OutOfDomainError) as info:
        predict(model, X)
    assert info.value.rows.tolist() == [1, 3]
    with pytest.raises(ValueError):
        predict(model, np.zeros((3, 2)))


def test_predict_warns_on_imaginary_residue():
    theta = np.zeros(9, dtype=complex)
    theta[5] = 1.0  # a single positive frequency: not Hermitian
    with pytest.warns(RuntimeWarning):
        predict(_model(theta, 1, 4), np.linspace(-0.9, 0.9, 20)[:, None])


# -- invariants --------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["sobolev", "lowbias", "additive"])
def test_hermitian_symmetry(rng, kind):
    d = 2
    S = _data(rng, 300, d)
    fitters = {"sobolev": fit_sobolev, "lowbias": fit_lowbias, "additive": fit_additive}
    model = fitters[kind](S, 1.5, 1e-3, 4)
    assert model.hermitian_defect() <= 1e-6


def test_pik_hermitian_symmetry(rng):
    S = _data(rng, 300, 1)
    model = fit_pik_box(S, 1.0, 1e-3, 1.0, FPRIME_MINUS_F, BoxDomain([-0.5], [0.5], 1.0), 6)
    assert model.hermitian_defect() <= 1e-6


def test_regularization_monotonicity(rng):
    S = _data(rng, 400, 1)
    lams = np.geomspace(1e-5, 10, 12)
    norms_low = [np.linalg.norm(fit_lowbias(S, 1.0, lam, 6, cg=TIGHT).theta) for lam in lams]
    assert all(b <= a + 1e-8 for a, b in zip(norms_low, norms_low[1:]))
    w = sobolev_diagonal(MultiIndexGrid(1, 6), 2.0)
    norms_sob = [np.linalg.norm(w * fit_sobolev(S, 2.0, lam, 6, cg=TIGHT).theta) for lam in lams]
    assert all(b <= a + 1e-8 for a, b in zip(norms_sob, norms_sob[1:]))


def test_shift_equivariance(rng):
    delta = np.array([0.3, -0.2])
    X = rng.uniform(-0.6, 0.6, (300, 2))
    Y = np.cos(3 * X[:, 0]) * X[:, 1] + 0.1 * rng.standard_normal(300)
    Xt = rng.uniform(-0.6, 0.6, (50, 2))
    a = fit_sobolev(SampleSet(X, Y, 1.0), 1.5, 1e-3, 4, cg=TIGHT)
    b = fit_sobolev(SampleSet(X + delta, Y, 1.0), 1.5, 1e-3, 4, cg=TIGHT)
    assert rel(predict(b, Xt + delta), predict(a, Xt)) <= 1e-6
    box_a = BoxDomain([-0.5, -0.5], [0.5, 0.5], 1.0)
    box_b = BoxDomain([-0.2, -0.7], [0.8, 0.3], 1.0)
    op = DiffOperatorSpec.parse("1:10,1:01,-1:00")
    pa = fit_pik_box(SampleSet(X, Y, 1.0), 1.5, 1e-3, 0.5, op, box_a, 4, cg=TIGHT)
    pb = fit_pik_box(SampleSet(X + delta, Y, 1.0), 1.5, 1e-3, 0.5, op, box_b, 4, cg=TIGHT)
    assert rel(predict(pb, Xt + delta), predict(pa, Xt)) <= 1e-6


def test_additive_predictions_decompose(rng):
    S = _data(rng, 400, 3)
    model = fit_additive(S, 2.0, 1e-3, 4)
    base = rng.uniform(-1, 1, (6, 3))
    for ell in range(3):
        a, b = base.copy(), base.copy()
        a[:, ell], b[:, ell] = -0.4, 0.7
        diff = predict(model, b) - predict(model, a)
        assert np.ptp(diff) <= 1e-9 * max(1.0, np.abs(diff).max())


# -- grid search ---------------------------------------------------------------------------

def test_grid_search_single_value_equals_direct_fit(rng):
    S = _data(rng, 500, 1)
    res = grid_search_lambda(S, [1e-3], "sobolev", 1.5, 6, val_frac=0.25, seed=3)
    direct = fit_sobolev(S.subset(res.train_index), 1.5, 1e-3, 6)
    assert res.best_lambda == 1e-3
    assert rel(res.model.theta, direct.theta) <= 1e-12


def test_grid_search_validation_mse_is_exact(rng):
    S = _data(rng, 600, 2)
    lams = np.geomspace(1e-5, 1, 7)
    res = grid_search_lambda(S, lams, "lowbias", 2.0, 3, cg=TIGHT)
    Xv, Yv = S.X[res.val_index], S.Y[res.val_index]
    for (lam, mse), theta in zip(res.table, res.thetas):
        model = FittedModel("lowbias", theta, 2, 3, 1.0, 2.0, lam)
        assert mse == pytest.approx(np.mean((predict(model, Xv) - Yv) ** 2), rel=1e-8)
    best = min(res.table, key=lambda row: row[1])
    assert res.best_lambda == best[0]


def test_grid_search_warm_starts_match_fresh_fits(rng):
    S = _data(rng, 800, 3)
    lams = np.geomspace(1e-4, 1, 15)
    res = grid_search_lambda(S, lams, "additive", 2.0, 3, cg=CgConfig(tol=1e-13))
    train = S.subset(res.train_index)
    for lam, theta in zip(lams, res.thetas):
        fresh = fit_additive(train, 2.0, lam, 3, cg=CgConfig(tol=1e-13))
        assert rel(theta, fresh.theta) <= 1e-6


def test_grid_search_ties_go_to_larger_lambda(rng):
    S = SampleSet(rng.uniform(-1, 1, (50, 1)), np.zeros(50), 1.0)
    res = grid_search_lambda(S, [1e-3, 1e-1, 1e-2], "sobolev", 1.0, 3)
    assert res.best_lambda == 1e-1


def test_grid_search_validation(rng):
    S = _data(rng, 50, 1)
    with pytest.raises(ValueError):
        grid_search_lambda(S, [], "sobolev", 1.0, 3)
    with pytest.raises(ValueError):
        grid_search_lambda(S, [0.1, -1.0], "sobolev", 1.0, 3)
    with pytest.raises(ValueError):
        grid_search_lambda(S, [0.1], "sobolev", 1.0, 3, val_frac=1.0)


# -- hyperparameter validation ---------------------------------------------------------------

def test_invalid_hyperparameters(rng):
    S1, S2 = _data(rng, 30, 1), _data(rng, 30, 2)
    box = BoxDomain([0.0], [0.5], 1.0)
    bad_calls = [
        lambda: fit_sobolev(S1, 1.0, 0.0, 3),
        lambda: fit_sobolev(S1, 1.0, -1.0, 3),
        lambda: fit_sobolev(S2, 1.0, 0.1, 3),
        lambda: fit_sobolev(S1, 1.0, 0.1, 0),
        lambda: fit_additive(S2, 0.5, 0.1, 3),
        lambda: fit_pik_box(S1, 1.0, 0.1, -1.0, FPRIME_MINUS_F, box, 3),
        lambda: fit_pik_box(S1, 1.0, 0.1, 1.0, FPRIME_MINUS_F, BoxDomain([0.0], [0.5], 2.0), 3),
        lambda: fit_pik_box(S2, 1.5, 0.1, 1.0, FPRIME_MINUS_F, box, 3),
        lambda: fit_pik_collocation(S1, np.array([[1.5]]), 1.0, 0.1, 1.0, FPRIME_MINUS_F, 3),
        lambda: fit_sobolev(_data(rng, 30, 4), 3.0, 0.1, 1),
    ]
    for call in bad_calls:
        with pytest.raises(ValueError):
            call()


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.array([[np.nan]]), [1.0], 1.0)
    with pytest.raises(ValueError):
        SampleSet(np.zeros((2, 1)), [1.0], 1.0)
    with pytest.raises(ValueError):
        SampleSet(np.zeros((0, 1)), [], 1.0)
    with pytest.raises(OutOfDomainError):
        SampleSet(np.array([[0.5], [1.2]]), [1.0, 2.0], 1.0)
    assert SampleSet.from_arrays([0.5, -2.0], [1.0, 2.0]).L == 2.0


# -- serialization -------------------------------------------------------------------------------

def test_model_json_roundtrip_is_bit_exact(rng, tmp_path):
    S = _data(rng, 200, 1)
    model = fit_pik_box(S, 1.0, 1e-3, 1.0, FPRIME_MINUS_F, BoxDomain([0.0], [1.0], 1.0), 5)
    path = tmp_path / "model.json"
    model.save(path)
    back = FittedModel.load(path)
    assert np.array_equal(back.theta, model.theta)
    assert (back.kind, back.d, back.m, back.L, back.s, back.lam, back.mu) == (
        model.kind, model.d, model.m, model.L, model.s, model.lam, model.mu)
    assert back.op == model.op and back.box == model.box
    assert back.report == model.report
    assert '"version": "fastkern-model-v1"' in path.read_text()


def test_model_rejects_bad_documents():
    doc = FittedModel("sobolev", np.ones(3), 1, 1, 1.0, 1.0, 0.1).to_dict()
    with pytest.raises(ValueError):
        FittedModel.from_dict({**doc, "version": "v0"})
    with pytest.raises(ValueError):
        FittedModel.from_dict({**doc, "theta": [[1.0, 0.0]] * 4})
    with pytest.raises(ValueError):
        FittedModel("ridge", np.ones(3), 1, 1, 1.0, 1.0, 0.1)


# -- scikit-learn estimators ------------------------------------------------------------------------

def test_estimators_follow_sklearn_conventions(rng):
    X = rng.uniform(0, 1, (500, 2))
    y = np.exp(X[:, 0]) * np.cos(X[:, 1]) + 0.05 * rng.standard_normal(500)
    for est in [SobolevRegressor(s=1.5), LowBiasRegressor(s=1.5), AdditiveRegressor(s=2.0)]:
        with pytest.raises(NotFittedError):
            est.predict(X)
        params = est.get_params()
        assert params["lam"] == "auto" and params["m"] == "auto"
        fitted = clone(est).fit(X, y)
        assert fitted.n_features_in_ == 2 and fitted.score(X, y) > 0.5
        with pytest.raises(ValueError):
            fitted.predict(X[:, :1])
    explicit = SobolevRegressor(s=1.5, lam=1e-3, m=5).fit(X, y)
    assert explicit.m_ == 5 and explicit.lam_ == 1e-3
    assert rel(explicit.coef_, fit_sobolev(SampleSet(X, y, 1.0), 1.5, 1e-3, 5).theta) <= 1e-12


def test_estimator_in_pipeline(rng):
    X = rng.uniform(-4, 4, (400, 1))
    y = np.sin(X[:, 0])
    pipe = make_pipeline(FunctionTransformer(lambda Z: Z / 4), SobolevRegressor(s=2.0, lam=1e-6, m=12))
    pipe.fit(X, y)
    assert np.mean((pipe.predict(X) - y) ** 2) < 1e-3


def test_physics_informed_estimator(rng):
    L = math.pi / 2
    X = rng.uniform(0, 1, (2000, 1))
    y = np.exp(X[:, 0]) + rng.standard_normal(2000)
    box = PhysicsInformedRegressor(operator="1:1,-1:0", mu=1.0, box=[(0.0, 1.0)], s=1.0, L=L).fit(X, y)
    ref = fit_pik_box(SampleSet(X, y, L), 1.0, box.lam_, 1.0, FPRIME_MINUS_F, BoxDomain([0.0], [1.0], L), box.m_)
    assert rel(box.coef_, ref.theta) <= 1e-12
    col = PhysicsInformedRegressor(operator=FPRIME_MINUS_F, collocation=rng.uniform(0, 1, (500, 1)), s=1.0, L=L)
    assert col.fit(X, y).model_.kind == "pik_collocation"
    with pytest.raises(ValueError):
        PhysicsInformedRegressor(operator="1:1,-1:0").fit(X, y)
    with pytest.raises(ValueError):
        PhysicsInformedRegressor(box="0,1").fit(X, y)


def test_estimator_warns_on_nonconvergence(rng):
    X = rng.uniform(-1, 1, (300, 1))
    y = np.sin(3 * X[:, 0])
    with pytest.warns(Warning, match="CG stopped"):
        LowBiasRegressor(lam=1e-9, m=20, cg_tol=1e-12, cg_maxiter=2).fit(X, y)


def test_grid_search_selects_interior_lambda():
    from fastkern.experiments import generate

    S, _ = generate("sobolev1d", 10**5, 0)
    m, _ = schedule_hyperparams(S.n, 1.0, 1, "sobolev")
    lams = np.geomspace(1e-8, 1.0, 60)
    res = grid_search_lambda(S, lams, "sobolev", 1.0, m)
    assert lams[0] < res.best_lambda < lams[-1]
    mses = np.array([mse for _, mse in res.table])
    assert mses[0] > mses.min() and mses[-1] > mses.min()
