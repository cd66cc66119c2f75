import numpy as np
import pytest

from magdiff.baselines import (
    SingularSystemError, VariogramModel, fit_variogram, idw, kriging_weights, ordinary_kriging, rbf,
)

VM = VariogramModel(nugget=0.0, sill=1.0, range_len=0.3)


# ---------------------------------------------------------------- IDW

def test_idw_pass_through(rng):
    co, x = rng.random((8, 2)), rng.normal(size=8)
    assert idw(co, x, co[[3, 5]]).tolist() == x[[3, 5]].tolist()


def test_idw_equidistant_mean():
    assert idw([[0.0, 0.0], [2.0, 0.0]], [1.0, 4.0], [[1.0, 0.0]])[0] == pytest.approx(2.5, abs=1e-15)


def test_idw_brute_force(rng):
    co, x, ta = rng.random((10, 2)), rng.normal(size=10), rng.random((5, 2))
    for t, got in zip(ta, idw(co, x, ta, 1.5)):
        w = [1 / np.hypot(*(t - c)) ** 1.5 for c in co]
        assert got == pytest.approx(sum(wi * xi for wi, xi in zip(w, x)) / sum(w), rel=1e-12)


def test_idw_errors():
    with pytest.raises(ValueError):
        idw(np.empty((0, 2)), [], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        idw([[0.0, 0.0]], [1.0], [[1.0, 1.0]], power=0)


# ---------------------------------------------------------------- variogram

def test_variogram_model_shape():
    vm = VariogramModel(0.2, 1.0, 0.1)
    assert vm(0.0) == 0.2
    r = np.linspace(0, 1, 50)
    assert np.all(np.diff(vm(r)) >= 0)


def test_fit_constant_field(rng):
    vm = fit_variogram(rng.random((40, 2)), np.full(40, 3.0))
    assert vm.nugget == pytest.approx(0, abs=1e-12) and vm.sill == pytest.approx(0, abs=1e-12)


def test_fit_pure_noise_nugget_is_variance():
    rng = np.random.default_rng(1)
    m, x = rng.random((10_000, 2)), rng.normal(0, 2.0, 10_000)
    vm = fit_variogram(m, x)
    # white noise: semivariance equals the variance at every lag, so the plateau sits at the nugget
    # (or, when the fitted range collapses, at nugget + sill reached almost immediately)
    assert vm(1e-3) == pytest.approx(4.0, rel=0.1)
    assert vm.nugget == pytest.approx(4.0, rel=0.1) or vm.range_len < 1e-3


def test_fit_beats_flat_line_on_structured_data(rng):
    from magdiff.baselines import empirical_variogram
    from magdiff.geodata import default_field_spec, synth_field
    m = rng.random((600, 2))
    x = synth_field(default_field_spec(), m)
    vm = fit_variogram(m, x, n_bins=15, max_range=0.7)
    r, g, w = empirical_variogram(m, x, 15, 0.7)
    model_res = np.sum(w * (vm(r) - g) ** 2)
    flat = np.sum(w * g) / np.sum(w)
    assert model_res <= np.sum(w * (flat - g) ** 2)


def test_fit_rejects_degenerate():
    with pytest.raises(ValueError):
        fit_variogram(np.zeros((12, 2)), np.arange(12.0))
    with pytest.raises(ValueError):
        fit_variogram(np.random.default_rng(0).random((5, 2)), np.arange(5.0))


# ---------------------------------------------------------------- kriging

def test_kriging_single_condition():
    pred, _ = ordinary_kriging([[0.3, 0.3]], [7.0], [[0.0, 0.0], [1.0, 1.0]], VM)
    assert pred.tolist() == [7.0, 7.0]


def test_kriging_exact_at_conditions(rng):
    co, x = rng.random((15, 2)), rng.normal(size=15)
    pred, var = ordinary_kriging(co, x, co, VM)
    assert np.max(np.abs(pred - x)) < 1e-9
    assert np.max(np.abs(var)) < 1e-9


def test_kriging_weights_sum_to_one(rng):
    w, _ = kriging_weights(rng.random((20, 2)), rng.random((30, 2)), VariogramModel(0.1, 2.0, 0.2))
    assert np.max(np.abs(w.sum(axis=1) - 1)) < 1e-9


def test_three_point_weights_match_bordered_solve():
    co = np.array([[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]])
    ta = np.array([[0.5, 0.5]])
    vm = VariogramModel(0.05, 1.2, 0.25)

    def gamma(a, b):
        r = np.hypot(*(np.asarray(a) - np.asarray(b)))
        return 0.0 if r == 0 else 0.05 + 1.2 * (1 - np.exp(-r / 0.25))

    A = np.array([[gamma(co[i], co[j]) for j in range(3)] + [1.0] for i in range(3)] + [[1.0, 1.0, 1.0, 0.0]])
    b = np.array([gamma(c, ta[0]) for c in co] + [1.0])
    sol = np.linalg.solve(A, b)
    w, mu = kriging_weights(co, ta, vm)
    assert np.allclose(w[0], sol[:3], rtol=0, atol=1e-12)
    assert mu[0] == pytest.approx(sol[3], abs=1e-12)


def test_kriging_duplicates_are_merged():
    co = [[0.1, 0.1], [0.1, 0.1], [0.8, 0.5]]
    pred, _ = ordinary_kriging(co, [1.0, 3.0, 5.0], [[0.1, 0.1]], VM)
    assert pred[0] == pytest.approx(2.0, abs=1e-9)


def test_kriging_zero_variogram_is_singular(rng):
    with pytest.raises(SingularSystemError):
        ordinary_kriging(rng.random((5, 2)), rng.normal(size=5), rng.random((2, 2)), VariogramModel(0, 0, 0.1))


# ---------------------------------------------------------------- RBF

def test_rbf_single_condition():
    assert rbf([[0.5, 0.5]], [4.2], [[0.5, 0.5]])[0] == pytest.approx(4.2, abs=1e-6)


def test_rbf_interpolates_conditions(rng):
    co, x = rng.random((30, 2)), rng.normal(size=30)
    # the 1e-8 ridge leaves a residual of ridge * |coef|, which grows with the kernel width
    assert np.max(np.abs(rbf(co, x, co, 0.05) - x)) < 1e-6


def test_rbf_matches_dense_solve(rng):
    co, x, ta = rng.random((10, 2)), rng.normal(size=10), rng.random((4, 2))
    K = lambda a, b: np.exp(-np.sum((a[:, None] - b[None]) ** 2, -1) / (2 * 0.2 ** 2))
    G = K(co, co) + 1e-8 * np.eye(10)
    c = np.linalg.solve(G, x - x.mean())
    assert np.allclose(rbf(co, x, ta, 0.2), K(ta, co) @ c + x.mean(), rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- shared properties

@pytest.mark.parametrize("method", ["idw", "kriging", "rbf"])
def test_translation_equivariance(method, rng):
    co, x, ta = rng.random((25, 2)), rng.normal(size=25), rng.random((10, 2))
    f = {"idw": lambda v: idw(co, v, ta),
         "kriging": lambda v: ordinary_kriging(co, v, ta, VM)[0],
         "rbf": lambda v: rbf(co, v, ta, 0.15)}[method]
    c = 1000.0
    assert np.allclose(f(x + c), f(x) + c, rtol=0, atol=1e-9)


@pytest.mark.parametrize("method", ["idw", "kriging", "rbf"])
def test_exact_at_conditions_noise_free(method):
    from magdiff.geodata import default_field_spec, synth_field
    rng = np.random.default_rng(5)
    co = rng.random((60, 2))
    x = synth_field(default_field_spec(noise_sigma=0.0), co)
    pred = {"idw": lambda: idw(co, x, co),
            "kriging": lambda: ordinary_kriging(co, x, co, fit_variogram(co, x))[0],
            "rbf": lambda: rbf(co, x, co, 0.05)}[method]()
    tol = 1e-6 * np.abs(x).max() if method == "rbf" else 1e-9 * np.abs(x).max()
    assert np.max(np.abs(pred - x)) < tol
