import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magdiff.baselines import VariogramModel, idw, ordinary_kriging
from magdiff.config import ConfigError, build, dump_config, parse_config
from magdiff.engine import TrainConfig
from magdiff.metrics import metrics
from magdiff.render import BBox, RenderError, grid_csv, grid_nodes, grid_pgm, read_pgm_scale, render_grid


# ---------------------------------------------------------------- metrics

def test_perfect_prediction():
    r = metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (r.rmse, r.mae, r.mape, r.mse) == (0.0, 0.0, 0.0, 0.0)


def test_constant_error_arithmetic():
    r = metrics([2.0] * 4, [3.0] * 4)
    assert (r.rmse, r.mae, r.mape, r.mse) == (1.0, 1.0, 0.5, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1.0, 1e4), st.floats(-1e4, 1e4)), min_size=1, max_size=40))
def test_against_direct_formulas(pairs):
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    n = len(t)
    r = metrics(t, p)
    mse = sum((b - a) ** 2 for a, b in pairs) / n
    assert r.mse == pytest.approx(mse, rel=1e-12, abs=1e-12)
    assert r.mae == pytest.approx(sum(abs(b - a) for a, b in pairs) / n, rel=1e-12, abs=1e-12)
    assert r.mape == pytest.approx(sum(abs((b - a) / a) for a, b in pairs) / n, rel=1e-12, abs=1e-12)
    assert r.rmse == math.sqrt(r.mse)
    assert abs(r.rmse ** 2 - r.mse) <= 1e-9 * max(1.0, r.mse)


def test_metrics_errors():
    with pytest.raises(ValueError, match=r"y_true\[1\]"):
        metrics([1.0, 0.0], [1.0, 1.0])
    assert math.isnan(metrics([1.0, 0.0], [1.0, 1.0], with_mape=False).mape)
    with pytest.raises(ValueError):
        metrics([], [])
    with pytest.raises(ValueError):
        metrics([1.0], [1.0, 2.0])


# ---------------------------------------------------------------- render

BOX = BBox(0.0, 1.0, 0.0, 2.0)


def test_grid_orientation():
    nodes = grid_nodes(BOX, 3, 2)
    assert nodes.tolist() == [[0.0, 2.0], [0.5, 2.0], [1.0, 2.0], [0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]


def test_constant_field_gives_constant_grid():
    co = np.random.default_rng(0).random((10, 2))
    g = render_grid(lambda m, x, t: idw(m, x, t), (co, np.full(10, 7.5)), BOX, 5, 4)
    assert g.values.shape == (4, 5) and np.allclose(g.values, 7.5, rtol=1e-14, atol=0)


def test_corners_equal_direct_calls(rng):
    co, x = rng.random((12, 2)), rng.normal(size=12)
    g = render_grid(idw, (co, x), BOX, 2, 2)
    corners = [[0.0, 2.0], [1.0, 2.0], [0.0, 0.0], [1.0, 0.0]]
    assert g.values.ravel().tolist() == [idw(co, x, [c])[0] for c in corners]


def test_kriging_grid_equals_pointwise(rng):
    co, x = rng.random((15, 2)), rng.normal(size=15)
    vm = VariogramModel(0.0, 1.0, 0.3)
    g = render_grid(lambda m, v, t: ordinary_kriging(m, v, t, vm)[0], (co, x), BOX, 4, 3)
    pts = grid_nodes(BOX, 4, 3)
    want = [ordinary_kriging(co, x, [p], vm)[0][0] for p in pts]
    assert np.allclose(g.values.ravel(), want, rtol=0, atol=1e-12)


def test_render_errors_carry_context():
    def boom(m, x, t):
        raise np.linalg.LinAlgError("singular")
    with pytest.raises(RenderError, match="grid"):
        render_grid(boom, (np.zeros((1, 2)), np.zeros(1)), BOX, 2, 2)
    with pytest.raises(RenderError, match="lon="):
        render_grid(lambda m, x, t: np.full(len(t), np.nan), (np.zeros((1, 2)), np.zeros(1)), BOX, 2, 2)
    with pytest.raises(ValueError):
        grid_nodes(BOX, 1, 5)
    with pytest.raises(ValueError):
        BBox(1.0, 0.0, 0.0, 1.0)


def test_writers(rng):
    co, x = rng.random((12, 2)), 100 + rng.normal(size=12)
    g = render_grid(idw, (co, x), BOX, 3, 2)
    lines = grid_csv(g).splitlines()
    assert lines[0] == "lon,lat,value" and len(lines) == 7
    pgm = grid_pgm(g)
    head = pgm.splitlines()
    assert head[0] == "P2" and "3 2" in head and "65535" in head
    lo, hi = read_pgm_scale(pgm)
    assert lo == g.values.min() and hi == g.values.max()
    levels = np.array([int(v) for v in " ".join(head[5:]).split()])
    assert levels.min() == 0 and levels.max() == 65535
    # the scale comment lets the raster be mapped back to nT within one grey level
    back = lo + levels / 65535 * (hi - lo)
    assert np.max(np.abs(back - g.values.ravel())) <= (hi - lo) / 65535


def test_bbox_parse():
    assert BBox.parse("0,1,2,3") == BBox(0, 1, 2, 3)
    with pytest.raises(ValueError):
        BBox.parse("0,1,2")


# ---------------------------------------------------------------- config

def test_parse_and_layering():
    file_layer = parse_config("# comment\nepochs = 3\nk-min = 16  # trailing\nlr=0.01\n\ndisable_pim = true\n")
    cfg = build(TrainConfig, file_layer, {"epochs": 5, "lr": None})
    assert cfg.epochs == 5 and cfg.k_min == 16 and cfg.lr == 0.01 and cfg.disable_pim is True
    assert build(TrainConfig).epochs == TrainConfig().epochs


def test_optional_field_and_round_trip():
    cfg = build(TrainConfig, {"instance_size": "250"})
    assert cfg.instance_size == 250
    assert build(TrainConfig, {"instance_size": "none"}).instance_size is None
    again = build(TrainConfig, parse_config(dump_config(cfg)))
    assert again == cfg


def test_config_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("a = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match="unknown"):
        build(TrainConfig, {"bogus": "1"})
    with pytest.raises(ConfigError):
        build(TrainConfig, {"epochs": "three"})
    with pytest.raises(ConfigError):
        build(TrainConfig, {"epochs": "0"})
