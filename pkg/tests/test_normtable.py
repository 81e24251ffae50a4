import logging

import numpy as np
import pytest

from multipose.errors import ConfigurationError, FormatError
from multipose.normtable import (LOG_SPHERE_AREA, MIN_MC_SAMPLES, SPHERE_AREA, NormTable, acg_envelope, axis_nodes,
                                 build_norm_table, normalizer_mc, normalizer_quadrature, warp)

# Uniform-S^3 Monte Carlo, 4e6 samples, seed 20240601: (F, standard error).
MC_ORACLE = {
    (-5.0, -5.0, -5.0): (1.2541153194771346, 0.0012318600103556376),
    (-1.0, -2.0, -3.0): (5.400756523047308, 0.0017873515763615583),
    (-10.0, -10.0, -10.0): (0.38700944796089704, 0.0007780670557285745),
}
# Equal lambdas reduce F to 2 pi^2 * int (2/pi) sqrt(1 - t^2) exp(l (1 - t^2)) dt,
# evaluated with scipy.integrate.quad.
EQUAL_LAMBDA_ORACLE = {-5.0: 1.2526855648460506, -10.0: 0.3862676088321798}


def test_axis_nodes_shape():
    nodes = axis_nodes(-900.0, 83)
    assert nodes[0] == 0.0 and nodes[-1] == -900.0
    assert len(nodes) == 83
    assert np.all(np.diff(nodes) < 0.0)
    # evenly spaced in warp coordinates
    np.testing.assert_allclose(np.diff(warp(nodes)), np.diff(warp(nodes))[0], rtol=1e-9)


@pytest.mark.parametrize("kwargs", [dict(lam_min=0.0), dict(lam_min=5.0), dict(count=1), dict(scale=0.0)])
def test_axis_nodes_rejects(kwargs):
    with pytest.raises(ConfigurationError):
        axis_nodes(**kwargs)


def test_quadrature_uniform():
    F, dF = normalizer_quadrature([0.0, 0.0, 0.0])
    assert F == pytest.approx(SPHERE_AREA, rel=1e-12)
    # E[x_i^2] = 1/4 under the uniform density
    np.testing.assert_allclose(dF / F, 0.25, rtol=1e-10)


@pytest.mark.parametrize("lam", sorted(EQUAL_LAMBDA_ORACLE))
def test_quadrature_matches_equal_lambda_oracle(lam):
    F, _ = normalizer_quadrature([lam] * 3)
    assert F == pytest.approx(EQUAL_LAMBDA_ORACLE[lam], rel=1e-9)


@pytest.mark.parametrize("conc", sorted(MC_ORACLE))
def test_quadrature_matches_mc_oracle(conc):
    F_mc, se = MC_ORACLE[conc]
    F, _ = normalizer_quadrature(conc)
    assert abs(F - F_mc) < 3.0 * se


def test_quadrature_is_symmetric_in_lambda_order():
    F1, d1 = normalizer_quadrature([-1.0, -2.0, -3.0])
    F2, d2 = normalizer_quadrature([-3.0, -1.0, -2.0])
    assert F1 == pytest.approx(F2, rel=1e-12)
    np.testing.assert_allclose(d2, d1[[2, 0, 1]], rtol=1e-10)


def test_quadrature_derivative_matches_finite_differences(rng):
    for _ in range(5):
        conc = -rng.uniform(0.0, 50.0, 3)
        _, dF = normalizer_quadrature(conc)
        h = 1e-5
        fd = [(normalizer_quadrature(conc + h * e)[0] - normalizer_quadrature(conc - h * e)[0]) / (2 * h)
              for e in np.eye(3)]
        np.testing.assert_allclose(dF, fd, rtol=1e-6)


def test_quadrature_rejects_positive():
    with pytest.raises(ConfigurationError):
        normalizer_quadrature([0.5, 0.0, 0.0])


def test_mc_proposals_agree_with_quadrature():
    conc = np.array([-2.0, -7.0, -40.0])
    F, dF = normalizer_quadrature(conc)
    for proposal in ("acg", "uniform"):
        est, se, ratios = normalizer_mc(conc, 400_000, seed=5, proposal=proposal)
        assert abs(est - F) < 4.0 * se
        np.testing.assert_allclose(ratios, dF / F, atol=5e-3)
    with pytest.raises(ConfigurationError):
        normalizer_mc(conc, 10, seed=0, proposal="gaussian")


def test_mc_is_deterministic():
    a = normalizer_mc([-3.0, -4.0, -5.0], 1000, seed=9)
    b = normalizer_mc([-3.0, -4.0, -5.0], 1000, seed=9)
    assert a[0] == b[0] and a[1] == b[1]


def test_acg_envelope_uniform_is_identity():
    omega, log_m = acg_envelope([0.0, 0.0, 0.0])
    np.testing.assert_allclose(omega, 1.0)
    assert log_m == pytest.approx(0.0, abs=1e-12)


def test_default_table_anchor(table):
    assert table.log_f[0, 0, 0] == pytest.approx(LOG_SPHERE_AREA, abs=1e-10)
    assert table.log_norm([0.0, 0.0, 0.0]) == pytest.approx(np.log(2 * np.pi ** 2), abs=1e-3)
    assert table.lam_min == -900.0


@pytest.mark.parametrize("conc", sorted(MC_ORACLE))
def test_table_matches_mc_oracle(table, conc):
    F_mc, se = MC_ORACLE[conc]
    F = np.exp(table.log_norm(conc))
    assert abs(F - F_mc) < 3.0 * se
    assert F == pytest.approx(F_mc, rel=0.01)


def test_table_node_identity(table):
    ax = table.axes
    for i, j, k in [(0, 0, 0), (3, 10, 40), (82, 82, 82), (20, 5, 60)]:
        conc = [ax[0][i], ax[1][j], ax[2][k]]
        assert table.log_norm(conc) == pytest.approx(table.log_f[i, j, k], abs=1e-12)
        np.testing.assert_allclose(table.grad_ratios(conc), table.grad_ratio[:, i, j, k], atol=1e-12)


def _synthetic_table(rng, count=6):
    axes = tuple(axis_nodes(-50.0, count) for _ in range(3))
    shape = (count,) * 3
    return NormTable(axes, rng.standard_normal(shape), rng.standard_normal((3,) + shape))


def test_cell_midpoint_is_corner_average(rng):
    t = _synthetic_table(rng)
    i, j, k = 1, 3, 2
    lo = np.array([t.axes[0][i], t.axes[1][j], t.axes[2][k]])
    hi = np.array([t.axes[0][i + 1], t.axes[1][j + 1], t.axes[2][k + 1]])
    # midpoint in the interpolation coordinate, mapped back to lambda
    mid = -np.expm1(-0.5 * (warp(lo) + warp(hi)))
    corners = t.log_f[i:i + 2, j:j + 2, k:k + 2]
    assert t.log_norm(mid) == pytest.approx(corners.mean(), abs=1e-12)


def test_interpolant_is_continuous_across_cells(rng):
    t = _synthetic_table(rng)
    node = t.axes[0][2]
    for delta in (1e-9, -1e-9):
        assert t.log_norm([node + delta, -3.0, -20.0]) == pytest.approx(t.log_norm([node, -3.0, -20.0]), abs=1e-8)


def test_interpolant_gradient_matches_finite_differences(table, rng):
    for _ in range(20):
        conc = -np.sort(rng.uniform(0.0, 800.0, 3))
        _, grad = table.log_norm_and_grad(conc)
        h = 1e-6 * (1.0 + np.abs(conc))
        fd = [(table.log_norm(conc + h[a] * e) - table.log_norm(conc - h[a] * e)) / (2 * h[a])
              for a, e in enumerate(np.eye(3))]
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


def test_interpolant_gradient_tracks_ratio_table(table, rng):
    # d log F / d lambda_i = (dF/dl_i) / F, so the two tables must agree closely
    conc = -np.sort(rng.uniform(0.0, 100.0, (50, 3)), axis=1)
    _, grad = table.log_norm_and_grad(conc)
    np.testing.assert_allclose(grad, table.grad_ratios(conc), rtol=0.03, atol=1e-3)


def test_log_norm_monotone_over_nodes(table):
    for axis in range(3):
        assert np.all(np.diff(table.log_f, axis=axis) <= 1e-12)


def test_clamp_warns_and_saturates(table, caplog):
    with caplog.at_level(logging.WARNING, logger="multipose.normtable"):
        inside = table.log_norm([-10.0, -900.0, -900.0])
        outside = table.log_norm([-10.0, -2000.0, -5000.0])
    assert outside == inside
    assert any("clamped" in r.message for r in caplog.records)


def test_batched_lookup_shapes(coarse_table, rng):
    conc = -np.sort(rng.uniform(0, 100, (4, 5, 3)), axis=-1)
    assert coarse_table.log_norm(conc).shape == (4, 5)
    value, grad = coarse_table.log_norm_and_grad(conc)
    assert value.shape == (4, 5) and grad.shape == (4, 5, 3)
    assert coarse_table.grad_ratios(conc).shape == (4, 5, 3)
    np.testing.assert_array_equal(coarse_table.log_norm(conc)[2, 3], coarse_table.log_norm(conc[2, 3]))


def test_binary_round_trip(coarse_table, tmp_path):
    path = tmp_path / "t.bnt"
    coarse_table.save(path)
    back = NormTable.load(path)
    assert (back.mc_samples, back.seed) == (coarse_table.mc_samples, coarse_table.seed)
    for a, b in zip(back.axes, coarse_table.axes):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.log_f, coarse_table.log_f)
    np.testing.assert_array_equal(back.grad_ratio, coarse_table.grad_ratio)
    assert path.read_bytes()[:4] == b"BNT1"


def test_binary_rejects_corruption(coarse_table):
    blob = bytearray(coarse_table.to_bytes())
    with pytest.raises(FormatError, match="magic"):
        NormTable.from_bytes(b"XXXX" + bytes(blob[4:]))
    flipped = bytearray(blob)
    flipped[-20] ^= 0x01
    with pytest.raises(FormatError, match="CRC"):
        NormTable.from_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        NormTable.from_bytes(bytes(blob[:-100]))
    with pytest.raises(FormatError):
        NormTable.from_bytes(bytes(blob) + b"\0")


def test_build_is_deterministic():
    axes = [axis_nodes(-100.0, 5)] * 3
    a = build_norm_table(axes, method="mc", seed=3)
    b = build_norm_table(axes, method="mc", seed=3)
    assert a.to_bytes() == b.to_bytes()
    c = build_norm_table(axes, method="mc", seed=4)
    assert a.to_bytes() != c.to_bytes()


def test_mc_build_agrees_with_quadrature_build():
    axes = [axis_nodes(-100.0, 4)] * 3
    q = build_norm_table(axes)
    m = build_norm_table(axes, method="mc", mc_samples=MIN_MC_SAMPLES)
    np.testing.assert_allclose(m.log_f, q.log_f, atol=5.0 * m.log_f_se.max())
    assert q.node_se([-1.0, -1.0, -1.0]) == 0.0
    assert 0.0 < m.node_se([-1.0, -1.0, -1.0]) < 1e-2


def test_build_fills_permuted_nodes_symmetrically(coarse_table):
    lf = coarse_table.log_f
    np.testing.assert_array_equal(lf, np.transpose(lf, (1, 0, 2)))
    np.testing.assert_array_equal(lf, np.transpose(lf, (2, 1, 0)))
    gr = coarse_table.grad_ratio
    # tied lambdas get their derivatives from different integrands
    np.testing.assert_allclose(gr[0], np.transpose(gr[1], (1, 0, 2)), rtol=1e-7)


@pytest.mark.parametrize("kwargs", [
    dict(mc_samples=MIN_MC_SAMPLES - 1),
    dict(axes=[axis_nodes(-10.0, 3)] * 2),
    dict(axes=[np.array([0.0])] * 3),
    dict(axes=[np.array([-1.0, -2.0])] * 3),
    dict(axes=[np.array([0.0, -2.0, -1.0])] * 3),
    dict(axes=[axis_nodes(-10.0, 3)] * 3, method="series"),
])
def test_build_rejects_bad_grids(kwargs):
    with pytest.raises(ConfigurationError):
        build_norm_table(**kwargs)
