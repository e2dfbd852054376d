"""Mollifiers, stable-leaf averages, and the oscillatory-cancellation sweep."""

import csv
import math

import numpy as np
import pytest

from contactflow import (
    ChartBoundary,
    MollifierSpec,
    PieceExplosion,
    default_dolgopyat_params,
    dolgopyat_experiment,
    dolgopyat_m_sweep,
    dolgopyat_value,
    flow_box_bump,
    leaf_through,
    mollify,
    mollify_detailed,
    stable_average,
    stable_decomposition_stats,
    stable_direction,
    write_decomposition_csv,
    write_dolgopyat_csv,
)
from contactflow import constant_observable

from helpers import interior_points

PSI = dict(center=(0.3, 0.4, 0.5), halfwidths=(0.2, 0.2, 0.3))


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def test_mollifier_unit_mass():
    spec = MollifierSpec(0.01)
    assert abs(spec.mass(128) - 1.0) < 1e-10


def test_mollifier_spec_validation():
    with pytest.raises(ValueError):
        MollifierSpec(0.0)
    with pytest.raises(ValueError):
        MollifierSpec(0.01, nodes_per_axis=3)


def test_mollify_reproduces_constants_exactly():
    spec = MollifierSpec(0.01)
    value = mollify(lambda x, y, z: np.full_like(x, 3.25), spec,
                    (0.3, 0.4, 0.5))
    assert value == pytest.approx(3.25, abs=1e-12)


def test_mollify_reproduces_linear_at_interior_point():
    # symmetric kernel: odd moments vanish, so affine functions pass through
    spec = MollifierSpec(0.01)

    def lin(x, y, z):
        return 2.0 * x - y + 0.5 * z

    value = mollify(lin, spec, (0.3, 0.4, 0.5))
    assert value == pytest.approx(lin(0.3, 0.4, 0.5), abs=1e-12)


def test_mollify_boundary_contact_strict_raises(flow):
    spec = MollifierSpec(0.01)
    psi = flow_box_bump(**PSI)
    w = (0.5, 0.5, 0.005)  # epsilon-ball pokes below z = 0
    res = mollify_detailed(psi, spec, w, flow=flow)
    assert res.boundary_contact
    assert math.isfinite(res.value)
    with pytest.raises(ChartBoundary):
        mollify(psi, spec, w, flow=flow, strict=True)
    assert mollify(psi, spec, w, flow=flow, strict=False) == res.value


def test_mollify_error_scales_with_epsilon(flow):
    psi = flow_box_bump(**PSI)
    xs, ys, zs = interior_points(flow, 200, seed=21, margin=2e-2)
    sups = []
    for eps in (0.02, 0.01, 0.005):
        spec = MollifierSpec(eps)
        worst = 0.0
        for x, y, z in zip(xs, ys, zs):
            err = abs(mollify(psi, spec, (x, y, z)) - psi(x, y, z))
            worst = max(worst, err)
        assert worst <= eps * math.sqrt(3.0) * psi.lipschitz
        sups.append(worst / eps ** 2)
    # the kernel is symmetric, so smooth observables converge at order two
    assert max(sups) / min(sups) < 1.5


# ---------------------------------------------------------------------------
# stable leaves
# ---------------------------------------------------------------------------


def test_stable_direction_of_standard_base(flow):
    assert stable_direction(flow.base) == pytest.approx((1.0, -0.5),
                                                        abs=1e-14)


def test_leaf_closed_form_and_kernel_residual(flow):
    w = (0.3, 0.4, 0.5)
    leaf = leaf_through(flow, w, 0.1)
    assert leaf.point(0.0) == pytest.approx(w, abs=1e-15)
    for s in (-0.07, 0.03, 0.09):
        x, y, z = leaf.point(s)
        assert x == pytest.approx((0.3 + s) % 1.0, abs=1e-14)
        assert y == pytest.approx((0.4 - 0.5 * s) % 1.0, abs=1e-14)
        assert z == pytest.approx(0.5 + 0.4 * s - 0.25 * s * s, abs=1e-14)
    assert leaf.kernel_residual() < 1e-12


def test_stable_average_constant_exact(flow):
    value = stable_average(flow, lambda x, y, z: np.full_like(x, 2.5),
                           0.1, (0.3, 0.4, 0.5))
    assert value == pytest.approx(2.5, abs=1e-12)


def test_stable_average_close_to_center_value(flow):
    # probe points inside the bump support, where the error is nontrivial
    psi = flow_box_bump(**PSI)
    delta = 0.05
    points = [(0.3, 0.4, 0.5), (0.25, 0.45, 0.55), (0.35, 0.38, 0.45),
              (0.32, 0.36, 0.6), (0.28, 0.44, 0.42), (0.22, 0.47, 0.52)]
    errs = []
    for w in points:
        a = stable_average(flow, psi, delta, w)
        err = abs(a - psi(*w))
        # leaf speed is below 2 in chart coordinates
        assert err <= 2.0 * delta * psi.lipschitz
        errs.append(err)
    assert max(errs) > 0.0
    half = [abs(stable_average(flow, psi, delta / 2, w) - psi(*w))
            for w in points]
    assert np.mean(half) < np.mean(errs)


# ---------------------------------------------------------------------------
# oscillatory cancellation
# ---------------------------------------------------------------------------


def test_default_cancellation_params(flow):
    params = default_dolgopyat_params(flow)
    assert (params.a, params.b, params.m, params.gamma) == (2.0, 8.0, 2, 0.7)
    assert params.lambda_bar == pytest.approx(1.512226, rel=1e-4)
    assert params.t_max == 12.0
    assert 0.0 < params.nu_a < 1.0
    assert params.nu_a == pytest.approx(
        1.0 / (1.0 + math.log(params.lambda_bar) / 2.0), abs=1e-15)
    assert params.delta_for(8.0) == pytest.approx(8.0 ** -0.7, abs=1e-15)
    assert params.delta_for(-8.0) == params.delta_for(8.0)
    assert params.delta_for(0.0) == params.delta_cap
    assert params.nodes_per_unit_for(128.0) == 131


def test_cancellation_anchor_constant_observable(flow):
    # R(a+ib)^{2m} 1 = (a+ib)^{-2m}: leaf averaging must not disturb it
    one = constant_observable(1.0)
    w = (0.4, 0.6, 0.5)
    params = default_dolgopyat_params(flow)
    val, budget = dolgopyat_value(flow, one, params, w, 2.0)
    target = (2.0 + 2.0j) ** -4
    assert abs(val - target) <= budget
    assert abs(target) == pytest.approx((4.0 + 4.0) ** -2, abs=1e-18)

    params1 = default_dolgopyat_params(flow, m=1)
    val1, budget1 = dolgopyat_value(flow, one, params1, w, 2.0)
    assert abs(abs(val1) - 0.125) <= budget1


def test_cancellation_values_conjugate_in_b(flow):
    psi = flow_box_bump(**PSI)
    params = default_dolgopyat_params(flow)
    for w in [(0.4, 0.6, 0.5), (0.25, 0.3, 0.8)]:
        plus, _ = dolgopyat_value(flow, psi, params, w, 8.0)
        minus, _ = dolgopyat_value(flow, psi, params, w, -8.0)
        assert abs(plus - minus.conjugate()) < 1e-12


def test_cancellation_sweep_small(flow):
    psi = flow_box_bump(**PSI)
    params = default_dolgopyat_params(flow)
    table = dolgopyat_experiment(flow, psi, params, (4.0, 8.0),
                                 eval_points=3, seed=1)
    assert len(table.rows) == 2
    for row in table.rows:
        assert not row.flagged
        assert row.delta == pytest.approx(min(0.25, row.b ** -0.7),
                                          abs=1e-15)
        assert row.ratio > 0.0
        assert row.sup_value <= row.trivial_bound
    assert math.isnan(table.rows[0].gamma0_hat_running)
    assert math.isfinite(table.gamma0_hat)


def test_cancellation_strengthens_with_power(flow):
    psi = flow_box_bump(**PSI)
    params = default_dolgopyat_params(flow)
    rows = dolgopyat_m_sweep(flow, psi, params, ms=(1, 2), eval_points=10,
                             seed=3)
    assert [row["m"] for row in rows] == [1, 2]
    assert rows[0]["ratio"] > rows[1]["ratio"] > 0.0
    assert not any(row["flagged"] for row in rows)


def test_cancellation_csv_round_trip(flow, tmp_path):
    psi = flow_box_bump(**PSI)
    params = default_dolgopyat_params(flow)
    table = dolgopyat_experiment(flow, psi, params, (4.0,), eval_points=2,
                                 seed=2)
    path = tmp_path / "sweep.csv"
    write_dolgopyat_csv(path, table)
    with open(path) as fh:
        comment = fh.readline()
        rows = list(csv.DictReader(fh))
    assert comment.startswith("# a=2")
    assert len(rows) == 1
    assert float(rows[0]["ratio"]) == pytest.approx(table.rows[0].ratio,
                                                    rel=1e-12)
    assert rows[0]["flagged"] == "0"


# ---------------------------------------------------------------------------
# leaf decomposition statistics
# ---------------------------------------------------------------------------


def test_decomposition_counts_and_masses(flow):
    stats = stable_decomposition_stats(flow, 0.05, 0.002, 12, seed=3)
    rows = stats.rows
    assert rows[0] == {"ell": 0, "piece_count": 1,
                       "boundary_mass_r": pytest.approx(0.04, abs=1e-12)}
    counts = [row["piece_count"] for row in rows]
    assert counts == sorted(counts)  # cutting never merges pieces
    assert counts[-1] > counts[0]
    assert all(0.0 <= row["boundary_mass_r"] <= 1.0 for row in rows)
    incs = stats.log_count_increments()
    assert len(incs) == 12
    assert all(0.0 <= inc <= math.log(4.0) + 1e-12 for inc in incs)


def test_decomposition_piece_cap_raises(flow):
    with pytest.raises(PieceExplosion) as info:
        stable_decomposition_stats(flow, 0.05, 0.002, 12, seed=3,
                                   piece_cap=2)
    assert info.value.partial_rows[0]["piece_count"] == 1


def test_decomposition_csv_round_trip(flow, tmp_path):
    stats = stable_decomposition_stats(flow, 0.05, 0.002, 4, seed=3)
    path = tmp_path / "leafstats.csv"
    write_decomposition_csv(path, stats)
    with open(path) as fh:
        comment = fh.readline()
        rows = list(csv.DictReader(fh))
    assert comment.startswith("# delta=0.05")
    assert len(rows) == 5
    assert int(rows[0]["piece_count"]) == 1
    assert float(rows[0]["boundary_mass_r"]) == pytest.approx(0.04,
                                                              abs=1e-12)
