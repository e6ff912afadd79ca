"""Tests for transition-operator assembly against direct quadrature."""

import numpy as np
import pytest
from scipy.integrate import quad

from gsrl import (
    ChangePointModel,
    HatBasis,
    KernelMatrix,
    Measure,
    Method,
    NumericsError,
    Scheme,
    assemble_collocation,
    assemble_midpoint,
    build_matrix,
    dump_matrix_csv,
    operator_rows,
    partition_for,
    uniform_partition,
)


def _quad_entry(model, basis, i, j):
    """Integral of the pre-change transition density against one hat function."""
    nodes = basis.partition.nodes
    psi = float(model.psi_values(np.array([nodes[i]]))[0])
    lo = nodes[max(j - 1, 0)]
    hi = nodes[min(j + 1, nodes.size - 1)]
    val, err = quad(
        lambda y: model.kernel_density(nodes[i], y, Measure.PRE_CHANGE)
        * basis.eval_one(j, y),
        lo, hi, points=[nodes[j]], limit=400)
    return val, err


def test_collocation_entries_match_quadrature():
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 8, Method.COLLOCATION_HAT)
    basis = HatBasis(matrix.partition)
    for i in range(8):
        for j in range(8):
            ref, err = _quad_entry(model, basis, i, j)
            assert matrix.entries[i, j] == pytest.approx(
                ref, abs=max(1e-9, 20 * err)), (i, j)


def test_collocation_entries_match_quadrature_cusum():
    model = ChangePointModel.cusum(0.5)
    matrix = build_matrix(model, 10.0, 6, Method.COLLOCATION_HAT)
    basis = HatBasis(matrix.partition)
    n = matrix.dim
    for i in range(n):
        for j in range(n):
            ref, err = _quad_entry(model, basis, i, j)
            assert matrix.entries[i, j] == pytest.approx(
                ref, abs=max(1e-9, 20 * err)), (i, j)


def test_row_sums_match_analytic_reference():
    # each row integrates the density over [0, A]: sum == cdf(A / psi) exactly
    # up to the telescoping rounding of the assembly
    rng = np.random.default_rng(77)
    for _ in range(6):
        theta = float(rng.uniform(0.1, 1.5))
        a = float(rng.uniform(5.0, 400.0))
        model = ChangePointModel.gsr(theta)
        for n in (64, 128):
            matrix = build_matrix(model, a, n, Method.COLLOCATION_HAT)
            ref = model.lr_cdf(a / model.psi_values(matrix.collocation_points),
                               Measure.PRE_CHANGE)
            gap = float(np.max(np.abs(matrix.row_sums() - ref)))
            assert gap <= 1e-12


def test_row_sums_below_one():
    for theta, a, n in ((0.5, 74.76, 64), (1.0, 560.0, 128), (0.1, 94.34, 256)):
        matrix = build_matrix(ChangePointModel.gsr(theta), a, n, Method.COLLOCATION_HAT)
        tol = np.finfo(float).eps * n * n
        assert float(np.max(matrix.row_sums())) <= 1.0 + tol


def test_row_sums_grow_with_threshold():
    # a larger stopping threshold keeps more mass inside the interval
    model = ChangePointModel.gsr(0.5)
    sums = []
    for a in (10.0, 30.0, 90.0):
        matrix = build_matrix(model, a, 64, Method.COLLOCATION_HAT)
        sums.append(float(matrix.row_sums()[0]))
    assert sums[0] < sums[1] < sums[2] <= 1.0 + 1e-12


def test_midpoint_entries_are_cdf_differences():
    model = ChangePointModel.gsr(0.5)
    matrix = build_matrix(model, 20.0, 16, Method.MIDPOINT)
    nodes = matrix.partition.nodes
    mids = matrix.partition.midpoints
    for i in (0, 7, 15):
        psi = 1.0 + mids[i]
        for j in (0, 3, 15):
            ref = (model.lr_cdf(nodes[j + 1] / psi, Measure.PRE_CHANGE)
                   - model.lr_cdf(nodes[j] / psi, Measure.PRE_CHANGE))
            assert matrix.entries[i, j] == pytest.approx(ref, abs=1e-15)


def test_midpoint_requires_uniform_scheme():
    model = ChangePointModel.gsr(0.5)
    p = partition_for(model, 8, 10.0, Scheme.CHEBYSHEV_SHIFTED)
    with pytest.raises(ValueError):
        assemble_midpoint(model, p)


def test_assemble_collocation_accepts_explicit_partition():
    model = ChangePointModel.gsr(1.0)
    p = uniform_partition(12, 30.0)
    matrix = assemble_collocation(model, p)
    assert matrix.dim == 12
    assert matrix.method is Method.COLLOCATION_HAT
    assert np.array_equal(matrix.collocation_points, p.nodes)


def test_operator_rows_between_nodes_match_quadrature():
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 8, Method.COLLOCATION_HAT)
    basis = HatBasis(matrix.partition)
    nodes = matrix.partition.nodes
    for x in (0.5 * (nodes[2] + nodes[3]), 70.0, 100.0):
        row = operator_rows(matrix, x)[0]
        psi = 1.0 + x
        for j in range(8):
            lo = nodes[max(j - 1, 0)]
            hi = nodes[min(j + 1, nodes.size - 1)]
            ref, err = quad(
                lambda y: model.kernel_density(x, y, Measure.PRE_CHANGE)
                * basis.eval_one(j, y),
                lo, hi, points=[nodes[j]], limit=400)
            assert row[j] == pytest.approx(ref, abs=max(1e-9, 20 * err))


def test_operator_row_at_bottom_state_is_unit_mass_on_zero():
    # psi(-1) = 0 for the ratio recursion: the statistic restarts from zero
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 8, Method.COLLOCATION_HAT)
    row = operator_rows(matrix, -1.0)[0]
    expected = np.zeros(8)
    expected[0] = 1.0
    assert np.array_equal(row, expected)


def test_operator_rows_rejects_states_below_bottom():
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 8, Method.COLLOCATION_HAT)
    with pytest.raises(ValueError):
        operator_rows(matrix, -1.5)


def test_lu_cache_is_reused():
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 32, Method.COLLOCATION_HAT)
    lu1 = matrix.lu()
    lu2 = matrix.lu()
    assert lu1 is lu2


def test_certificate_catches_corrupted_rows():
    model = ChangePointModel.gsr(1.0)
    matrix = build_matrix(model, 56.0, 16, Method.COLLOCATION_HAT)
    bad = matrix.entries.copy()
    bad[3, :] *= 1.5
    from gsrl.kernel import _certify_row_sums
    with pytest.raises(NumericsError):
        _certify_row_sums(bad, matrix.row_sum_reference)


def test_dump_matrix_round_trips(tmp_path):
    model = ChangePointModel.gsr(0.5)
    matrix = build_matrix(model, 10.0, 5, Method.COLLOCATION_HAT)
    out = tmp_path / "matrix.csv"
    dump_matrix_csv(matrix, str(out))
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    parsed = np.array([[float(tok) for tok in line.split(",")] for line in lines])
    assert np.array_equal(parsed, matrix.entries)
