import numpy as np
import pytest

from conftest import make_triangle

from breachlag.analytics import fitted_grid, zero_weighted_triangle
from breachlag.design import build_design, cross_classified_spec
from breachlag.diagnostics import (
    DiagnosticsError,
    af_table,
    af_table_csv,
    diagnostic_tables,
    format_af_table,
    residual_heatmap,
    z_heatmap,
)
from breachlag.glm import fit_odp
from breachlag.triangle import stack


@pytest.fixture(scope="module")
def ca_replay(embedded, published_spec, full_refit):
    """Fitted grid for CA500 from the self-fit coefficients (exact replay)."""
    tri = zero_weighted_triangle(embedded["CA500"], published_spec)
    fit = full_refit["fit"]
    beta = np.array([fit.coefficients[list(fit.term_names).index(n)] for n in published_spec.term_names])
    return fitted_grid(beta, published_spec, embedded["CA500"]), tri


class TestAFTable:
    def test_perfect_fit(self):
        tri = make_triangle([[4, 2], [3, 0]])
        grid = tri.counts.copy()
        table = af_table(grid, tri, "DQ")
        assert all(r.ratio == pytest.approx(1.0) for r in table.rows)
        assert all(r.z == pytest.approx(0.0) for r in table.rows)

    def test_zero_fitted_zero_actual(self):
        tri = make_triangle([[0, 0], [2, 0]])
        grid = np.array([[0.0, 0.0], [2.0, 0.0]])
        table = af_table(grid, tri, "DQ")
        assert table.row("DQ2").ratio == 1.0 and table.row("DQ2").z == 0.0

    def test_zero_fitted_positive_actual_raises(self):
        tri = make_triangle([[1, 0], [0, 0]])
        grid = np.zeros((2, 2))
        with pytest.raises(DiagnosticsError, match="zero fitted"):
            af_table(grid, tri, "DQ")

    def test_axis_totals_agree(self, ca_replay):
        grid, tri = ca_replay
        tables = {axis: af_table(grid, tri, axis) for axis in ("AQ", "DQ", "CQ")}
        # weighted-cell totals are axis-independent
        assert tables["DQ"].total_actual() == pytest.approx(tables["CQ"].total_actual())
        assert tables["DQ"].total_fitted() == pytest.approx(tables["CQ"].total_fitted())

    def test_published_dq_values(self, ca_replay):
        grid, tri = ca_replay
        table = af_table(grid, tri, "DQ")
        dq3 = table.row("DQ3")
        assert dq3.actual == 294
        assert dq3.fitted == pytest.approx(285.37, abs=0.5)
        assert dq3.z == pytest.approx(0.51, abs=0.05)
        dq2 = table.row("DQ2")
        assert dq2.fitted == pytest.approx(714.79, rel=0.001)

    def test_published_aq_z(self, ca_replay):
        grid, tri = ca_replay
        table = af_table(grid, tri, "AQ", include_masked=True)
        assert table.row("2019Q4").z == pytest.approx(4.31, abs=0.05)
        zs = {r.label: abs(r.z) for r in table.rows}
        assert max(zs, key=zs.get) == "2019Q4"

    def test_marginal_balance_zero_z(self, embedded):
        tri = embedded["OR250"]
        spec = cross_classified_spec([tri])
        X, y, w = build_design(stack([tri]), spec)
        fit = fit_odp(X, y, w)
        grid = np.zeros_like(tri.counts)
        table_rows = stack([tri])
        for r in range(len(table_rows)):
            grid[table_rows.i[r] - 1, table_rows.j[r] - 1] = fit.fitted_means[r]
        aq_table = af_table(grid, tri, "AQ")
        assert all(abs(r.z) < 1e-6 for r in aq_table.rows)


class TestHeatmaps:
    def test_residual_grid_shape_and_mask(self, ca_replay):
        grid, tri = ca_replay
        cells = residual_heatmap(grid, tri)
        assert len(cells) == int(tri.observed.sum())
        masked = [c for c in cells if c.masked]
        assert {c.aq for c in masked} == {"2018Q2", "2019Q4", "2020Q1"}
        assert all(c.value == 0.0 for c in masked)

    def test_perfect_fit_all_zero(self):
        tri = make_triangle([[4, 2], [3, 0]])
        cells = residual_heatmap(tri.counts.copy(), tri)
        assert all(c.value == 0.0 for c in cells)

    def test_replay_residual_mean_small(self, ca_replay):
        grid, tri = ca_replay
        values = [c.value for c in residual_heatmap(grid, tri) if not c.masked]
        assert abs(np.mean(values)) < 0.2

    def test_z_heatmap_rows(self, ca_replay):
        grid, tri = ca_replay
        tables = diagnostic_tables(grid, tri)
        series = z_heatmap(tables)
        assert len(series) == sum(len(t.rows) for t in tables.values())
        with pytest.raises(DiagnosticsError, match="missing"):
            z_heatmap({"DQ": tables["DQ"]})

    def test_all_zero_series(self):
        tri = make_triangle([[4, 2], [3, 0]])
        tables = diagnostic_tables(tri.counts.copy(), tri)
        series = z_heatmap(tables)
        assert all(z == pytest.approx(0.0) for _, _, z in series)


class TestExports:
    def test_text_layout_two_decimals(self, ca_replay):
        grid, tri = ca_replay
        text = format_af_table(af_table(grid, tri, "DQ"))
        assert "Sum of events by DQ" in text.splitlines()[0]
        assert any(line.strip().startswith("DQ3") for line in text.splitlines())

    def test_csv_export_full_precision(self, ca_replay):
        grid, tri = ca_replay
        csv_text = af_table_csv(diagnostic_tables(grid, tri))
        header, first = csv_text.splitlines()[:2]
        assert header == "axis,label,actual,fitted,ratio,z"
        assert first.startswith("AQ,2012Q1,")
