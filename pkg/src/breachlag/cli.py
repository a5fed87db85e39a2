"""Batch front end: ingest, fit, project, diagnose, report, simulate.

Exit codes: 0 success, 2 usage or input problems, 3 numerical failures,
4 missing dependency artifacts. All outputs are written atomically
(rename into place) and are byte-stable for a fixed config and seed;
wall-clock timestamps only ever go to the fit log.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import analytics, chainladder, diagnostics, plots, records as rec
from .design import (
    DesignError,
    ModelSpec,
    build_design,
    cross_classified_spec,
    format_model_spec,
    parse_model_spec,
)
from .glm import FitError, RankDeficientError, export_fit, fit_odp, simulate_counts
from .published_model import published_coefficients, published_model_spec
from .quarters import DEFAULT_EPOCH, QuarterError, YearQuarter
from .segments import SEGMENT_KEYS, SegmentSpec, SeverityBand, segment
from .triangle import (
    Triangle,
    TriangleError,
    load_embedded_triangles,
    read_triangle_csv,
    stack,
    write_triangle_csv,
)

EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_MISSING_ARTIFACT = 4

FREQ_BASE_WINDOW = (YearQuarter(2015, 4), YearQuarter(2016, 3))
GROWTH_WINDOWS = [
    ("2013Q2", "2014Q1"),
    ("2014Q2", "2015Q4"),
    ("2016Q1", "2020Q2"),
    ("2020Q3", "2021Q2"),
    ("2021Q3", "2021Q4"),
]
GROWTH_SEGMENTS = ("CA500", "ME1", "IN1", "MT1")


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    records: Path | None = None
    triangles: Path | None = None
    segments: list[str] = field(default_factory=lambda: list(SEGMENT_KEYS))
    model: str = "paper"
    epoch: YearQuarter = DEFAULT_EPOCH
    horizon: int | None = None
    delay_convention: str = "dq"
    out: Path = Path("out")
    seed: int = 0
    dispersion: float = 1.0
    coefficients: Path | None = None

    def validate(self) -> None:
        unknown = [s for s in self.segments if s not in SEGMENT_KEYS]
        if unknown:
            raise click.UsageError(f"unknown segment(s): {', '.join(unknown)}")
        for label, path in (("records", self.records), ("triangles", self.triangles), ("coefficients", self.coefficients)):
            if path is not None and not path.exists():
                raise click.UsageError(f"{label} path does not exist: {path}")
        if self.model not in ("paper", "cross-classified") and not Path(self.model).exists():
            raise click.UsageError(f"model spec path does not exist: {self.model}")
        if self.delay_convention not in analytics.DELAY_CONVENTIONS:
            raise click.UsageError(f"delay convention must be one of {analytics.DELAY_CONVENTIONS}")


def _read_config_file(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _merge_config(config_path: Path | None, **flags) -> RunConfig:
    cfg = RunConfig()
    values = _read_config_file(config_path) if config_path else {}
    for key, value in values.items():
        if key in ("records", "triangles", "coefficients", "out"):
            setattr(cfg, key, Path(value))
        elif key == "segments" or key == "segment":
            cfg.segments = [s.strip() for s in value.split(",") if s.strip()]
        elif key == "model":
            cfg.model = value
        elif key == "epoch":
            cfg.epoch = YearQuarter.parse(value)
        elif key == "horizon":
            cfg.horizon = int(value)
        elif key == "delay_convention":
            cfg.delay_convention = value
        elif key == "seed":
            cfg.seed = int(value)
        elif key == "dispersion":
            cfg.dispersion = float(value)
        else:
            raise click.UsageError(f"unknown config key {key!r}")
    if flags.get("segment"):
        cfg.segments = [s.strip() for s in flags["segment"].split(",") if s.strip()]
    for key in ("model", "delay_convention"):
        if flags.get(key):
            setattr(cfg, key, flags[key])
    if flags.get("epoch"):
        cfg.epoch = YearQuarter.parse(flags["epoch"])
    if flags.get("horizon") is not None:
        cfg.horizon = flags["horizon"]
    if flags.get("seed") is not None:
        cfg.seed = flags["seed"]
    if flags.get("out"):
        cfg.out = Path(flags["out"])
    if flags.get("records"):
        cfg.records = Path(flags["records"])
    if flags.get("dispersion") is not None:
        cfg.dispersion = flags["dispersion"]
    cfg.validate()
    return cfg


def _atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _wrap_errors(fn):
    """Translate library exceptions into the documented exit codes."""

    def run(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MissingArtifactError as exc:
            _fail(EXIT_MISSING_ARTIFACT, str(exc))
        except (RankDeficientError, FitError, chainladder.DegenerateColumnError, np.linalg.LinAlgError) as exc:
            _fail(EXIT_NUMERICAL, str(exc))
        except (
            rec.RecordFormatError,
            rec.RecordStreamError,
            QuarterError,
            TriangleError,
            DesignError,
            analytics.AnalyticsError,
            diagnostics.DiagnosticsError,
            FileNotFoundError,
        ) as exc:
            _fail(EXIT_INPUT, str(exc))

    run.__name__ = fn.__name__
    return run


def _common_options(fn):
    for opt in reversed(
        [
            click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None),
            click.option("--segment", default=None, help="comma-separated segment keys (default: all 15)"),
            click.option("--model", default=None, help="paper | cross-classified | PATH to a model-spec file"),
            click.option("--epoch", default=None, help="global accident-quarter epoch, YYYYQn"),
            click.option("--horizon", type=int, default=None),
            click.option("--delay-convention", "delay_convention", type=click.Choice(list(analytics.DELAY_CONVENTIONS)), default=None),
            click.option("--out", default=None, help="output directory"),
            click.option("--seed", type=int, default=None),
        ]
    ):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Run-off triangle reserving for state data-breach notifications."""


def _segments(cfg: RunConfig) -> list[SegmentSpec]:
    return [segment(k) for k in cfg.segments]


def _load_triangles(cfg: RunConfig) -> list[Triangle]:
    if cfg.triangles is None:
        return load_embedded_triangles(cfg.segments)
    with open(cfg.triangles, encoding="utf-8") as fh:
        tris = read_triangle_csv(fh)
    by_key = {t.segment.key: t for t in tris}
    missing = [k for k in cfg.segments if k not in by_key]
    if missing:
        raise TriangleError(f"triangle file lacks segment(s): {', '.join(missing)}")
    return [by_key[k] for k in cfg.segments]


def _resolve_spec(cfg: RunConfig, triangles: list[Triangle]) -> ModelSpec:
    if cfg.model == "cross-classified":
        return cross_classified_spec(triangles)
    if cfg.model == "paper":
        spec = published_model_spec()
    else:
        spec = parse_model_spec(Path(cfg.model).read_text(encoding="utf-8"))
    return spec.restrict_to_segments(cfg.segments)


# -- ingest -------------------------------------------------------------------


@main.command()
@_common_options
@click.option("--records", "records_path", type=click.Path(path_type=Path), default=None, help="raw record CSV")
@_wrap_errors
def ingest(config_path, records_path, **flags) -> None:
    """Parse, clean, and aggregate raw records into triangle files."""
    cfg = _merge_config(config_path, records=records_path, **flags)
    if cfg.records is None:
        raise click.UsageError("ingest needs a record file (--records or records= in the config)")
    with open(cfg.records, "rb") as fh:
        parsed = rec.parse_breach_records(fh)
    cleaned, report = rec.clean_records(parsed)
    if not parsed:
        click.echo("warning: no records in input", err=True)
    selected_total = 0
    for seg in _segments(cfg):
        chosen = rec.select_period(cleaned, seg)
        selected_total += len(chosen)
        tri = rec.aggregate_to_triangle(chosen, seg)
        buf = io.StringIO()
        write_triangle_csv(tri, buf)
        _atomic_write(cfg.out / f"{seg.key}.csv", buf.getvalue())
    if len(cfg.segments) == len(SEGMENT_KEYS):
        # with every segment selected, the leftovers are exactly the
        # records whose occurrence falls outside their state's window
        report.out_of_period_dropped += report.records_out - selected_total
        report.records_out = selected_total
    _atomic_write(cfg.out / "cleaning_report.txt", "\n".join(report.lines()) + "\n")
    click.echo(f"wrote {len(cfg.segments)} triangle file(s) to {cfg.out}")


# -- fit ----------------------------------------------------------------------


@main.command()
@_common_options
@_wrap_errors
def fit(config_path, **flags) -> None:
    """Fit the model and write the coefficient table and convergence log."""
    cfg = _merge_config(config_path, **flags)
    triangles = _load_triangles(cfg)
    spec = _resolve_spec(cfg, triangles)
    table = stack(triangles, cfg.epoch)
    X, y, w = build_design(table, spec)
    result = fit_odp(X, y, w, term_names=tuple(spec.term_names))
    _atomic_write(cfg.out / "model.spec", format_model_spec(spec))
    _atomic_write(cfg.out / "coefficients.csv", export_fit(result))
    log = (
        f"fitted at {dt.datetime.now().isoformat(timespec='seconds')}\n"
        f"segments: {','.join(cfg.segments)}\n"
        f"rows={len(y)} effective_n={result.effective_n} p={result.p}\n"
        f"iterations={result.iterations} converged={result.converged}\n"
        f"deviance={result.deviance:.6f} dispersion={result.dispersion:.6f}\n"
    )
    _atomic_write(cfg.out / "fit_log.txt", log)
    click.echo(
        f"fit: {result.p} terms on {result.effective_n} cells, "
        f"dispersion {result.dispersion:.4f}, converged={result.converged}"
    )
    if not result.converged:
        click.echo("warning: IRLS hit the iteration cap", err=True)


def _load_fit_artifact(cfg: RunConfig) -> tuple[ModelSpec, np.ndarray]:
    spec_path = cfg.out / "model.spec"
    coef_path = cfg.out / "coefficients.csv"
    for p in (spec_path, coef_path):
        if not p.exists():
            raise MissingArtifactError(f"missing fit artifact {p}; run `fit` first")
    spec = parse_model_spec(spec_path.read_text(encoding="utf-8"))
    names, estimates = [], []
    for line in coef_path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("term,"):
            continue
        parts = line.split(",")
        names.append(parts[0])
        estimates.append(float(parts[1]))
    if names != spec.term_names:
        raise MissingArtifactError(f"{coef_path} does not match {spec_path} (stale artifacts?)")
    return spec, np.array(estimates)


def _projections(cfg: RunConfig, spec: ModelSpec, coef: np.ndarray, triangles: list[Triangle]):
    for tri in triangles:
        yield tri, analytics.project_lower(coef, spec, tri, cfg.horizon, cfg.epoch)


# -- project ------------------------------------------------------------------


def _ibnr_csv(proj: analytics.ProjectionResult) -> str:
    lines = ["segment,aq,reported,ibnr,ultimate"]
    for aq, reported, ibnr, ult in zip(
        proj.aq_labels, proj.reported_by_aq, proj.ibnr_by_aq, proj.ultimates_by_aq
    ):
        lines.append(f"{proj.segment_key},{aq},{reported:.0f},{ibnr:.6f},{ult:.6f}")
    return "\n".join(lines) + "\n"


def _pattern_csv(proj: analytics.ProjectionResult) -> str:
    lines = ["segment,aq,dq,p,P"]
    for aq in proj.aq_labels:
        curve = analytics.dev_pattern(proj, aq)
        for j, (p, P) in enumerate(zip(curve.p, curve.P), start=1):
            lines.append(f"{proj.segment_key},{aq},{j},{p:.8f},{P:.8f}")
    return "\n".join(lines) + "\n"


@main.command()
@_common_options
@_wrap_errors
def project(config_path, **flags) -> None:
    """Complete the lower triangles and write IBNR/ultimate tables."""
    cfg = _merge_config(config_path, **flags)
    spec, coef = _load_fit_artifact(cfg)
    for tri, proj in _projections(cfg, spec, coef, _load_triangles(cfg)):
        _atomic_write(cfg.out / f"{tri.segment.key}_ibnr.csv", _ibnr_csv(proj))
        _atomic_write(cfg.out / f"{tri.segment.key}_pattern.csv", _pattern_csv(proj))
    click.echo(f"projected {len(cfg.segments)} segment(s) into {cfg.out}")


# -- diagnose -----------------------------------------------------------------


@main.command()
@_common_options
@_wrap_errors
def diagnose(config_path, **flags) -> None:
    """Write actual-vs-fitted tables, Z scores, and residual heatmaps."""
    cfg = _merge_config(config_path, **flags)
    spec, coef = _load_fit_artifact(cfg)
    triangles = _load_triangles(cfg)
    for tri in triangles:
        key = tri.segment.key
        masked = analytics.zero_weighted_triangle(tri, spec)
        grid = analytics.fitted_grid(coef, spec, tri, tri.n_dq, cfg.epoch)
        tables = diagnostics.diagnostic_tables(grid, masked)
        _atomic_write(cfg.out / f"{key}_af.csv", diagnostics.af_table_csv(tables))
        _atomic_write(
            cfg.out / f"{key}_af.txt",
            "\n".join(diagnostics.format_af_table(tables[a]) for a in ("DQ", "AQ", "CQ")),
        )
        cells = diagnostics.residual_heatmap(grid, masked)
        res_lines = ["aq,dq,residual,masked"] + [
            f"{c.aq},{c.dq},{c.value!r},{int(c.masked)}" for c in cells
        ]
        _atomic_write(cfg.out / f"{key}_residuals.csv", "\n".join(res_lines) + "\n")
        plots.z_heatmap_figure(diagnostics.z_heatmap(tables), key, cfg.out / f"{key}_zscores.svg")
        plots.residual_heatmap_figure(cells, key, cfg.out / f"{key}_residuals.svg")
    click.echo(f"diagnostics for {len(triangles)} segment(s) in {cfg.out}")


# -- report -------------------------------------------------------------------


def _growth_table_csv(projections: dict[str, analytics.ProjectionResult]) -> str:
    cols = [k for k in GROWTH_SEGMENTS if k in projections]
    lines = ["window," + ",".join(cols)]
    for lo_s, hi_s in GROWTH_WINDOWS:
        window = (YearQuarter.parse(lo_s), YearQuarter.parse(hi_s))
        cells = []
        for key in cols:
            proj = projections[key]
            try:
                (g,) = analytics.growth_stats(list(proj.aq_labels), proj.ultimates_by_aq, [window])
                cells.append(f"{g.mean_pct:.2f}({g.sd_pct:.2f})")
            except analytics.AnalyticsError:
                cells.append("NA")
        lines.append(f"{lo_s}-{hi_s}," + ",".join(cells))
    return "\n".join(lines) + "\n"


@main.command()
@_common_options
@_wrap_errors
def report(config_path, **flags) -> None:
    """Frequency, pattern, delay, and growth outputs with figures."""
    cfg = _merge_config(config_path, **flags)
    spec, coef = _load_fit_artifact(cfg)
    triangles = _load_triangles(cfg)
    projections: dict[str, analytics.ProjectionResult] = {}
    for tri in triangles:
        key = tri.segment.key
        proj = analytics.project_lower(coef, spec, tri, cfg.horizon, cfg.epoch)
        projections[key] = proj
        aqs = list(proj.aq_labels)
        try:
            index = analytics.freq_index(aqs, proj.ultimates_by_aq, FREQ_BASE_WINDOW)
        except analytics.AnalyticsError:
            index = None
        lines = ["segment,aq,reported,ibnr,ultimate,index"]
        for k, aq in enumerate(aqs):
            idx = f"{index[k]:.4f}" if index is not None else ""
            lines.append(
                f"{key},{aq},{proj.reported_by_aq[k]:.0f},{proj.ibnr_by_aq[k]:.6f},"
                f"{proj.ultimates_by_aq[k]:.6f},{idx}"
            )
        _atomic_write(cfg.out / f"{key}_freq.csv", "\n".join(lines) + "\n")
        _atomic_write(cfg.out / f"{key}_pattern.csv", _pattern_csv(proj))

        points = analytics.delay_series(coef, spec, tri, cfg.horizon, cfg.epoch, cfg.delay_convention)
        delay_lines = ["segment,aq,delay,trend,zero_weighted"]
        delay_lines += [
            f"{key},{p.aq},{p.delay:.6f},{p.trend:.6f},{int(p.zero_weighted)}" for p in points
        ]
        _atomic_write(cfg.out / f"{key}_delay.csv", "\n".join(delay_lines) + "\n")

        plots.frequency_figure(proj, index, cfg.out / f"{key}_freq.svg")
        step = max(1, len(aqs) // 6)
        curves = [analytics.dev_pattern(proj, aq) for aq in aqs[::step]]
        plots.pattern_figure(curves, key, cfg.out / f"{key}_pattern.svg", max_dq=min(12, proj.horizon))
        plots.delay_figure(points, key, cfg.out / f"{key}_delay.svg")

    _atomic_write(cfg.out / "growth.csv", _growth_table_csv(projections))
    trend_lines = ["segment,term,estimate,std_error,p_value,significant"]
    for key, proj in projections.items():
        try:
            tf = analytics.fit_trend(list(proj.aq_labels), proj.ultimates_by_aq, cfg.epoch)
        except analytics.AnalyticsError:
            continue
        for name, est, se, p, sig in zip(
            analytics.TREND_TERMS, tf.coefficients, tf.std_errors, tf.p_values, tf.significant
        ):
            trend_lines.append(f"{key},{name},{est:.6f},{se:.6f},{p:.6f},{int(sig)}")
    _atomic_write(cfg.out / "trend.csv", "\n".join(trend_lines) + "\n")
    click.echo(f"report for {len(triangles)} segment(s) in {cfg.out}")


# -- simulate -----------------------------------------------------------------


_BAND_AFFECTED = {
    SeverityBand.SMALL: 120,
    SeverityBand.MID: 300,
    SeverityBand.GE250: 600,
    SeverityBand.GE500: 900,
}


def synthesize_records(tri: Triangle, start_id: int = 0) -> list[rec.BreachRecord]:
    """Deterministic record rows whose ingest reproduces the triangle exactly."""
    out = []
    affected = _BAND_AFFECTED[tri.segment.band]
    n = start_id
    obs = tri.observed
    for i, aq in enumerate(tri.aq_labels):
        for j in range(tri.n_dq):
            if not obs[i, j]:
                continue
            cq = aq + j
            occurrence = aq.start_date() + dt.timedelta(days=40)
            report = occurrence + dt.timedelta(days=10) if j == 0 else cq.start_date() + dt.timedelta(days=44)
            for _ in range(int(tri.counts[i, j])):
                n += 1
                out.append(
                    rec.BreachRecord(
                        record_id=f"{tri.segment.key}-{n:06d}",
                        state=tri.segment.state,
                        org_name=f"Org {n:06d}",
                        occurrence_date=occurrence,
                        report_date=report,
                        affected=affected,
                    )
                )
    return out


def write_records_csv(rows: list[rec.BreachRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(rec.HEADER)
    for r in rows:
        writer.writerow(
            [
                r.record_id,
                r.state.value if r.state else "",
                r.org_name or "",
                r.occurrence_date.isoformat() if r.occurrence_date else "",
                r.report_date.isoformat() if r.report_date else "",
                "" if r.affected is None else r.affected,
                "true" if r.is_supplementary else "false",
                r.parent_record_id or "",
            ]
        )
    return buf.getvalue()


@main.command()
@_common_options
@click.option("--dispersion", type=float, default=None, help="variance inflation for the draws (>= 1)")
@_wrap_errors
def simulate(config_path, dispersion, **flags) -> None:
    """Draw synthetic triangles and record files from a model."""
    cfg = _merge_config(config_path, dispersion=dispersion, **flags)
    if cfg.dispersion < 1.0:
        raise click.UsageError(f"dispersion must be >= 1, got {cfg.dispersion}")
    if cfg.model == "cross-classified":
        raise click.UsageError("simulate needs explicit coefficients: use --model paper or a spec path")
    if cfg.model == "paper":
        spec, coef = published_model_spec(), published_coefficients()
    else:
        spec = parse_model_spec(Path(cfg.model).read_text(encoding="utf-8"))
        if cfg.coefficients is None:
            raise click.UsageError("simulate with a spec path needs coefficients= in the config")
        names, estimates = [], []
        for line in cfg.coefficients.read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#") or line.startswith("term,"):
                continue
            name, value = line.split(",")[:2]
            names.append(name)
            estimates.append(float(value))
        coef = analytics.align_coefficients(tuple(names), np.array(estimates), spec)

    covered = spec.covered_segments()
    keys = [k for k in cfg.segments if k in covered]
    all_rows: list[rec.BreachRecord] = []
    for k, key in enumerate(keys):
        seg = segment(key)
        n_q = seg.n_quarters if cfg.horizon is None else min(cfg.horizon, seg.n_quarters)
        if n_q == 0:
            continue
        window = SegmentSpec(seg.key, seg.state, seg.band, seg.first_aq, seg.first_aq + (n_q - 1))
        shell = Triangle(window, np.zeros((n_q, n_q)), np.ones((n_q, n_q)))
        grid = analytics.fitted_grid(coef, spec, shell, n_q, cfg.epoch)
        obs = shell.observed
        draws = simulate_counts(grid[obs], cfg.dispersion, seed=cfg.seed + 7919 * k)
        counts = np.zeros_like(grid)
        counts[obs] = draws
        tri = Triangle(window, counts, np.ones_like(counts))
        buf = io.StringIO()
        write_triangle_csv(tri, buf)
        _atomic_write(cfg.out / f"{key}.csv", buf.getvalue())
        all_rows.extend(synthesize_records(tri, start_id=len(all_rows)))
    _atomic_write(cfg.out / "records.csv", write_records_csv(all_rows))
    click.echo(f"simulated {len(keys)} segment(s), {len(all_rows)} record(s), seed {cfg.seed}")


if __name__ == "__main__":
    main()
