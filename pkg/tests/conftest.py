import time

import numpy as np
import pytest

from breachlag.design import build_design
from breachlag.glm import fit_odp
from breachlag.published_model import published_coefficients, published_model_spec
from breachlag.quarters import YearQuarter
from breachlag.segments import SegmentSpec, SeverityBand, State
from breachlag.triangle import Triangle, load_embedded_triangles, stack


@pytest.fixture(scope="session")
def embedded():
    tris = load_embedded_triangles()
    return {t.segment.key: t for t in tris}


@pytest.fixture(scope="session")
def published_spec():
    return published_model_spec()


@pytest.fixture(scope="session")
def published_coefs():
    return published_coefficients()


@pytest.fixture(scope="session")
def full_refit(embedded, published_spec):
    """One fit of the published model structure on all fifteen segments."""
    triangles = list(embedded.values())
    t0 = time.perf_counter()
    table = stack(triangles)
    X, y, w = build_design(table, published_spec)
    fit = fit_odp(X, y, w, term_names=tuple(published_spec.term_names))
    elapsed = time.perf_counter() - t0
    return {"fit": fit, "table": table, "elapsed": elapsed, "X": X, "y": y, "w": w}


def make_triangle(counts, first_aq="2012Q1", key="TEST", fully_observed=False):
    """Build a synthetic triangle; square upper-triangle unless fully observed."""
    counts = np.asarray(counts, dtype=float)
    n_aq, n_dq = counts.shape
    first = YearQuarter.parse(first_aq)
    seg = SegmentSpec(key, State.CA, SeverityBand.GE500, first, first + (n_aq - 1))
    cutoff = first + (n_aq + n_dq - 2) if fully_observed else None
    return Triangle(seg, counts, np.ones_like(counts), cutoff=cutoff)
