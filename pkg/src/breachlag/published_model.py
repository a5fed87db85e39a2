"""The built-in published reserving model: spec text plus point estimates.

`published_model_spec()` returns the full fifteen-segment term list with its
zero-weight quarters; `published_coefficients()` returns the matching
4-decimal estimates, usable directly with `glm.predict` to replay reported
fits without refitting.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources

import numpy as np

from .design import DesignError, ModelSpec, parse_model_spec

def _read_text(name: str) -> str:
    return resources.files("breachlag").joinpath(f"data/{name}").read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def published_model_spec() -> ModelSpec:
    return parse_model_spec(_read_text("published_model.spec"))


@lru_cache(maxsize=1)
def _coefficient_table() -> dict[str, float]:
    out: dict[str, float] = {}
    for row in csv.DictReader(_read_text("published_coefficients.csv").splitlines()):
        out[row["term"]] = float(row["estimate"])
    return out


def published_coefficients(spec: ModelSpec | None = None) -> np.ndarray:
    """Point estimates aligned with the spec's term order."""
    spec = spec or published_model_spec()
    table = _coefficient_table()
    missing = [t for t in spec.term_names if t not in table]
    if missing:
        raise DesignError(f"no published estimate for term(s): {', '.join(missing)}")
    return np.array([table[t] for t in spec.term_names])


PUBLISHED_DISPERSION = 1.3250
