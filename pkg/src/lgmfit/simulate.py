"""Synthetic data generators for the bundled model families.

Each generator returns (data, truth): a pandas DataFrame ready for
build_model plus a flat dict of the parameters that produced it.  Seeded
generation is bit-reproducible.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import LgmError
from .modelspec import ComponentDecl, ModelDescription


def _standardized(rng, n: int) -> np.ndarray:
    x = rng.normal(size=n)
    return (x - x.mean()) / x.std()


def simulate_irt(n_students: int, n_items: int, seed: int = 0,
                 discrimination: str = "rasch"):
    """Item-response data on the full student x item cross.

    eta_ij = beta_j * (ability_i - difficulty_j); Rasch fixes beta_j = 1,
    `discrimination="gamma"` draws beta_j ~ Gamma(20, 20) instead."""
    if n_students < 2 or n_items < 2:
        raise LgmError("need at least 2 students and 2 items")
    rng = np.random.default_rng(seed)
    ability = rng.normal(size=n_students)
    difficulty = rng.normal(size=n_items)
    if discrimination == "rasch":
        beta = np.ones(n_items)
    elif discrimination == "gamma":
        beta = rng.gamma(shape=20.0, scale=1.0 / 20.0, size=n_items)
    else:
        raise LgmError("discrimination must be rasch or gamma")
    student = np.repeat(np.arange(n_students), n_items)
    item = np.tile(np.arange(n_items), n_students)
    eta = beta[item] * (ability[student] - difficulty[item])
    y = (rng.uniform(size=eta.shape[0]) < 1.0 / (1.0 + np.exp(-eta)))
    data = pd.DataFrame({
        "student": student.astype(np.int64),
        "item": item.astype(np.int64),
        "y": y.astype(np.int64),
    })
    truth = {"ability": ability, "difficulty": difficulty,
             "discrimination": beta}
    return data, truth


def irt_description() -> ModelDescription:
    """Rasch model: +1 on the student ability, -1 on the item difficulty."""
    return ModelDescription(
        family="bernoulli", response="y",
        components=[
            ComponentDecl(kind="iid", column="student", name="ability"),
            ComponentDecl(kind="iid", column="item", name="difficulty",
                          weight=-1.0),
        ])


def simulate_glm(n: int, family: str = "poisson", seed: int = 0,
                 intercept: float = 0.5, slope: float = 0.3,
                 sigma: float = 1.0):
    """One standardized covariate through a GLM inverse link."""
    if n < 2:
        raise LgmError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = _standardized(rng, n)
    eta = intercept + slope * x
    if family == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    elif family == "bernoulli":
        y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif family == "gaussian":
        y = eta + sigma * rng.normal(size=n)
    else:
        raise LgmError(f"unknown family {family!r}")
    data = pd.DataFrame({"x": x, "y": y})
    truth = {"intercept": np.array([intercept]), "slope": np.array([slope])}
    if family == "gaussian":
        truth["sigma"] = np.array([sigma])
    return data, truth


def glm_description(family: str) -> ModelDescription:
    return ModelDescription(
        family=family, response="y",
        components=[ComponentDecl(kind="intercept"),
                    ComponentDecl(kind="linear", column="x")])


def write_dataset(out_dir, data: pd.DataFrame, truth: dict):
    """data.csv plus truth.csv with (name, index, value) rows."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "data.csv")
    truth_path = os.path.join(out_dir, "truth.csv")
    data.to_csv(data_path, index=False)
    rows = []
    for name, vals in truth.items():
        arr = np.atleast_1d(np.asarray(vals, dtype=float))
        rows.extend({"name": name, "index": i, "value": float(v)}
                    for i, v in enumerate(arr))
    pd.DataFrame(rows, columns=["name", "index", "value"]).to_csv(
        truth_path, index=False)
    return data_path, truth_path
