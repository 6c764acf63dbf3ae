"""Synthetic source/target populations with a controllable mean shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ColumnSchema, Dataset


@dataclass(frozen=True)
class ShiftSpec:
    """Simulation settings.

    ``truth`` is ``friedman``, ``linear`` (uses ``beta`` and ``intercept``)
    or ``constant`` (uses ``constant``). ``shift`` is added to every target
    covariate vector; a scalar applies to all columns.
    """

    n_source: int = 500
    n_target: int = 500
    p: int = 5
    shift: tuple[float, ...] | float = 0.0
    truth: str = "friedman"
    beta: tuple[float, ...] | None = None
    intercept: float = 0.0
    constant: float = 0.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_source < 1 or self.n_target < 1:
            raise ValueError("population sizes must be at least 1")
        if self.p < 5:
            raise ValueError("need at least 5 covariates")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be nonnegative")
        shift = np.broadcast_to(np.asarray(self.shift, dtype=float), (self.p,))
        object.__setattr__(self, "shift", tuple(float(s) for s in shift))
        if self.truth not in ("friedman", "linear", "constant"):
            raise ValueError(f"unknown truth {self.truth!r}")
        if self.truth == "linear":
            if self.beta is None or len(self.beta) != self.p:
                raise ValueError(f"linear truth needs beta of length {self.p}")
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))


def friedman(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return (
        10 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20 * (X[:, 2] - 0.5) ** 2
        + 10 * X[:, 3]
        + 5 * X[:, 4]
    )


def true_mean(spec: ShiftSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if spec.truth == "friedman":
        return friedman(X)
    if spec.truth == "linear":
        return spec.intercept + X @ np.asarray(spec.beta)
    return np.full(X.shape[0], float(spec.constant))


def generate(spec: ShiftSpec) -> Dataset:
    """Both populations in one dataset; source rows first, outcomes on every row."""
    rng = np.random.default_rng(spec.seed)
    draw = rng.random if spec.truth == "friedman" else rng.standard_normal
    Xs = draw((spec.n_source, spec.p))
    Xt = draw((spec.n_target, spec.p)) + np.asarray(spec.shift)
    X = np.vstack([Xs, Xt])
    n = X.shape[0]
    y = true_mean(spec, X) + spec.noise_sd * rng.standard_normal(n)
    ids = [f"s{i}" for i in range(spec.n_source)] + [f"t{i}" for i in range(spec.n_target)]
    membership = np.r_[np.ones(spec.n_source, np.int8), np.zeros(spec.n_target, np.int8)]
    schema = tuple(ColumnSchema(f"x{j + 1}") for j in range(spec.p))
    return Dataset(schema, X, membership, tuple(ids), y, "y")


def mask_target(d: Dataset) -> Dataset:
    """Hide target outcomes, as when only the source population is labeled."""
    if d.outcome is None:
        return d
    y = np.array(d.outcome, copy=True)
    y[d.membership == 0] = np.nan
    return d.with_outcome(y)
