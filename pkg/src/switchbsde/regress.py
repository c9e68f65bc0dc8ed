"""Basis construction and ridge-stabilised least squares.

One fitted regression stands in for a conditional expectation given the
state at one time step.  Two basis families: total-degree polynomials over
standardised coordinates (default) and piecewise-constant hypercube
indicators.  The normal-equations solve reuses a single factorisation for
many target columns, which is what the backward scheme needs (several
targets per time step on one design matrix).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateDesign, EmptyInput

__all__ = [
    "BasisSpec",
    "RegressionFit",
    "design_matrix",
    "fit_conditional_expectation",
    "fit_many",
    "predict",
    "predict_many",
]

CONDITION_LIMIT = 1e12
RIDGE_LADDER = (1e-10, 1e-8, 1e-6)


def _poly_powers(d: int, degree: int):
    """Exponent multi-indices with total degree <= degree, graded lexicographic."""
    powers = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), total):
            exponents = [0] * d
            for idx in combo:
                exponents[idx] += 1
            powers.append(tuple(exponents))
    return powers


@dataclass
class BasisSpec:
    """Describes a regression basis; scaling is frozen onto a copy at fit time.

    kind "polynomial": all monomials of total degree <= degree in the
    (optionally standardised) coordinates.  kind "hypercube": indicator of
    the bin containing the state, per-axis bin counts over a bounding box;
    states outside the box clamp to the nearest bin.
    """

    kind: str = "polynomial"
    degree: int = 3
    standardize: bool = True
    bins: tuple = ()
    box_lo: tuple = ()
    box_hi: tuple = ()
    center: np.ndarray | None = field(default=None, repr=False)
    scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("polynomial", "hypercube"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "hypercube":
            if not self.bins or len(self.bins) != len(self.box_lo) or len(self.bins) != len(
                self.box_hi
            ):
                raise ValueError("hypercube basis needs bins, box_lo, box_hi of equal length")
            if any(b < 1 for b in self.bins):
                raise ValueError("bin counts must be >= 1")

    def size(self, d: int) -> int:
        if self.kind == "polynomial":
            return len(_poly_powers(d, self.degree))
        return int(np.prod(self.bins))

    @property
    def frozen(self) -> bool:
        return self.kind == "hypercube" or not self.standardize or self.center is not None

    def freeze(self, states: np.ndarray) -> "BasisSpec":
        """Return a copy with standardisation statistics pinned to `states`."""
        if self.kind != "polynomial" or not self.standardize:
            return self
        center = states.mean(axis=0)
        scale = states.std(axis=0)
        scale = np.where(scale > 1e-300, scale, 1.0)
        return BasisSpec(
            kind=self.kind,
            degree=self.degree,
            standardize=True,
            center=center,
            scale=scale,
        )

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "polynomial":
            out["degree"] = self.degree
            out["standardize"] = self.standardize
            if self.center is not None:
                out["center"] = list(map(float, self.center))
                out["scale"] = list(map(float, self.scale))
        else:
            out["bins"] = list(self.bins)
            out["box_lo"] = list(map(float, self.box_lo))
            out["box_hi"] = list(map(float, self.box_hi))
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "BasisSpec":
        if data["kind"] == "polynomial":
            basis = cls(
                kind="polynomial",
                degree=int(data["degree"]),
                standardize=bool(data.get("standardize", True)),
            )
            if "center" in data:
                basis.center = np.asarray(data["center"], dtype=float)
                basis.scale = np.asarray(data["scale"], dtype=float)
            return basis
        return cls(
            kind="hypercube",
            bins=tuple(int(b) for b in data["bins"]),
            box_lo=tuple(float(v) for v in data["box_lo"]),
            box_hi=tuple(float(v) for v in data["box_hi"]),
        )


def design_matrix(basis: BasisSpec, states: np.ndarray) -> np.ndarray:
    """Feature matrix: one row of basis values per state."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    n, d = states.shape
    if n == 0:
        raise EmptyInput("no states to build a design matrix from")
    if not np.isfinite(states).all():
        raise ValueError("states contain non-finite entries")
    if basis.kind == "polynomial":
        if basis.standardize and basis.center is not None:
            coords = (states - basis.center) / basis.scale
        else:
            coords = states
        powers = _poly_powers(d, basis.degree)
        out = np.empty((n, len(powers)))
        # cache coordinate powers up to the maximal exponent per axis
        pows = [None] * d
        for j in range(d):
            col = coords[:, j]
            stack = np.empty((basis.degree + 1, n))
            stack[0] = 1.0
            for p in range(1, basis.degree + 1):
                stack[p] = stack[p - 1] * col
            pows[j] = stack
        for b, expo in enumerate(powers):
            col = np.ones(n)
            for j, p in enumerate(expo):
                if p:
                    col = col * pows[j][p]
            out[:, b] = col
        return out
    # hypercube indicators with clamping to the nearest bin
    bins = np.asarray(basis.bins, dtype=int)
    lo = np.asarray(basis.box_lo, dtype=float)
    hi = np.asarray(basis.box_hi, dtype=float)
    width = (hi - lo) / bins
    idx = np.floor((states - lo) / width).astype(int)
    idx = np.clip(idx, 0, bins - 1)
    flat = np.zeros(n, dtype=int)
    for j in range(d):
        flat = flat * bins[j] + idx[:, j]
    out = np.zeros((n, int(np.prod(bins))))
    out[np.arange(n), flat] = 1.0
    return out


@dataclass
class RegressionFit:
    """Frozen basis plus fitted coefficients; predicts feature . coefficients."""

    basis: BasisSpec
    coefficients: np.ndarray
    ridge: float
    condition: float
    residual_rms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "basis": self.basis.to_json_dict(),
                "coefficients": list(map(float, self.coefficients)),
                "ridge": self.ridge,
                "condition": self.condition,
                "residual_rms": self.residual_rms,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "RegressionFit":
        data = json.loads(text)
        return cls(
            basis=BasisSpec.from_json_dict(data["basis"]),
            coefficients=np.asarray(data["coefficients"], dtype=float),
            ridge=float(data["ridge"]),
            condition=float(data["condition"]),
            residual_rms=float(data["residual_rms"]),
        )


class _SharedDesign:
    """One factorisation of the normal matrix, reused across target columns.

    Ridge escalates through RIDGE_LADDER (scaled by the mean diagonal of the
    Gram matrix) when the plain normal matrix is ill-conditioned; the chosen
    ridge is recorded on every fit it produces.
    """

    def __init__(self, basis: BasisSpec, states: np.ndarray):
        frozen = basis.freeze(np.asarray(states, dtype=float).reshape(len(states), -1))
        self.basis = frozen
        self.features = design_matrix(frozen, states)
        n, width = self.features.shape
        gram = self.features.T @ self.features
        trace_scale = float(np.trace(gram)) / width if width else 1.0
        if trace_scale <= 0 or not np.isfinite(trace_scale):
            trace_scale = 1.0
        eigs = scipy.linalg.eigvalsh(gram)
        lam_min = float(eigs[0])
        lam_max = float(eigs[-1])
        self.condition = np.inf if lam_min <= 0 else lam_max / lam_min
        self.ridge = 0.0
        self.factor = None
        ladder = [0.0] if self.condition <= CONDITION_LIMIT else []
        ladder += [r * trace_scale for r in RIDGE_LADDER]
        for lam in ladder:
            try:
                factor = scipy.linalg.cho_factor(
                    gram + lam * np.eye(width), lower=True, check_finite=False
                )
            except scipy.linalg.LinAlgError:
                continue
            if np.isfinite(factor[0]).all():
                self.factor = factor
                self.ridge = lam
                break
        if self.factor is None:
            raise DegenerateDesign(
                f"normal matrix unusable even with ridge escalation (condition {self.condition:g})"
            )

    def solve(self, targets: np.ndarray) -> RegressionFit:
        targets = np.asarray(targets, dtype=float)
        if not np.isfinite(targets).all():
            raise DegenerateDesign("targets contain non-finite entries")
        rhs = self.features.T @ targets
        coef = scipy.linalg.cho_solve(self.factor, rhs, check_finite=False)
        if not np.isfinite(coef).all():
            raise DegenerateDesign("non-finite coefficients")
        resid = targets - self.features @ coef
        return RegressionFit(
            basis=self.basis,
            coefficients=coef,
            ridge=self.ridge,
            condition=self.condition,
            residual_rms=float(np.sqrt(np.mean(resid**2))),
        )

    def predict_inplace(self, fit: RegressionFit) -> np.ndarray:
        """Predictions at the design states without rebuilding features."""
        return self.features @ fit.coefficients


def fit_conditional_expectation(
    basis: BasisSpec, states: np.ndarray, targets: np.ndarray, ridge: float = 0.0
) -> RegressionFit:
    """Least-squares fit of targets on basis features of the states.

    With ridge == 0 the solver still escalates through small ridge values if
    the normal matrix condition exceeds 1e12; an explicit positive `ridge`
    is applied on top of the Gram matrix directly.
    """
    targets = np.asarray(targets, dtype=float)
    if len(targets) == 0:
        raise EmptyInput("no targets")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    shared = _SharedDesign(basis, states)
    if ridge > 0.0:
        gram = shared.features.T @ shared.features + ridge * np.eye(shared.features.shape[1])
        shared.factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        shared.ridge = ridge
    return shared.solve(targets)


def fit_many(basis: BasisSpec, states: np.ndarray, target_columns) -> list:
    """Fit several target vectors against one shared design factorisation."""
    shared = _SharedDesign(basis, states)
    return [shared.solve(np.asarray(t, dtype=float)) for t in target_columns]


def predict_many(fit: RegressionFit, states: np.ndarray) -> np.ndarray:
    """Vectorised predictions at many states."""
    return design_matrix(fit.basis, states) @ fit.coefficients


def predict(fit: RegressionFit, state) -> float:
    """Prediction at a single state."""
    state = np.atleast_1d(np.asarray(state, dtype=float))
    return float(predict_many(fit, state[None, :])[0])
