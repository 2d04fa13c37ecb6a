"""Arc elements: the seven payload kinds a graph arc can carry.

Every arc in a graph applies exactly one of: identity, linear map, affine
map, activation, activation composed with an affine map, transform, or
transform composed with an affine map.  Elements are immutable, know their
input/output dimensions, and apply to batches (leading axes are preserved,
the last axis is the vector dimension).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import ClassVar, Iterable, Optional, Union

import numpy as np

from .basis import (
    ActivationLike,
    PoolSpec,
    TransformSpec,
    activation_bound,
    cpwl_eval,
    pool_values,
    transform_eval,
)

__all__ = [
    "Identity",
    "Linear",
    "Affine",
    "Activation",
    "ActivationAffine",
    "Transform",
    "TransformAffine",
    "BasisElement",
    "linear_part",
    "activation_of",
    "transform_of",
    "pre_activation",
    "element_bound",
    "uniform_bound",
]


def _matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValueError(f"weight must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight entries must be finite")
    arr.setflags(write=False)
    return arr


def _vector(value, rows: int) -> np.ndarray:
    if value is None:
        arr = np.zeros(rows)
    else:
        arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (rows,):
        raise ValueError(f"bias must have length {rows}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("bias entries must be finite")
    arr.setflags(write=False)
    return arr


def _act_out_dim(act: ActivationLike, in_dim: int) -> int:
    if isinstance(act, PoolSpec):
        if in_dim % act.block:
            raise ValueError(
                f"activation input dim {in_dim} is not a multiple of block {act.block}"
            )
        return in_dim // act.block
    return in_dim


def _apply_act(act: ActivationLike, values: np.ndarray) -> np.ndarray:
    if isinstance(act, PoolSpec):
        return pool_values(act, values)
    return cpwl_eval(act, values)


@dataclass(frozen=True, eq=False)
class Identity:
    dim: int

    kind: ClassVar[str] = "identity"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("identity dimension must be positive")

    @property
    def in_dim(self) -> int:
        return self.dim

    @property
    def out_dim(self) -> int:
        return self.dim

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values


@dataclass(frozen=True, eq=False)
class Linear:
    weight: np.ndarray

    kind: ClassVar[str] = "linear"

    def __post_init__(self):
        object.__setattr__(self, "weight", _matrix(self.weight))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weight.T


@dataclass(frozen=True, eq=False)
class Affine:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    kind: ClassVar[str] = "affine"

    def __post_init__(self):
        object.__setattr__(self, "weight", _matrix(self.weight))
        object.__setattr__(self, "bias", _vector(self.bias, self.weight.shape[0]))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weight.T + self.bias


@dataclass(frozen=True, eq=False)
class Activation:
    act: ActivationLike
    dim: int

    kind: ClassVar[str] = "activation"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("activation dimension must be positive")
        _act_out_dim(self.act, self.dim)

    @property
    def in_dim(self) -> int:
        return self.dim

    @property
    def out_dim(self) -> int:
        return _act_out_dim(self.act, self.dim)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return _apply_act(self.act, values)


@dataclass(frozen=True, eq=False)
class ActivationAffine:
    """Activation applied to the output of an affine map."""

    act: ActivationLike
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    kind: ClassVar[str] = "activation_affine"

    def __post_init__(self):
        object.__setattr__(self, "weight", _matrix(self.weight))
        object.__setattr__(self, "bias", _vector(self.bias, self.weight.shape[0]))
        _act_out_dim(self.act, self.weight.shape[0])

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return _act_out_dim(self.act, self.weight.shape[0])

    def apply(self, values: np.ndarray) -> np.ndarray:
        return _apply_act(self.act, values @ self.weight.T + self.bias)


@dataclass(frozen=True, eq=False)
class Transform:
    spec: TransformSpec
    dim: int

    kind: ClassVar[str] = "transform"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("transform dimension must be positive")

    @property
    def in_dim(self) -> int:
        return self.dim

    @property
    def out_dim(self) -> int:
        return self.dim

    def apply(self, values: np.ndarray) -> np.ndarray:
        return transform_eval(self.spec, values)


@dataclass(frozen=True, eq=False)
class TransformAffine:
    """Transform applied to the output of an affine map."""

    spec: TransformSpec
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    kind: ClassVar[str] = "transform_affine"

    def __post_init__(self):
        object.__setattr__(self, "weight", _matrix(self.weight))
        object.__setattr__(self, "bias", _vector(self.bias, self.weight.shape[0]))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return transform_eval(self.spec, values @ self.weight.T + self.bias)


BasisElement = Union[
    Identity, Linear, Affine, Activation, ActivationAffine, Transform, TransformAffine
]


def linear_part(elem: BasisElement) -> Optional[np.ndarray]:
    """Weight matrix of the element's affine part, or None when there is none."""
    return getattr(elem, "weight", None)


def activation_of(elem: BasisElement) -> Optional[ActivationLike]:
    return getattr(elem, "act", None)


def transform_of(elem: BasisElement) -> Optional[TransformSpec]:
    return getattr(elem, "spec", None)


def pre_activation(elem: BasisElement, values: np.ndarray) -> np.ndarray:
    """Input seen by the element's nonlinearity (affine part applied)."""
    w = linear_part(elem)
    if w is None:
        return values
    return values @ w.T + getattr(elem, "bias", 0.0)


def element_bound(elem: BasisElement) -> Optional[float]:
    """Gain bound contributed by the element's nonlinearity, if any.

    CPWL activations bound the linear-factor magnitude; block max pools are
    selections with gain 1; transforms carry their Lipschitz bound.  Purely
    affine elements contribute nothing here.
    """
    act = activation_of(elem)
    if act is not None:
        if isinstance(act, PoolSpec):
            return 1.0
        return activation_bound(act)
    spec = transform_of(elem)
    if spec is not None:
        return spec.lipschitz_bound
    return None


def uniform_bound(elems: Iterable[BasisElement]) -> float:
    """Max nonlinearity gain bound over a collection of elements.

    With no nonlinear element present the bound defaults to 1 (with a
    warning), which is exact for identity/affine-only networks.
    """
    bounds = [b for b in (element_bound(e) for e in elems) if b is not None]
    if not bounds:
        warnings.warn(
            "no activation or transform present; uniform bound defaults to 1",
            stacklevel=2,
        )
        return 1.0
    return float(max(bounds))
