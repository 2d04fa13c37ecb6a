"""Shared test helpers: independent oracles and random generators."""
from __future__ import annotations

import struct

import numpy as np

from unrectify import (
    Activation,
    ActivationAffine,
    Affine,
    CpwlSpec,
    Identity,
    Linear,
    concatenate,
    duplicate,
    identity_dag,
    relu_spec,
    series,
)


def cpwl_reference(spec: CpwlSpec, x: float) -> float:
    """Branch-based evaluation: find the active pieces, accumulate their
    affine contributions.  Independent of the vectorized ramp-sum path."""
    total = 0.0
    for coeff, knot in spec.right_pieces:
        if x > knot:
            total += coeff * (x - knot)
    for coeff, knot in spec.left_pieces:
        if x < knot:
            total += coeff * (knot - x)
    return total


def random_cpwl_spec(rng: np.random.Generator, max_side: int = 3) -> CpwlSpec:
    def side(count):
        return tuple(
            (float(rng.uniform(-2, 2)), float(rng.uniform(-3, 3))) for _ in range(count)
        )

    n_right = int(rng.integers(0, max_side + 1))
    n_left = int(rng.integers(0 if n_right else 1, max_side + 1))
    return CpwlSpec(right_pieces=side(n_right), left_pieces=side(n_left))


def random_element(rng: np.random.Generator, in_dim: int):
    kind = int(rng.integers(0, 5))
    out = int(rng.integers(1, 5))
    if kind == 0:
        return Identity(in_dim)
    if kind == 1:
        return Linear(rng.standard_normal((out, in_dim)))
    if kind == 2:
        return Affine(rng.standard_normal((out, in_dim)), rng.standard_normal(out))
    if kind == 3:
        return Activation(relu_spec(), in_dim)
    return ActivationAffine(
        relu_spec(), rng.standard_normal((out, in_dim)), rng.standard_normal(out)
    )


def random_valid_dag(rng: np.random.Generator, input_dim: int | None = None, n_ops: int = 8):
    """Random graph built only through the closed combinators."""
    if input_dim is None:
        input_dim = int(rng.integers(1, 5))
    pool = [identity_dag(input_dim)]
    for _ in range(n_ops):
        op = int(rng.integers(0, 4))
        if op == 3 and len(pool) < 4:
            pool.append(identity_dag(input_dim))
        elif op == 2:
            i = int(rng.integers(0, len(pool)))
            pool[i] = duplicate(pool[i], int(rng.integers(1, 4)))
        elif op == 1 and len(pool) > 1:
            k = int(rng.integers(2, len(pool) + 1))
            picked = [pool.pop(int(rng.integers(0, len(pool)))) for _ in range(k)]
            pool.append(concatenate(picked))
        else:
            i = int(rng.integers(0, len(pool)))
            g = pool[i]
            out_dim = g.node_dims[g.output_node]
            pool[i] = series(g, random_element(rng, out_dim))
    return concatenate(pool) if len(pool) > 1 else pool[0]


def longest_path_levels(dag) -> list[int]:
    """Longest-path levels by plain relaxation; independent of the library's
    topological-order computation."""
    n = len(dag.nodes)
    lvl = [0] * n
    changed = True
    while changed:
        changed = False
        for arc in dag.arcs:
            if lvl[arc.src] + 1 > lvl[arc.dst]:
                lvl[arc.dst] = lvl[arc.src] + 1
                changed = True
    return lvl


def write_idx_pair(dirpath, images: np.ndarray, labels) -> tuple[str, str]:
    """Write a minimal IDX image/label file pair; images are (n, 28, 28) uint8."""
    images = np.asarray(images, dtype=np.uint8)
    n = len(images)
    img_path = str(dirpath / "train-images-idx3-ubyte")
    lbl_path = str(dirpath / "train-labels-idx1-ubyte")
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        fh.write(images.tobytes())
    with open(lbl_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(bytes(int(v) for v in labels))
    return img_path, lbl_path
