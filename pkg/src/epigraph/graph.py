"""Epipolar correspondence-graph construction.

Nodes carry the stacked 6-D normalized match coordinates; edges come from
a spatial k-NN (four variants) on the first-image points, pruned by the
Sampson distance against an initial essential estimate E0.

Edges are stored directed (dst in the neighborhood of src); a
symmetrization flag, default ON, adds reverse edges at propagation time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .epipolar import estimate_E0
from .errors import (
    EmptyGraphError,
    FormatError,
    InvalidInputError,
    SchemaVersionError,
    ValidationError,
)
from .geom import sampson_distances

VARIANTS = ("hard", "soft", "radius", "mutual")


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class GraphParams:
    """Construction knobs, defaults matching the training configuration."""

    k: int = 6
    tau: float = 1e-4
    variant: str = "hard"
    symmetrize: bool = True
    knn_source: int = 1          # build neighborhoods from image 1 or 2
    radius: float | None = None  # radius variant only; None = auto
    e0_seed: int = 0
    e0_m: int = 16
    e0_iters: int = 32
    full_denominator: bool = False


@dataclass
class EpipolarGraph:
    node_features: np.ndarray             # (N, 6) stacked (x1^T, x2^T)
    edges: list[tuple[int, int, float]]   # directed (src, dst, weight > 0)
    kept_indices: np.ndarray              # node -> original correspondence index
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    def edge_arrays(self):
        if not self.edges:
            return (np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
        src, dst, w = zip(*self.edges)
        return (np.asarray(src, dtype=int), np.asarray(dst, dtype=int),
                np.asarray(w, dtype=float))


# ---------------------------------------------------------------------------
# Edge construction
# ---------------------------------------------------------------------------

def _pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def _knn_lists(D: np.ndarray, k: int):
    """k nearest neighbors per row, self excluded, ties by smaller index."""
    n = len(D)
    out = []
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, D[i, others]))
        out.append(others[order[:k]])
    return out


def build_edges(coords, variant: str = "hard", k: int | None = None,
                radius: float | None = None) -> list[tuple[int, int, float]]:
    """Directed neighborhood edges on point coordinates.

    hard:   i -> j iff j is among the k nearest neighbors of i (weight 1).
    soft:   hard support with Gaussian weights exp(-d^2 / 2 sigma^2),
            sigma = mean k-th-neighbor distance.
    radius: i -> j iff dist(i, j) < radius (weight 1).
    mutual: hard edges kept only when reciprocated.

    Ties in the k-th distance break toward the smaller index.  Fewer than
    two points give an empty edge list; k >= N is clamped to N-1 with a
    warning.
    """
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown edge variant {variant!r}")
    if n < 2:
        return []
    D = _pairwise_distances(coords)

    if variant == "radius":
        if radius is None or radius <= 0:
            raise InvalidInputError("radius variant needs radius > 0")
        src, dst = np.nonzero((D < radius) & ~np.eye(n, dtype=bool))
        return [(int(i), int(j), 1.0) for i, j in zip(src, dst)]

    if k is None or k < 1:
        raise InvalidInputError("k-NN variants need k >= 1")
    if k >= n:
        warnings.warn(f"k={k} >= {n} points; clamped to {n - 1}")
        k = n - 1
    nbrs = _knn_lists(D, k)

    if variant == "hard":
        return [(i, int(j), 1.0) for i in range(n) for j in nbrs[i]]
    if variant == "mutual":
        nbr_sets = [set(map(int, js)) for js in nbrs]
        return [(i, int(j), 1.0) for i in range(n) for j in nbrs[i]
                if i in nbr_sets[int(j)]]
    # soft
    kth = np.array([D[i, nbrs[i][-1]] for i in range(n)])
    sigma = max(float(kth.mean()), 1e-12)
    return [(i, int(j), float(np.exp(-D[i, j] ** 2 / (2 * sigma ** 2))))
            for i in range(n) for j in nbrs[i]]


def median_kth_distance(coords, k: int = 6) -> float:
    """Median k-th-neighbor distance; the default radius for the radius variant."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    if n < 2:
        raise InvalidInputError("need at least two points")
    kk = min(k, n - 1)
    D = _pairwise_distances(coords)
    nbrs = _knn_lists(D, kk)
    return float(np.median([D[i, nbrs[i][-1]] for i in range(n)]))


# ---------------------------------------------------------------------------
# Sampson pruning and the full pipeline
# ---------------------------------------------------------------------------

def sampson_filter(corr, E0, tau: float, full_denominator: bool = False) -> np.ndarray:
    """Indices with sampson_distance(x1_i, x2_i, E0) < tau, order preserved."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    n = len(corr)
    if np.isinf(tau):
        kept = np.arange(n)
    else:
        X1, X2 = corr.normalized_points()
        d = sampson_distances(X1, X2, E0, full_denominator=full_denominator)
        kept = np.nonzero(d < tau)[0]
    if len(kept) == 0:
        raise EmptyGraphError("no correspondence survived the Sampson filter")
    return kept


def build_graph(corr, k: int = 6, tau: float = 1e-4, variant: str = "hard",
                params: GraphParams | None = None,
                E0: np.ndarray | None = None) -> EpipolarGraph:
    """Construct the pruned correspondence graph.

    Pipeline: intrinsics-normalize, k-NN graph over all matches, estimate
    E0 from a confidence-seeded minimal subset (unless one is supplied),
    Sampson-filter at tau, then rebuild edges over the survivors.
    """
    if params is None:
        params = GraphParams(k=k, tau=tau, variant=variant)
    X1, X2 = corr.normalized_points()
    n = len(X1)
    coords_all = X1 if params.knn_source == 1 else X2

    clamped = params.k >= n and n >= 2
    radius = params.radius
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if params.variant == "radius" and radius is None:
            radius = median_kth_distance(coords_all, params.k)
        g1_edges = build_edges(coords_all, params.variant, k=params.k, radius=radius)

    if E0 is None:
        E0 = estimate_E0(corr, tau=params.tau, m=params.e0_m,
                         iters=params.e0_iters, seed=params.e0_seed)
    else:
        E0 = np.asarray(E0, dtype=float)

    kept = sampson_filter(corr, E0, params.tau,
                          full_denominator=params.full_denominator)
    coords = coords_all[kept]

    radius2 = params.radius
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if params.variant == "radius" and radius2 is None:
            radius2 = median_kth_distance(coords, params.k) if len(coords) >= 2 else None
        edges = build_edges(coords, params.variant, k=params.k, radius=radius2)
        clamped = clamped or any("clamped" in str(w.message) for w in caught)

    features = np.hstack([X1[kept], X2[kept]])
    meta = {
        "k": params.k,
        "tau": params.tau,
        "variant": params.variant,
        "symmetrize": params.symmetrize,
        "knn_source": params.knn_source,
        "radius": radius2,
        "k_clamped": clamped,
        "g1_edges": len(g1_edges),
        "e0": E0,
    }
    return EpipolarGraph(features, edges, np.asarray(kept, dtype=int), meta)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

GRAPH_HEADER = "# epigraph-graph v1"
_META_ORDER = ("k", "tau", "variant", "symmetrize", "knn_source", "radius",
               "k_clamped", "g1_edges", "e0")


def export_graph(g: EpipolarGraph, path) -> None:
    lines = [GRAPH_HEADER]
    for key in _META_ORDER:
        val = g.meta.get(key)
        if val is None:
            lines.append(f"meta {key} none")
        elif key == "e0":
            lines.append("meta e0 " + " ".join(_fmt(v) for v in np.ravel(val)))
        elif isinstance(val, bool):
            lines.append(f"meta {key} {int(val)}")
        elif isinstance(val, float):
            lines.append(f"meta {key} {_fmt(val)}")
        else:
            lines.append(f"meta {key} {val}")
    lines.append(f"nodes {g.n_nodes}")
    for row in g.node_features:
        lines.append(" ".join(_fmt(v) for v in row))
    lines.append("kept " + " ".join(str(int(v)) for v in g.kept_indices))
    lines.append(f"edges {len(g.edges)}")
    for s, d, w in g.edges:
        lines.append(f"{int(s)} {int(d)} {_fmt(w)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def import_graph(path) -> EpipolarGraph:
    with open(path) as f:
        raw = [ln.rstrip("\n") for ln in f]
    if not raw or raw[0] != GRAPH_HEADER:
        raise SchemaVersionError("missing or unsupported graph header", line=1)
    meta = {}
    pos = 1
    while pos < len(raw) and raw[pos].startswith("meta "):
        _, key, *vals = raw[pos].split()
        if vals == ["none"]:
            meta[key] = None
        elif key == "e0":
            meta[key] = np.array([float(v) for v in vals]).reshape(3, 3)
        elif key in ("symmetrize", "k_clamped"):
            meta[key] = bool(int(vals[0]))
        elif key in ("k", "knn_source", "g1_edges"):
            meta[key] = int(vals[0])
        elif key in ("tau", "radius"):
            meta[key] = float(vals[0])
        else:
            meta[key] = vals[0]
        pos += 1

    def expect(prefix):
        nonlocal pos
        if pos >= len(raw) or not raw[pos].startswith(prefix):
            raise FormatError(f"expected {prefix!r} block", line=pos + 1)
        line = raw[pos]
        pos += 1
        return line

    n = int(expect("nodes").split()[1])
    feats = np.zeros((n, 6))
    for i in range(n):
        if pos >= len(raw):
            raise FormatError("file ends inside the node block", line=pos + 1)
        vals = raw[pos].split()
        if len(vals) != 6:
            raise FormatError("node rows need 6 values", line=pos + 1)
        feats[i] = [float(v) for v in vals]
        pos += 1
    kept_line = expect("kept").split()[1:]
    kept = np.array([int(v) for v in kept_line], dtype=int)
    if len(kept) != n:
        raise ValidationError("kept-index count does not match node count")
    m = int(expect("edges").split()[1])
    edges = []
    for _ in range(m):
        if pos >= len(raw) or len(raw[pos].split()) != 3:
            raise FormatError("file ends inside the edge block", line=pos + 1)
        s, d, w = raw[pos].split()
        s, d, w = int(s), int(d), float(w)
        if not (0 <= s < n and 0 <= d < n):
            raise ValidationError(f"edge ({s}, {d}) out of range for {n} nodes")
        if s == d:
            raise ValidationError("self-loop in stored edge list")
        if not w > 0:
            raise ValidationError("edge weights must be positive")
        edges.append((s, d, w))
        pos += 1
    return EpipolarGraph(feats, edges, kept, meta)
