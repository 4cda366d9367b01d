"""Seeded benchmark problem generators.

Seven operator families: 2D/3D geometric graph Laplacians, Watts-Strogatz
small-world graphs, temporal Barabasi-Albert supra-Laplacians, social-hub
graphs, anisotropic diffusion, and advection-diffusion finite-difference
operators, plus a plain Poisson utility. Every generator is a pure function
of its arguments; repeated calls with the same seed are bit-identical.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import SetupError, UsageError
from .sparse import SparseMatrix, diag


@dataclass(frozen=True)
class GeneratedProblem:
    """A generated operator plus the parameters that produced it."""

    A: SparseMatrix
    meta: dict


@dataclass
class ProblemSpec:
    """Family name, size parameters, seed, and normalization flag.

    normalize=None means the family default: True for the PDE families
    (which are assembled with physical 1/h^2 scaling), False for the
    graph Laplacian families (integer-valued already).
    """

    family: str
    seed: int = 0
    normalize: Optional[bool] = None
    params: dict = field(default_factory=dict)


def _laplacian(n_nodes: int, pairs: np.ndarray) -> sp.csr_matrix:
    # pairs: (m, 2) undirected edges, duplicates allowed; weights are 1
    if len(pairs):
        pairs = np.unique(np.sort(np.asarray(pairs, dtype=np.int64), axis=1), axis=0)
        ones = np.ones(len(pairs), dtype=np.float64)
        adj = sp.coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(n_nodes, n_nodes))
        adj = (adj + adj.T).tocsr()
    else:
        adj = sp.csr_matrix((n_nodes, n_nodes))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def _finish(A, meta: dict, normalize: bool) -> GeneratedProblem:
    A = sp.csr_matrix(A)
    A.eliminate_zeros()  # kron and friends leave explicit-zero artifacts
    M = SparseMatrix.from_scipy(A)
    if normalize:
        M = normalize_operator(M)
    meta = dict(meta)
    meta.update(n=M.n_rows, nnz=M.nnz, normalized=bool(normalize))
    return GeneratedProblem(M, meta)


def _corner_points(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=dim)))


def _geometric_edges(dim: int, n_points: int, seed: int):
    """Sample points and return (points, undirected edge pairs)."""
    from scipy.spatial import Delaunay, QhullError, cKDTree

    for attempt in range(4):
        rng = np.random.default_rng([seed, 11, attempt])
        pts = np.vstack([rng.random((n_points, dim)), _corner_points(dim)])
        if dim == 3:
            # symmetric kNN stands in for tetrahedralization
            tree = cKDTree(pts)
            _, idx = tree.query(pts, k=9)
            src = np.repeat(np.arange(len(pts)), 8)
            pairs = np.column_stack([src, idx[:, 1:].ravel()])
            return pts, pairs
        try:
            tri = Delaunay(pts)
        except QhullError:
            continue
        simp = tri.simplices
        pairs = np.vstack([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [0, 2]]])
        return pts, pairs
    raise SetupError("degenerate point set after 3 re-jitter attempts")


def gen_geometric(dim: int, n_points: int, seed: int, normalize: bool = False) -> GeneratedProblem:
    """Unweighted graph Laplacian of a random spatial mesh.

    2D: Delaunay triangulation of uniform points plus the unit-square
    corners. 3D: symmetric 8-nearest-neighbor graph on uniform points
    plus the cube corners.
    """
    if dim not in (2, 3):
        raise UsageError(f"dim must be 2 or 3, got {dim}")
    if n_points < dim + 2:
        raise UsageError(f"need at least {dim + 2} points, got {n_points}")
    _, pairs = _geometric_edges(dim, n_points, seed)
    n = n_points + 2 ** dim
    L = _laplacian(n, pairs)
    fam = "geo2d" if dim == 2 else "geo3d"
    return _finish(L, {"family": fam, "seed": seed, "n_points": n_points}, normalize)


def gen_watts_strogatz(n: int, k: int, p: float, seed: int, normalize: bool = False) -> GeneratedProblem:
    """Small-world graph Laplacian: ring lattice with random rewiring."""
    import networkx as nx

    if k % 2 != 0 or not 0 < k < n:
        raise UsageError(f"k must be even and 0 < k < n, got k={k}, n={n}")
    rng = np.random.default_rng([seed, 13])
    G = nx.watts_strogatz_graph(n, k, p, seed=rng)
    L = _laplacian(n, np.array(G.edges(), dtype=np.int64).reshape(-1, 2))
    return _finish(L, {"family": "ws", "seed": seed, "k": k, "p": p}, normalize)


def gen_temporal_ba(n: int, m: int, T: int, seed: int, normalize: bool = False) -> GeneratedProblem:
    """Supra-Laplacian of a Barabasi-Albert graph repeated over T layers.

    Block diagonal holds the layer Laplacian; unit-weight temporal edges
    link copies of each node in adjacent layers, so the off-diagonal
    blocks are -I and layer diagonals grow by one per temporal link.
    Node (t, i) maps to index t*n + i.
    """
    import networkx as nx

    if m < 1 or m >= n:
        raise UsageError(f"need 1 <= m < n, got m={m}, n={n}")
    if T < 1:
        raise UsageError(f"need T >= 1, got {T}")
    rng = np.random.default_rng([seed, 17])
    G = nx.barabasi_albert_graph(n, m, seed=rng)
    L_layer = _laplacian(n, np.array(G.edges(), dtype=np.int64).reshape(-1, 2))
    if T == 1:
        supra = L_layer
    else:
        ends = np.zeros(T)
        ends[0] = ends[-1] = 1.0
        L_path = sp.diags([2.0 - ends, -np.ones(T - 1), -np.ones(T - 1)], [0, 1, -1])
        supra = sp.kron(sp.identity(T), L_layer) + sp.kron(L_path, sp.identity(n))
    return _finish(supra, {"family": "tba", "seed": seed, "n_layer": n, "m": m, "T": T}, normalize)


def gen_social_hub(n: int, h: int, seed: int, normalize: bool = False) -> GeneratedProblem:
    """2D geometric base graph plus h hub nodes.

    A sub-population of half the base nodes is drawn once; each hub then
    connects to a uniform 65% sample of it (without replacement, so hub
    degree is exactly round(0.65 * round(N/2)) for N base nodes).
    """
    if n < 10:
        raise UsageError(f"need n >= 10, got {n}")
    _, pairs = _geometric_edges(2, n, seed)
    N = n + 4
    rng = np.random.default_rng([seed, 19])
    subpop = rng.choice(N, size=round(N / 2), replace=False)
    hub_deg = round(0.65 * len(subpop))
    hub_pairs = []
    for j in range(h):
        targets = rng.choice(subpop, size=hub_deg, replace=False)
        hub_pairs.append(np.column_stack([np.full(hub_deg, N + j), targets]))
    all_pairs = np.vstack([pairs] + hub_pairs) if hub_pairs else pairs
    L = _laplacian(N + h, all_pairs)
    return _finish(L, {"family": "social", "seed": seed, "n_points": n, "h": h}, normalize)


def gen_poisson2d(grid_n: int, normalize: bool = False) -> GeneratedProblem:
    """Standard 5-point Poisson operator, Dirichlet, grid_n^2 unknowns."""
    if grid_n < 1:
        raise UsageError(f"need grid_n >= 1, got {grid_n}")
    L1 = sp.diags([2.0 * np.ones(grid_n), -np.ones(grid_n - 1), -np.ones(grid_n - 1)], [0, 1, -1])
    I = sp.identity(grid_n)
    A = sp.kron(I, L1) + sp.kron(L1, I)
    return _finish(A, {"family": "poisson2d", "seed": 0, "grid_n": grid_n}, normalize)


def _rotation_params(rng, delta_range: float):
    theta0 = rng.uniform(0.0, 2.0)
    delta = rng.uniform(-delta_range, delta_range)
    return theta0, theta0 + delta, delta


def _sigma_2d(y: np.ndarray, theta0: float, theta1: float, eps: float):
    # sigma = eps*I + (1-eps) r r^T, r the unit primary axis at angle theta(y)
    ang = (theta0 + (theta1 - theta0) * y) * np.pi
    c, s = np.cos(ang), np.sin(ang)
    return eps + (1 - eps) * c * c, (1 - eps) * c * s, eps + (1 - eps) * s * s


def _sigma_3d(x, y, z, eps: float):
    # primary axis r = v/|v| for the prescribed orientation field v
    vx = x * (1 - y) * (2 - z)
    vy = y * (1 - z) * (2 - x)
    vz = z * (1 - x) * (2 - y)
    nrm = np.sqrt(vx * vx + vy * vy + vz * vz)
    r = np.stack([vx, vy, vz]) / nrm
    out = {}
    for a in range(3):
        for b in range(a, 3):
            out[(a, b)] = (1 - eps) * r[a] * r[b] + (eps if a == b else 0.0)
    return out


def _centered_1d(n: int, mirror: bool) -> sp.csr_matrix:
    """Centered difference (u_E - u_W)/2 with mirrored or zero ghosts."""
    main = np.zeros(n)
    if mirror:
        main[0], main[-1] = -0.5, 0.5
    C = sp.diags([main, 0.5 * np.ones(n - 1), -0.5 * np.ones(n - 1)], [0, 1, -1])
    return C.tocsr()


ANISO_EPS = 1e-4


def gen_aniso_diffusion(dim: int, grid_n: int, seed: int, normalize: bool = True,
                        tensor_override=None) -> GeneratedProblem:
    """Rotated anisotropic diffusion -div(sigma grad u).

    2D: cell-centered grid with Neumann conditions; sigma has axis ratio
    1e-4 rotated by theta(y) = (theta0 + (theta1-theta0) y) pi. 3D:
    vertex-centered with Dirichlet conditions; the primary axis follows
    the prescribed orientation field. Aligned terms use face differences,
    mixed derivatives centered cross-stencils, so the operator is exactly
    symmetric (9-point in 2D, 19-point in 3D).

    tensor_override replaces sigma with a constant matrix (testing hook).
    """
    if dim not in (2, 3):
        raise UsageError(f"dim must be 2 or 3, got {dim}")
    if grid_n < 8:
        raise UsageError(f"need grid_n >= 8, got {grid_n}")
    rng = np.random.default_rng([seed, 23])
    gn = grid_n
    meta = {"family": f"aniso{dim}d", "seed": seed, "grid_n": gn, "eps": ANISO_EPS}

    if dim == 2:
        h = 1.0 / gn
        yc = (np.arange(gn) + 0.5) * h
        if tensor_override is not None:
            M = np.asarray(tensor_override, dtype=np.float64)
            af = lambda y: np.full_like(y, M[0, 0])
            cf = lambda y: np.full_like(y, M[1, 1])
            bf = lambda y: np.full_like(y, 0.5 * (M[0, 1] + M[1, 0]))
        else:
            theta0, theta1, delta = _rotation_params(rng, 8.0 / 9.0)
            meta.update(theta0=theta0, theta1=theta1, delta=delta)
            af = lambda y: _sigma_2d(y, theta0, theta1, ANISO_EPS)[0]
            bf = lambda y: _sigma_2d(y, theta0, theta1, ANISO_EPS)[1]
            cf = lambda y: _sigma_2d(y, theta0, theta1, ANISO_EPS)[2]
        # index (i, j) -> j*gn + i; x-faces within a row, y-faces between rows
        D1 = sp.diags([np.ones(gn - 1), -np.ones(gn - 1)], [1, 0], shape=(gn - 1, gn)).tocsr()
        I1 = sp.identity(gn, format="csr")
        Dx, Dy = sp.kron(I1, D1), sp.kron(D1, I1)
        a_xf = np.repeat(af(yc), gn - 1)
        c_yf = np.repeat(cf((np.arange(gn - 1) + 1) * h), gn)
        A = Dx.T @ sp.diags(a_xf) @ Dx + Dy.T @ sp.diags(c_yf) @ Dy
        b_cell = np.repeat(bf(yc), gn)
        if np.any(b_cell != 0.0):
            C1 = _centered_1d(gn, mirror=True)
            Cx, Cy = sp.kron(I1, C1), sp.kron(C1, I1)
            B = sp.diags(b_cell)
            A = A + Cx.T @ B @ Cy + Cy.T @ B @ Cx
        return _finish(A / h ** 2, meta, normalize)

    h = 1.0 / (gn + 1)
    xs = (np.arange(gn) + 1) * h       # node coordinate per axis
    xm = (np.arange(gn + 1) + 0.5) * h  # face midpoints per axis
    if tensor_override is not None:
        M = np.asarray(tensor_override, dtype=np.float64)
        sig = lambda x, y, z: {(a, b): np.full(np.shape(x), 0.5 * (M[a, b] + M[b, a]))
                               for a in range(3) for b in range(a, 3)}
    else:
        sig = lambda x, y, z: _sigma_3d(x, y, z, ANISO_EPS)

    # index (i, j, k) -> (k*gn + j)*gn + i; boundary faces carry the
    # Dirichlet ghost so D includes gn+1 faces per line
    Db = sp.diags([np.ones(gn), -np.ones(gn)], [0, -1], shape=(gn + 1, gn)).tocsr()
    I1 = sp.identity(gn, format="csr")
    Dx = sp.kron(sp.identity(gn * gn, format="csr"), Db)
    Dy = sp.kron(I1, sp.kron(Db, I1))
    Dz = sp.kron(Db, sp.identity(gn * gn, format="csr"))

    Z, Y, Xf = np.meshgrid(xs, xs, xm, indexing="ij")
    a_x = sig(Xf, Y, Z)[(0, 0)].ravel()
    Z, Yf, X = np.meshgrid(xs, xm, xs, indexing="ij")
    a_y = sig(X, Yf, Z)[(1, 1)].ravel()
    Zf, Y, X = np.meshgrid(xm, xs, xs, indexing="ij")
    a_z = sig(X, Y, Zf)[(2, 2)].ravel()
    A = Dx.T @ sp.diags(a_x) @ Dx + Dy.T @ sp.diags(a_y) @ Dy + Dz.T @ sp.diags(a_z) @ Dz

    Zn, Yn, Xn = np.meshgrid(xs, xs, xs, indexing="ij")
    s_node = sig(Xn, Yn, Zn)
    offdiag = [s_node[(0, 1)].ravel(), s_node[(0, 2)].ravel(), s_node[(1, 2)].ravel()]
    if any(np.any(v != 0.0) for v in offdiag):
        C1 = _centered_1d(gn, mirror=False)
        Cx = sp.kron(sp.identity(gn * gn, format="csr"), C1)
        Cy = sp.kron(I1, sp.kron(C1, I1))
        Cz = sp.kron(C1, sp.identity(gn * gn, format="csr"))
        for (Ca, Cb), v in zip([(Cx, Cy), (Cx, Cz), (Cy, Cz)], offdiag):
            B = sp.diags(v)
            A = A + Ca.T @ B @ Cb + Cb.T @ B @ Ca
    return _finish(A / h ** 2, meta, normalize)


ADV_EPS = 1e-4


def gen_adv_diffusion(dim: int, grid_n: int, seed: int, normalize: bool = True,
                      velocity_override=None) -> GeneratedProblem:
    """Advection-diffusion -eps lap(u) + v.grad(u), Dirichlet conditions.

    Centered 5/7-point diffusion with eps = 1e-4 plus first-order
    upwinded advection, so every row is weakly diagonally dominant and
    the operator is non-symmetric.

    velocity_override fixes v to a constant vector (testing hook).
    """
    if dim not in (2, 3):
        raise UsageError(f"dim must be 2 or 3, got {dim}")
    if grid_n < 8:
        raise UsageError(f"need grid_n >= 8, got {grid_n}")
    rng = np.random.default_rng([seed, 29])
    gn = grid_n
    h = 1.0 / (gn + 1)
    xs = (np.arange(gn) + 1) * h
    meta = {"family": f"advdiff{dim}d", "seed": seed, "grid_n": gn, "eps": ADV_EPS}

    L1 = sp.diags([2.0 * np.ones(gn), -np.ones(gn - 1), -np.ones(gn - 1)], [0, 1, -1])
    I1 = sp.identity(gn)
    if dim == 2:
        A = sp.kron(I1, L1) + sp.kron(L1, I1)
        Y, X = np.meshgrid(xs, xs, indexing="ij")
        if velocity_override is not None:
            v0 = np.asarray(velocity_override, dtype=np.float64)
            vel = [np.full(gn * gn, v0[0]), np.full(gn * gn, v0[1])]
        else:
            theta0, theta1, delta = _rotation_params(rng, 1.0 / 6.0)
            meta.update(theta0=theta0, theta1=theta1, delta=delta)
            ang = (theta0 + (theta1 - theta0) * Y) * np.pi
            vel = [np.cos(ang).ravel(), np.sin(ang).ravel()]
        axis_index = [np.rint(X / h).ravel(), np.rint(Y / h).ravel()]
        strides = [1, gn]
    else:
        A = (sp.kron(sp.identity(gn * gn), L1)
             + sp.kron(I1, sp.kron(L1, I1))
             + sp.kron(L1, sp.identity(gn * gn)))
        Z, Y, X = np.meshgrid(xs, xs, xs, indexing="ij")
        if velocity_override is not None:
            v0 = np.asarray(velocity_override, dtype=np.float64)
            vel = [np.full(gn ** 3, v0[d]) for d in range(3)]
        else:
            vel = [(X * (1 - 2 * Y) * (1 - Z)).ravel(),
                   (Y * (1 - 2 * Z) * (1 - X)).ravel(),
                   (Z * (1 - 2 * X) * (1 - Y)).ravel()]
        axis_index = [np.rint(X / h).ravel(), np.rint(Y / h).ravel(), np.rint(Z / h).ravel()]
        strides = [1, gn, gn * gn]

    A = (ADV_EPS / h ** 2) * A
    n = A.shape[0]
    ids = np.arange(n)
    diag_add = np.zeros(n)
    rows, cols, vals = [], [], []
    for d, v in enumerate(vel):
        diag_add += np.abs(v) / h
        # upwind neighbor: west of positive flow, east of negative;
        # missing neighbors are Dirichlet values, so only the diagonal grows
        pos = (v > 0) & (axis_index[d] > 1)
        neg = (v < 0) & (axis_index[d] < gn)
        rows.append(ids[pos])
        cols.append(ids[pos] - strides[d])
        vals.append(-v[pos] / h)
        rows.append(ids[neg])
        cols.append(ids[neg] + strides[d])
        vals.append(v[neg] / h)
    rows.append(ids)
    cols.append(ids)
    vals.append(diag_add)
    U = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return _finish(A + U.tocsr(), meta, normalize)


def extract_subgraph(A: SparseMatrix, k: int, seed: int, repair_diagonal: bool = True,
                     return_nodes: bool = False):
    """Node-induced submatrix of exactly k nodes found by randomized BFS.

    Traversal is direction-agnostic (pattern of A union A^T), neighbors
    are shuffled before enqueueing, and the walk restarts from a random
    unvisited node when a component is exhausted. Nodes appear in
    visitation order. With repair_diagonal the diagonal is recomputed so
    row sums are zero, keeping Laplacian inputs in the Laplacian class;
    without it the boundary-truncated original diagonal is kept.
    """
    from collections import deque

    if A.n_rows != A.n_cols:
        raise UsageError("subgraph extraction needs a square matrix")
    n = A.n_rows
    if not 1 <= k <= n:
        raise UsageError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng([seed, 41])
    S = A._csr64
    pattern = sp.csr_matrix((np.ones(S.nnz), S.indices, S.indptr), shape=S.shape)
    und = (pattern + pattern.T).tocsr()

    visited = np.zeros(n, dtype=bool)
    order = np.empty(k, dtype=np.int64)
    count = 0
    queue = deque()
    while count < k:
        if not queue:
            root = int(rng.choice(np.flatnonzero(~visited)))
            visited[root] = True
            order[count] = root
            count += 1
            queue.append(root)
            continue
        u = queue.popleft()
        nbrs = und.indices[und.indptr[u]:und.indptr[u + 1]].copy()
        rng.shuffle(nbrs)
        for w in nbrs:
            if count == k:
                break
            if not visited[w]:
                visited[w] = True
                order[count] = w
                count += 1
                queue.append(w)

    new_id = np.full(n, -1, dtype=np.int64)
    new_id[order] = np.arange(k)
    coo = S.tocoo()
    keep = (new_id[coo.row] >= 0) & (new_id[coo.col] >= 0)
    r, c, v = new_id[coo.row[keep]], new_id[coo.col[keep]], coo.data[keep]
    if repair_diagonal:
        off = r != c
        r, c, v = r[off], c[off], v[off]
        d = np.zeros(k)
        np.subtract.at(d, r, v)
        r = np.concatenate([r, np.arange(k)])
        c = np.concatenate([c, np.arange(k)])
        v = np.concatenate([v, d])
    out = SparseMatrix.from_coo(k, k, r, c, v)
    return (out, order) if return_nodes else out


def normalize_operator(A: SparseMatrix) -> SparseMatrix:
    """Scale A by 1/max|A_ii| so the largest diagonal magnitude is 1."""
    scale = np.max(np.abs(diag(A).astype(np.float64)))
    if scale == 0.0:
        raise UsageError("cannot normalize: all diagonal entries are zero")
    return A.with_values((A.values.astype(np.float64) / scale).astype(np.float32))


FAMILY_DEFAULTS = {
    "poisson2d": {"n": 32},
    "geo2d": {"n": 1000},
    "geo3d": {"n": 1000},
    "ws": {"n": 4000, "k": 6, "p": 0.01},
    "tba": {"n": 80, "m": 2, "T": 50},
    "social": {"n": 4000, "h": 5},
    "aniso2d": {"n": 64},
    "aniso3d": {"n": 16},
    "advdiff2d": {"n": 64},
    "advdiff3d": {"n": 16},
}


def generate(spec: ProblemSpec) -> GeneratedProblem:
    """Dispatch a ProblemSpec to its family generator."""
    fam = spec.family
    if fam not in FAMILY_DEFAULTS:
        raise UsageError(f"unknown family {fam!r}; choose from {sorted(FAMILY_DEFAULTS)}")
    p = dict(FAMILY_DEFAULTS[fam])
    unknown = set(spec.params) - set(p)
    if unknown:
        raise UsageError(f"unknown parameters for {fam}: {sorted(unknown)}")
    p.update(spec.params)
    norm = spec.normalize
    seed = spec.seed
    if fam == "poisson2d":
        return gen_poisson2d(p["n"], normalize=bool(norm))
    if fam == "geo2d":
        return gen_geometric(2, p["n"], seed, normalize=bool(norm))
    if fam == "geo3d":
        return gen_geometric(3, p["n"], seed, normalize=bool(norm))
    if fam == "ws":
        return gen_watts_strogatz(p["n"], p["k"], p["p"], seed, normalize=bool(norm))
    if fam == "tba":
        return gen_temporal_ba(p["n"], p["m"], p["T"], seed, normalize=bool(norm))
    if fam == "social":
        return gen_social_hub(p["n"], p["h"], seed, normalize=bool(norm))
    norm = True if norm is None else bool(norm)
    dim = 3 if fam.endswith("3d") else 2
    if fam.startswith("aniso"):
        return gen_aniso_diffusion(dim, p["n"], seed, normalize=norm)
    return gen_adv_diffusion(dim, p["n"], seed, normalize=norm)
