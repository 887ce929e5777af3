"""Distance metrics that assist tree growth and rewiring.

Three interchangeable metrics over workspace states:

- euclidean: straight-line distance, no preprocessing.
- diffusion: Euclidean distance between diffusion-map embeddings of the
  states' nearest free lattice nodes. The embedding is built once per static
  map from the spectrum of the normalized Gaussian kernel on the 8-connected
  occupancy lattice, and approximates free-space connectivity; it is cheap to
  evaluate and can be cached to a binary sidecar.
- geodesic: exact shortest-path distance over the same lattice. Expensive
  (one Dijkstra field per distinct source cell, LRU-cached) but serves both
  as the strongest assisting metric and as benchmark ground truth.

Dynamic obstacles are deliberately invisible here: metrics encode the static
topology and the planner handles runtime changes through tree invalidation.
"""

from __future__ import annotations

import math
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.sparse.linalg import eigsh

from .env import Environment

State = tuple[float, ...]

SIDECAR_MAGIC = b"DMAP"
SIDECAR_VERSION = 1


def euclidean(a: State, b: State) -> float:
    return math.dist(a, b)


# -- occupancy lattice ---------------------------------------------------------

@dataclass
class GridGraph:
    """Free-space lattice at resolution r_grid: nodes are lattice cells whose
    center is statically free, edges join 8-neighbors, weighted by the
    Euclidean distance between centers."""

    r_grid: float
    rows: int
    cols: int
    cell_node: np.ndarray       # (rows*cols,) node id or -1
    node_cell: np.ndarray       # (n,) flat lattice index
    centers: np.ndarray         # (n, 2) meters
    edges: np.ndarray           # (m, 2) node ids, a < b
    edge_len: np.ndarray        # (m,)
    component: np.ndarray       # (n,)
    n_components: int

    def __len__(self) -> int:
        return len(self.node_cell)

    def adjacency(self):
        n = len(self.node_cell)
        if len(self.edges) == 0:
            return coo_matrix((n, n)).tocsr()
        i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.edge_len, self.edge_len])
        return coo_matrix((w, (i, j)), shape=(n, n)).tocsr()


def build_grid_graph(env: Environment, r_grid: float) -> GridGraph:
    if r_grid <= 0:
        raise ValueError("r_grid must be positive")
    rows = max(1, int(env.height / r_grid + 1e-9))
    cols = max(1, int(env.width / r_grid + 1e-9))
    free = np.zeros(rows * cols, dtype=bool)
    centers = []
    node_cell = []
    cell_node = np.full(rows * cols, -1, dtype=np.int64)
    for r in range(rows):
        y = env.height - (r + 0.5) * r_grid
        for c in range(cols):
            x = (c + 0.5) * r_grid
            if env.static_free(x, y):
                idx = r * cols + c
                free[idx] = True
                cell_node[idx] = len(node_cell)
                node_cell.append(idx)
                centers.append((x, y))
    if not node_cell:
        raise ValueError("no free lattice nodes at this resolution")
    edges = []
    lens = []
    diag = r_grid * math.sqrt(2.0)
    for ni, idx in enumerate(node_cell):
        r, c = divmod(idx, cols)
        # east, south-west, south, south-east: covers each pair once
        for dr, dc, w in ((0, 1, r_grid), (1, -1, diag),
                          (1, 0, r_grid), (1, 1, diag)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                nj = cell_node[nr * cols + nc]
                if nj >= 0:
                    edges.append((ni, nj))
                    lens.append(w)
    edges_arr = (np.asarray(edges, dtype=np.int64) if edges
                 else np.empty((0, 2), dtype=np.int64))
    lens_arr = np.asarray(lens, dtype=np.float64)
    graph = GridGraph(
        r_grid=r_grid, rows=rows, cols=cols,
        cell_node=cell_node,
        node_cell=np.asarray(node_cell, dtype=np.int64),
        centers=np.asarray(centers, dtype=np.float64),
        edges=edges_arr, edge_len=lens_arr,
        component=np.zeros(len(node_cell), dtype=np.int64),
        n_components=1,
    )
    n_comp, labels = connected_components(graph.adjacency(), directed=False)
    graph.component = labels.astype(np.int64)
    graph.n_components = int(n_comp)
    return graph


class _Snapper:
    """Nearest-free-lattice-node lookup shared by the lattice metrics."""

    def __init__(self, graph: GridGraph, env: Environment):
        self.graph = graph
        self.height = env.height

    def snap(self, state: State) -> int:
        """Node id of the free lattice node nearest to the state, -1 when the
        lattice is empty. Exact nearest: ring search with a lower-bound stop."""
        g = self.graph
        rg = g.r_grid
        u = state[0] / rg
        v = (self.height - state[1]) / rg
        c0 = min(max(int(u), 0), g.cols - 1)
        r0 = min(max(int(v), 0), g.rows - 1)
        direct = g.cell_node[r0 * g.cols + c0]
        if direct >= 0:
            return int(direct)
        best, best_d = -1, math.inf
        max_ring = max(g.rows, g.cols)
        for ring in range(1, max_ring + 1):
            if best >= 0 and (ring - 0.5) * rg >= best_d:
                break
            lo_r, hi_r = r0 - ring, r0 + ring
            lo_c, hi_c = c0 - ring, c0 + ring
            for r in range(max(lo_r, 0), min(hi_r, g.rows - 1) + 1):
                on_rim_row = r == lo_r or r == hi_r
                cs = range(max(lo_c, 0), min(hi_c, g.cols - 1) + 1) \
                    if on_rim_row else (c for c in (lo_c, hi_c)
                                        if 0 <= c < g.cols)
                for c in cs:
                    ni = g.cell_node[r * g.cols + c]
                    if ni >= 0:
                        d = math.dist(state[:2], tuple(g.centers[ni]))
                        if d < best_d:
                            best, best_d = int(ni), d
        return best


# -- diffusion map ---------------------------------------------------------------

class DiffusionMap:
    """Spectral embedding of the free-space lattice.

    Per connected component: Gaussian kernel w = exp(-len^2 / (2 sigma^2))
    on lattice edges with sigma = r_grid, symmetric normalization
    D^-1/2 W D^-1/2, top eigenpairs, trivial unit eigenvalue dropped. The
    embedding of node i is (|lambda_j|^t_diff * psi_j(i))_j with
    psi = D^-1/2 u, so plain Euclidean distance between embeddings is the
    diffusion distance at scale t_diff.

    The default t_diff=None picks t = 1 / (2 mu_2) per component, where
    mu_2 = -ln lambda_2 is the spectral gap. Lattice eigenvalues crowd
    toward 1 as maps grow, so any fixed t stops damping on large maps;
    scaling by the gap keeps the mode mix size-independent. The damping
    matters: high-frequency modes contribute meter-scale ripples to the
    embedding, and downstream consumers that chase descending distance
    to a target stall on ripples they cannot see past.
    """

    kind = "diffusion"

    def __init__(self, graph: GridGraph, env_height: float, k: int,
                 t_diff: float | None, comp_eigvals: list[np.ndarray],
                 coords: list[tuple[float, ...]]):
        self.graph = graph
        self.k = k
        self.t_diff = t_diff
        self.comp_eigvals = comp_eigvals
        self._coords = coords                 # per node, dims vary by component
        self._snapper = _Snapper(graph, _HeightOnly(env_height))
        self.env_height = env_height

    # construction ------------------------------------------------------------

    @classmethod
    def build(cls, env: Environment, r_grid: float | None = None, k: int = 8,
              t_diff: float | None = None) -> "DiffusionMap":
        if r_grid is None:
            r_grid = 2.0 * env.cell_size
        if k < 1:
            raise ValueError("k must be at least 1")
        graph = build_grid_graph(env, r_grid)
        sigma = r_grid
        n = len(graph)
        weights = np.exp(-(graph.edge_len**2) / (2.0 * sigma * sigma))
        comp_eigvals: list[np.ndarray] = []
        comp_coords: dict[int, np.ndarray] = {}
        comp_nodes: dict[int, np.ndarray] = {}
        for comp in range(graph.n_components):
            nodes = np.flatnonzero(graph.component == comp)
            comp_nodes[comp] = nodes
            vals, vecs = cls._component_spectrum(graph, weights, nodes, k)
            comp_eigvals.append(vals)
            t = t_diff if t_diff is not None else cls._gap_time(vals)
            comp_coords[comp] = vecs * (np.abs(vals) ** t)[None, :]
        coords: list[tuple[float, ...]] = [()] * n
        for comp, nodes in comp_nodes.items():
            block = comp_coords[comp]
            for local, ni in enumerate(nodes):
                coords[ni] = tuple(block[local])
        return cls(graph, env.height, k, t_diff, comp_eigvals, coords)

    @staticmethod
    def _gap_time(vals: np.ndarray) -> float:
        """Diffusion time matched to the component's spectral gap."""
        if len(vals) == 0:
            return 1.0
        lam2 = min(float(np.abs(vals[0])), 1.0 - 1e-15)
        return 0.5 / -math.log(lam2)

    @staticmethod
    def _component_spectrum(graph: GridGraph, weights: np.ndarray,
                            nodes: np.ndarray, k: int):
        """Non-trivial (eigenvalues, psi columns) for one component, largest
        eigenvalue first. Keeps at most k coordinates but never cuts through
        a (near-)degenerate eigenvalue block, which would make the truncated
        distance basis-dependent."""
        n = len(nodes)
        if n == 1:
            return np.empty(0), np.zeros((1, 0))
        mask = np.isin(graph.edges[:, 0], nodes)
        e = graph.edges[mask]
        w = weights[mask]
        i = np.searchsorted(nodes, e[:, 0])   # nodes is sorted
        j = np.searchsorted(nodes, e[:, 1])
        W = coo_matrix((np.concatenate([w, w]),
                        (np.concatenate([i, j]), np.concatenate([j, i]))),
                       shape=(n, n)).tocsr()
        deg = np.asarray(W.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        pad = 8
        want = min(k + 1 + pad, n)
        if n <= max(2 * want, 64):
            S = (W.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]))
            vals, vecs = np.linalg.eigh(S.toarray())
            vals, vecs = vals[::-1], vecs[:, ::-1]
            complete = True
        else:
            S = (W.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])).tocsr()
            v0 = np.full(n, 1.0 / math.sqrt(n))
            vals, vecs = eigsh(S, k=want, which="LA", v0=v0)
            order = np.argsort(vals)[::-1]
            vals, vecs = vals[order], vecs[:, order]
            complete = False
        # vals[0] is the trivial unit eigenvalue; coordinates start at 1.
        cut = min(k + 1, len(vals))
        rtol = 1e-8
        while cut < len(vals) and abs(vals[cut] - vals[cut - 1]) <= rtol * max(
                abs(vals[cut - 1]), 1e-30):
            cut += 1
        if cut == len(vals) and not complete and cut > 1 and abs(
                vals[-1] - vals[-2]) <= rtol * max(abs(vals[-2]), 1e-30):
            # The block may extend past what was computed: drop it entirely.
            lo = cut - 1
            while lo > 1 and abs(vals[lo] - vals[lo - 1]) <= rtol * max(
                    abs(vals[lo - 1]), 1e-30):
                lo -= 1
            cut = lo
        lam = vals[1:cut].copy()
        psi = vecs[:, 1:cut] * inv_sqrt[:, None]
        # Deterministic sign: largest-magnitude entry of each column positive.
        for col in range(psi.shape[1]):
            m = np.argmax(np.abs(psi[:, col]))
            if psi[m, col] < 0:
                psi[:, col] = -psi[:, col]
        return lam, psi

    # queries ---------------------------------------------------------------------

    def snap(self, state: State) -> int:
        return self._snapper.snap(state)

    def component_of(self, node: int) -> int:
        return int(self.graph.component[node])

    def coords_of_node(self, node: int) -> tuple[float, ...]:
        return self._coords[node]

    def embed(self, state: State) -> tuple[int, tuple[float, ...]]:
        """(component id, embedding coordinates) of the state's snap node."""
        node = self.snap(state)
        return int(self.graph.component[node]), self._coords[node]

    def distance(self, a: State, b: State) -> float:
        ca, pa = self.embed(a)
        cb, pb = self.embed(b)
        if ca != cb:
            return math.inf
        return math.dist(pa, pb)

    # sidecar ------------------------------------------------------------------------

    def save(self, path) -> None:
        g = self.graph
        with open(path, "wb") as f:
            f.write(SIDECAR_MAGIC)
            f.write(struct.pack("<I", SIDECAR_VERSION))
            t_hdr = math.nan if self.t_diff is None else self.t_diff
            f.write(struct.pack("<dId", g.r_grid, self.k, t_hdr))
            f.write(struct.pack("<d", self.env_height))
            f.write(struct.pack("<III", g.rows, g.cols, len(g)))
            f.write(g.node_cell.astype("<i8").tobytes())
            f.write(g.component.astype("<i8").tobytes())
            f.write(struct.pack("<I", g.n_components))
            for comp in range(g.n_components):
                nodes = np.flatnonzero(g.component == comp)
                vals = self.comp_eigvals[comp]
                kc = len(vals)
                f.write(struct.pack("<II", kc, len(nodes)))
                f.write(vals.astype("<f8").tobytes())
                block = np.asarray([self._coords[ni] for ni in nodes],
                                   dtype="<f8").reshape(len(nodes), kc)
                f.write(block.tobytes())

    @classmethod
    def load(cls, path, env: Environment) -> "DiffusionMap":
        with open(path, "rb") as f:
            raw = f.read()
        off = 0

        def take(fmt):
            nonlocal off
            vals = struct.unpack_from(fmt, raw, off)
            off += struct.calcsize(fmt)
            return vals

        if raw[:4] != SIDECAR_MAGIC:
            raise ValueError("not a diffusion-map sidecar")
        off = 4
        (version,) = take("<I")
        if version != SIDECAR_VERSION:
            raise ValueError(f"unsupported sidecar version {version}")
        r_grid, k, t_diff = take("<dId")
        if math.isnan(t_diff):
            t_diff = None          # gap-matched default, see build()
        (height,) = take("<d")
        rows, cols, n = take("<III")
        graph = build_grid_graph(env, r_grid)
        node_cell = np.frombuffer(raw, "<i8", n, off).copy()
        off += 8 * n
        component = np.frombuffer(raw, "<i8", n, off).copy()
        off += 8 * n
        if (rows, cols) != (graph.rows, graph.cols) or len(graph) != n \
                or not np.array_equal(node_cell, graph.node_cell):
            raise ValueError("sidecar does not match this map")
        graph.component = component
        (n_comp,) = take("<I")
        graph.n_components = n_comp
        comp_eigvals = []
        coords: list[tuple[float, ...]] = [()] * n
        for comp in range(n_comp):
            kc, nc = take("<II")
            vals = np.frombuffer(raw, "<f8", kc, off).copy()
            off += 8 * kc
            block = np.frombuffer(raw, "<f8", kc * nc, off).reshape(nc, kc)
            off += 8 * kc * nc
            comp_eigvals.append(vals)
            nodes = np.flatnonzero(component == comp)
            if len(nodes) != nc:
                raise ValueError("sidecar component size mismatch")
            for local, ni in enumerate(nodes):
                coords[ni] = tuple(block[local])
        return cls(graph, height, k, t_diff, comp_eigvals, coords)


class _HeightOnly:
    """Adapter so the snapper needs only the world height."""

    def __init__(self, height: float):
        self.height = height


# -- geodesic ---------------------------------------------------------------------

class GeodesicOracle:
    """Lattice shortest-path distance with a per-source LRU field cache.

    distance(a, b) is the 8-connected grid distance between the free nodes
    nearest to a and b (infinite across components). Thread-safe.
    """

    kind = "geodesic"

    def __init__(self, env: Environment, r_grid: float | None = None,
                 cache_size: int = 256):
        if r_grid is None:
            r_grid = env.cell_size
        self.graph = build_grid_graph(env, r_grid)
        self._adj = self.graph.adjacency()
        self._snapper = _Snapper(self.graph, env)
        self._fields: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def snap(self, state: State) -> int:
        return self._snapper.snap(state)

    def field_from(self, source_node: int) -> np.ndarray:
        with self._lock:
            field = self._fields.get(source_node)
            if field is not None:
                self._fields.move_to_end(source_node)
                return field
        field = dijkstra(self._adj, directed=False, indices=source_node)
        with self._lock:
            self._fields[source_node] = field
            if len(self._fields) > self._cache_size:
                self._fields.popitem(last=False)
        return field

    def distance(self, a: State, b: State) -> float:
        ia, ib = self.snap(a), self.snap(b)
        if ia < 0 or ib < 0:
            return math.inf
        return float(self.field_from(ia)[ib])

    def distances_to_many(self, b: State, states) -> list[float]:
        """d(state, b) for each state, with one shared field from b."""
        ib = self.snap(b)
        if ib < 0:
            return [math.inf] * len(states)
        field = self.field_from(ib)
        return [float(field[self.snap(s)]) for s in states]


# -- assisting metric facade --------------------------------------------------------


class EuclideanMetric:
    kind = "euclidean"

    @staticmethod
    def distance(a: State, b: State) -> float:
        return math.dist(a, b)


METRIC_KINDS = ("euclidean", "diffusion", "geodesic")


def make_assisting_metric(kind: str, env: Environment,
                          r_grid: float | None = None, k: int = 8,
                          t_diff: float | None = None, sidecar=None):
    """Build the assisting metric for a static map.

    kind 'diffusion' accepts a sidecar path: loaded when it matches the map,
    built and saved otherwise.
    """
    if kind == "euclidean":
        return EuclideanMetric()
    if kind == "diffusion":
        if sidecar is not None:
            try:
                return DiffusionMap.load(sidecar, env)
            except (OSError, ValueError):
                pass
        dm = DiffusionMap.build(env, r_grid=r_grid, k=k, t_diff=t_diff)
        if sidecar is not None:
            dm.save(sidecar)
        return dm
    if kind == "geodesic":
        return GeodesicOracle(env, r_grid=r_grid if r_grid is not None
                              else 2.0 * env.cell_size)
    raise ValueError(f"unknown metric kind {kind!r}; expected {METRIC_KINDS}")
