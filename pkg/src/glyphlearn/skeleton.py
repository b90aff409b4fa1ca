"""Skeleton-graph extraction from binary ink images.

Morphological thinning (Zhang-Suen) reduces the ink to a one-pixel-wide
skeleton; the skeleton becomes an undirected graph whose nodes are
endpoints (degree 1) and junction clusters (degree >= 3 pixels merged
within a small radius) and whose edges are the pixel paths between them.
Isolated cycles (rings) become self-loop edges anchored at an arbitrary
cycle pixel.

Pixel adjacency is 8-connected with the standard reduction: a diagonal
link is dropped when either shared orthogonal cell is itself inked, which
keeps corners from reading as junctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

Array = np.ndarray

_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def thin(image: Array) -> Array:
    """Zhang-Suen thinning of a {0,1} image to a 1-px skeleton."""
    img = (np.asarray(image) > 0).astype(np.uint8)
    img = np.pad(img, 1)

    def neighbors(a):
        p2 = np.roll(a, 1, axis=0)
        p3 = np.roll(np.roll(a, 1, axis=0), -1, axis=1)
        p4 = np.roll(a, -1, axis=1)
        p5 = np.roll(np.roll(a, -1, axis=0), -1, axis=1)
        p6 = np.roll(a, -1, axis=0)
        p7 = np.roll(np.roll(a, -1, axis=0), 1, axis=1)
        p8 = np.roll(a, 1, axis=1)
        p9 = np.roll(np.roll(a, 1, axis=0), 1, axis=1)
        return p2, p3, p4, p5, p6, p7, p8, p9

    changed = True
    while changed:
        changed = False
        for phase in (0, 1):
            p2, p3, p4, p5, p6, p7, p8, p9 = neighbors(img)
            ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            transitions = sum(
                ((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8) for i in range(8)
            )
            count = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            cond = (img == 1) & (count >= 2) & (count <= 6) & (transitions == 1)
            if phase == 0:
                cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                img[cond] = 0
                changed = True
    return img[1:-1, 1:-1]


@dataclass
class SkeletonNode:
    index: int
    kind: str  # "endpoint" | "junction" | "cycle"
    pixels: list[tuple[int, int]]  # (row, col) members of the cluster
    centroid: Array = field(init=False)  # (x, y)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        self.centroid = np.array([arr[:, 1].mean(), arr[:, 0].mean()])


@dataclass
class SkeletonEdge:
    index: int
    nodes: tuple[int, int]  # node indices; equal for self-loops
    path: Array  # (n, 2) in (x, y), endpoints included, ordered


@dataclass
class SkeletonGraph:
    nodes: list[SkeletonNode]
    edges: list[SkeletonEdge]
    n_pixels: int

    @property
    def endpoints(self) -> list[SkeletonNode]:
        return [n for n in self.nodes if n.kind == "endpoint"]

    @property
    def junctions(self) -> list[SkeletonNode]:
        return [n for n in self.nodes if n.kind == "junction"]

    @property
    def n_cycles(self) -> int:
        """Independent cycles: E - V + C over the node/edge multigraph."""
        if not self.edges:
            return 0
        parent = list(range(len(self.nodes)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for e in self.edges:
            a, b = find(e.nodes[0]), find(e.nodes[1])
            if a != b:
                parent[a] = b
        comps = len({find(n.index) for n in self.nodes})
        return len(self.edges) - len(self.nodes) + comps

    def incident(self, node_index: int) -> list[SkeletonEdge]:
        out = []
        for e in self.edges:
            if e.nodes[0] == node_index or e.nodes[1] == node_index:
                out.append(e)
        return out


def _neighbor_map(coords: set[tuple[int, int]]) -> dict:
    """Reduced 8-adjacency (diagonals dropped next to orthogonal ink)."""
    nbrs: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for r, c in coords:
        lst = []
        for dr, dc in _OFFSETS:
            q = (r + dr, c + dc)
            if q not in coords:
                continue
            if dr != 0 and dc != 0:
                if (r, c + dc) in coords or (r + dr, c) in coords:
                    continue
            lst.append(q)
        nbrs[(r, c)] = lst
    return nbrs


def extract_skeleton(image: Array, merge_radius: int = 2) -> SkeletonGraph:
    """Thin an ink image and organize the skeleton into nodes and edges."""
    img = np.asarray(image)
    if img.sum() == 0:
        raise DataError("empty image: no ink pixels")
    skel = thin(img)
    if skel.sum() == 0:
        # a 1-2 px blob can thin to nothing; keep the densest original pixel
        ys, xs = np.nonzero(img)
        skel = np.zeros_like(skel)
        skel[ys[0], xs[0]] = 1
    coords = {(int(r), int(c)) for r, c in np.argwhere(skel > 0)}
    nbrs = _neighbor_map(coords)
    degree = {p: len(nbrs[p]) for p in coords}

    # -- nodes -----------------------------------------------------------
    node_of_pixel: dict[tuple[int, int], int] = {}
    nodes: list[SkeletonNode] = []

    junction_px = sorted(p for p in coords if degree[p] >= 3)
    assigned: set[tuple[int, int]] = set()
    for p in junction_px:
        if p in assigned:
            continue
        cluster = [p]
        assigned.add(p)
        queue = [p]
        while queue:
            q = queue.pop()
            for other in junction_px:
                if other in assigned:
                    continue
                if max(abs(q[0] - other[0]), abs(q[1] - other[1])) <= merge_radius:
                    assigned.add(other)
                    cluster.append(other)
                    queue.append(other)
        node = SkeletonNode(len(nodes), "junction", sorted(cluster))
        nodes.append(node)
        for q in cluster:
            node_of_pixel[q] = node.index

    for p in sorted(coords):
        if degree[p] == 1 and p not in node_of_pixel:
            node = SkeletonNode(len(nodes), "endpoint", [p])
            nodes.append(node)
            node_of_pixel[p] = node.index
    if not nodes and coords:
        # lone pixel or pure cycle component(s); anchors are added below
        pass

    # isolated single pixels (degree 0)
    for p in sorted(coords):
        if degree[p] == 0 and p not in node_of_pixel:
            node = SkeletonNode(len(nodes), "endpoint", [p])
            nodes.append(node)
            node_of_pixel[p] = node.index

    # -- edges -----------------------------------------------------------
    edges: list[SkeletonEdge] = []
    used_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()

    def walk_edge(start_px, first_px):
        """Follow degree-2 pixels from a node pixel until the next node."""
        path = [start_px, first_px]
        used_steps.add((start_px, first_px))
        used_steps.add((first_px, start_px))
        prev, cur = start_px, first_px
        while cur not in node_of_pixel:
            nxt = None
            for q in nbrs[cur]:
                if q != prev and (cur, q) not in used_steps:
                    nxt = q
                    break
            if nxt is None:
                break  # dead end inside a cluster-adjacent artifact
            used_steps.add((cur, nxt))
            used_steps.add((nxt, cur))
            path.append(nxt)
            prev, cur = cur, nxt
        return path

    for node in list(nodes):
        for root in node.pixels:
            for q in nbrs[root]:
                if node_of_pixel.get(q) == node.index:
                    continue  # internal cluster adjacency
                if (root, q) in used_steps:
                    continue
                path = walk_edge(root, q)
                end = path[-1]
                if end not in node_of_pixel:
                    continue  # artifact stub; pixels will be cycle-swept below
                edges.append(
                    SkeletonEdge(
                        len(edges),
                        (node.index, node_of_pixel[end]),
                        np.array([(c, r) for r, c in path], dtype=np.float64),
                    )
                )

    # -- isolated cycles ---------------------------------------------------
    on_edges = {(-1, -1)}
    for e in edges:
        for x, y in e.path:
            on_edges.add((int(y), int(x)))
    leftovers = sorted(p for p in coords if p not in node_of_pixel and p not in on_edges)
    visited_cycle: set[tuple[int, int]] = set()
    for p in leftovers:
        if p in visited_cycle or degree[p] != 2:
            continue
        # trace the closed loop starting at its smallest pixel
        anchor = SkeletonNode(len(nodes), "cycle", [p])
        nodes.append(anchor)
        node_of_pixel[p] = anchor.index
        path = [p]
        visited_cycle.add(p)
        prev, cur = p, nbrs[p][0]
        while cur != p:
            path.append(cur)
            visited_cycle.add(cur)
            options = [q for q in nbrs[cur] if q != prev]
            if not options:
                break
            prev, cur = cur, options[0]
        path.append(p)
        edges.append(
            SkeletonEdge(
                len(edges),
                (anchor.index, anchor.index),
                np.array([(c, r) for r, c in path], dtype=np.float64),
            )
        )

    return SkeletonGraph(nodes, edges, n_pixels=len(coords))
