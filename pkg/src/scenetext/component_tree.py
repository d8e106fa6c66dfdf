"""Extremal-region inclusion tree, region variation and MSER selection.

The tree is built on threshold sets ``{p : I(p) <= l}`` of a normalized
grayscale image, so dark regions are leaves and the whole image is the root.
Light-on-dark text is handled by inverting the image before construction.

Nodes are stored as parallel numpy arrays indexed by node id. Ids follow the
flooding order, so every child id is smaller than its parent's id and the root
is always the last node.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

DARK_ON_LIGHT = "dark-on-light"
LIGHT_ON_DARK = "light-on-dark"
BOTH = "both"
POLARITIES = (DARK_ON_LIGHT, LIGHT_ON_DARK)


@dataclass(frozen=True)
class RegularizationParams:
    """Aspect-ratio penalty applied to region variations.

    ``penalty_sign=+1`` raises the variation of badly shaped regions so they
    lose parent/child comparisons; ``-1`` subtracts the penalty instead.
    """

    theta1: float = 0.03
    theta2: float = 0.08
    a_min: float = 0.7
    a_max: float = 1.2
    penalty_sign: float = 1.0

    def __post_init__(self):
        if self.theta1 < 0 or self.theta2 < 0:
            raise ValueError("penalty slopes must be nonnegative")
        if not 0 < self.a_min <= self.a_max:
            raise ValueError("need 0 < a_min <= a_max")
        if self.penalty_sign not in (1.0, -1.0):
            raise ValueError("penalty_sign must be +1 or -1")


@dataclass(frozen=True)
class MserParams:
    delta: int = 1
    max_variation: float = 0.5
    min_diversity: float = 0.1
    polarity: str = BOTH
    min_area: int = 1

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if not self.max_variation > 0:
            raise ValueError("max_variation must be positive")
        if not 0 <= self.min_diversity < 1:
            raise ValueError("min_diversity must lie in [0, 1)")
        if self.polarity not in POLARITIES + (BOTH,):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")

    @property
    def polarities(self) -> tuple[str, ...]:
        return POLARITIES if self.polarity == BOTH else (self.polarity,)


@dataclass(frozen=True)
class ERNode:
    """Read-only view of one tree node."""

    id: int
    level: int
    area: int
    bbox: tuple[int, int, int, int]
    variation: float
    children: tuple[int, ...]
    color_sum: tuple[float, float, float]
    is_mser: bool


def as_gray_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have nonzero width and height")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("grayscale values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def to_grayscale(color_image) -> np.ndarray:
    """Luma ``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up."""
    arr = np.asarray(color_image)
    if arr.ndim == 2:
        return as_gray_image(arr)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have nonzero width and height")
    rgb = arr[..., :3].astype(np.int64)
    luma = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return np.clip(luma, 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True)
def _find(zpar, p):
    root = p
    while zpar[root] != root:
        root = zpar[root]
    while zpar[p] != root:
        nxt = zpar[p]
        zpar[p] = root
        p = nxt
    return root


@njit(cache=True, nogil=True)
def _flood(flat, width, order):
    """Union-find flooding in increasing intensity; returns canonical parents."""
    n = flat.size
    parent = np.empty(n, np.int64)
    zpar = np.full(n, -1, np.int64)
    for i in range(n):
        p = order[i]
        parent[p] = p
        zpar[p] = p
        x = p % width
        for k in range(4):
            if k == 0:
                if x == 0:
                    continue
                q = p - 1
            elif k == 1:
                if x == width - 1:
                    continue
                q = p + 1
            elif k == 2:
                q = p - width
                if q < 0:
                    continue
            else:
                q = p + width
                if q >= n:
                    continue
            if zpar[q] == -1:
                continue
            r = _find(zpar, q)
            if r != p:
                parent[r] = p
                zpar[r] = p
    for i in range(n - 1, -1, -1):
        p = order[i]
        q = parent[p]
        if flat[parent[q]] == flat[q]:
            parent[p] = parent[q]
    return parent


@njit(cache=True, nogil=True)
def _nodes(flat, width, order, pix_parent, color):
    n = flat.size
    node_id = np.full(n, -1, np.int64)
    n_nodes = 0
    for i in range(n):
        p = order[i]
        q = pix_parent[p]
        if q == p or flat[q] != flat[p]:
            node_id[p] = n_nodes
            n_nodes += 1

    seed = np.empty(n_nodes, np.int64)
    parent = np.full(n_nodes, -1, np.int64)
    level = np.empty(n_nodes, np.int64)
    for i in range(n):
        p = order[i]
        k = node_id[p]
        if k >= 0:
            seed[k] = p
            level[k] = flat[p]
            q = pix_parent[p]
            if q != p:
                parent[k] = node_id[q]

    node_of = np.empty(n, np.int64)
    area = np.zeros(n_nodes, np.int64)
    bbox = np.empty((n_nodes, 4), np.int64)
    bbox[:, 0] = width
    bbox[:, 1] = n
    bbox[:, 2] = -1
    bbox[:, 3] = -1
    csum = np.zeros((n_nodes, 3), np.float64)
    for p in range(n):
        k = node_id[p]
        if k < 0:
            k = node_id[pix_parent[p]]
        node_of[p] = k
        x = p % width
        y = p // width
        area[k] += 1
        if x < bbox[k, 0]:
            bbox[k, 0] = x
        if y < bbox[k, 1]:
            bbox[k, 1] = y
        if x > bbox[k, 2]:
            bbox[k, 2] = x
        if y > bbox[k, 3]:
            bbox[k, 3] = y
        for c in range(3):
            csum[k, c] += color[p, c]

    # ids grow along the flooding order, so children are folded in before
    # their parent is itself folded upward
    for k in range(n_nodes):
        pk = parent[k]
        if pk < 0:
            continue
        area[pk] += area[k]
        if bbox[k, 0] < bbox[pk, 0]:
            bbox[pk, 0] = bbox[k, 0]
        if bbox[k, 1] < bbox[pk, 1]:
            bbox[pk, 1] = bbox[k, 1]
        if bbox[k, 2] > bbox[pk, 2]:
            bbox[pk, 2] = bbox[k, 2]
        if bbox[k, 3] > bbox[pk, 3]:
            bbox[pk, 3] = bbox[k, 3]
        for c in range(3):
            csum[pk, c] += csum[k, c]
    return node_of, seed, parent, level, area, bbox, csum


@njit(cache=True, nogil=True)
def _variation(parent, level, area, delta):
    n = parent.size
    var = np.empty(n, np.float64)
    for i in range(n):
        top = level[i] + delta
        a = i
        while parent[a] >= 0 and level[parent[a]] <= top:
            a = parent[a]
        var[i] = (area[a] - area[i]) / area[i]
    return var


@njit(cache=True, nogil=True)
def _nearest_marked_ancestor(parent, marked):
    n = parent.size
    out = np.full(n, -1, np.int64)
    for i in range(n - 1, -1, -1):
        p = parent[i]
        if p < 0:
            continue
        out[i] = p if marked[p] else out[p]
    return out


# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ERTree:
    """Component tree of one polarity of an image.

    ``image`` is the normalized grayscale actually flooded (already inverted
    for light-on-dark). ``bbox`` rows are inclusive ``(x0, y0, x1, y1)``.
    """

    image: np.ndarray
    polarity: str
    node_of: np.ndarray
    seed: np.ndarray
    parent: np.ndarray
    level: np.ndarray
    area: np.ndarray
    bbox: np.ndarray
    color_sum: np.ndarray
    variation: np.ndarray | None = None
    is_mser: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return int(self.parent.size)

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    @cached_property
    def _child_index(self):
        order = np.argsort(self.parent, kind="stable")
        counts = np.bincount(self.parent[self.parent >= 0], minlength=self.n_nodes)
        start = np.zeros(self.n_nodes + 1, np.int64)
        np.cumsum(counts, out=start[1:])
        # roots (parent == -1) sort first; skip them
        n_roots = int(np.count_nonzero(self.parent < 0))
        return start, order[n_roots:]

    def children(self, i: int) -> np.ndarray:
        start, idx = self._child_index
        return idx[start[i]:start[i + 1]]

    def xywh(self, i: int) -> tuple[int, int, int, int]:
        x0, y0, x1, y1 = (int(v) for v in self.bbox[i])
        return x0, y0, x1 - x0 + 1, y1 - y0 + 1

    def node(self, i: int) -> ERNode:
        var = float(self.variation[i]) if self.variation is not None else float("nan")
        mser = bool(self.is_mser[i]) if self.is_mser is not None else False
        return ERNode(
            id=int(i),
            level=int(self.level[i]),
            area=int(self.area[i]),
            bbox=self.xywh(i),
            variation=var,
            children=tuple(int(c) for c in self.children(i)),
            color_sum=tuple(float(c) for c in self.color_sum[i]),
            is_mser=mser,
        )

    def mask(self, i: int) -> np.ndarray:
        """Boolean pixel mask of node ``i`` cropped to its bounding box."""
        from scipy import ndimage

        x0, y0, x1, y1 = (int(v) for v in self.bbox[i])
        crop = self.image[y0:y1 + 1, x0:x1 + 1] <= self.level[i]
        labels, _ = ndimage.label(crop)
        sy, sx = divmod(int(self.seed[i]), self.image.shape[1])
        return labels == labels[sy - y0, sx - x0]


def build_er_tree(gray, polarity: str = DARK_ON_LIGHT, color=None) -> ERTree:
    """Build the 4-connected extremal-region tree of ``gray``.

    ``color`` (HxWx3) feeds the per-node color accumulators; when omitted the
    grayscale value is used for all three channels.
    """
    gray = as_gray_image(gray)
    if polarity == LIGHT_ON_DARK:
        gray = 255 - gray
    elif polarity != DARK_ON_LIGHT:
        raise ValueError(f"polarity must be one of {POLARITIES}, got {polarity!r}")
    h, w = gray.shape
    flat = gray.ravel()
    if color is None:
        col = np.repeat(flat.astype(np.float64)[:, None], 3, axis=1)
    else:
        col = np.asarray(color, dtype=np.float64)
        if col.shape[:2] != (h, w):
            raise ValueError("color image does not match grayscale shape")
        col = np.ascontiguousarray(col[..., :3].reshape(-1, 3))
    order = np.argsort(flat, kind="stable").astype(np.int64)
    pix_parent = _flood(flat, w, order)
    node_of, seed, parent, level, area, bbox, csum = _nodes(flat, w, order, pix_parent, col)
    return ERTree(
        image=gray,
        polarity=polarity,
        node_of=node_of.reshape(h, w),
        seed=seed,
        parent=parent,
        level=level,
        area=area,
        bbox=bbox,
        color_sum=csum,
    )


def compute_variation(tree: ERTree, delta: int = 1) -> ERTree:
    """Annotate each region with ``(|R_{l+delta}| - |R_l|) / |R_l|``.

    ``R_{l+delta}`` is the component of the ``l + delta`` threshold set that
    contains ``R_l``: the highest ancestor whose level is still within
    ``l + delta``. Branches that end earlier resolve to the root.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    var = _variation(tree.parent, tree.level, tree.area, int(delta))
    return dataclasses.replace(tree, variation=var)


def regularize(variation: float, aspect: float, params: RegularizationParams = RegularizationParams()) -> float:
    if not aspect > 0:
        raise ValueError(f"aspect ratio must be positive, got {aspect}")
    if aspect > params.a_max:
        return variation + params.penalty_sign * params.theta1 * (aspect - params.a_max)
    if aspect < params.a_min:
        return variation + params.penalty_sign * params.theta2 * (params.a_min - aspect)
    return variation


def regularize_array(variation: np.ndarray, aspect: np.ndarray,
                     params: RegularizationParams = RegularizationParams()) -> np.ndarray:
    variation = np.asarray(variation, dtype=np.float64)
    aspect = np.asarray(aspect, dtype=np.float64)
    if np.any(aspect <= 0):
        raise ValueError("aspect ratios must be positive")
    over = np.where(aspect > params.a_max, params.theta1 * (aspect - params.a_max), 0.0)
    under = np.where(aspect < params.a_min, params.theta2 * (params.a_min - aspect), 0.0)
    return variation + params.penalty_sign * (over + under)


@dataclass(frozen=True, eq=False)
class MserTree:
    """Tree induced on the selected MSERs.

    ``ids`` are ER node ids in increasing order; ``parent`` indexes into
    ``ids`` (nearest selected ancestor) or is -1 for top-level regions.
    """

    er: ERTree
    ids: np.ndarray
    parent: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def variation(self) -> np.ndarray:
        return self.er.variation[self.ids]

    @property
    def aspect(self) -> np.ndarray:
        b = self.er.bbox[self.ids]
        return (b[:, 2] - b[:, 0] + 1) / (b[:, 3] - b[:, 1] + 1)

    def regularized_variation(self, params: RegularizationParams = RegularizationParams()) -> np.ndarray:
        return regularize_array(self.variation, self.aspect, params)

    def roots(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.parent < 0)]

    def children_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(len(self))]
        for i, p in enumerate(self.parent):
            if p >= 0:
                out[p].append(i)
        return out


def mser_candidates(tree: ERTree, max_variation: float) -> np.ndarray:
    """Boolean mask of stable local minima with variation within the bound.

    A node survives when it is strictly more stable than its parent and no
    child is strictly more stable than it. The root (the whole image) always
    has variation 0 because no larger region exists above it, so it is
    neither selectable nor a comparison partner for its children.
    """
    var = tree.variation
    if var is None:
        raise ValueError("compute_variation must run before MSER selection")
    nonroot = tree.parent >= 0
    child_min = np.full(tree.n_nodes, np.inf)
    np.minimum.at(child_min, tree.parent[nonroot], var[nonroot])
    parent_var = np.full(tree.n_nodes, np.inf)
    below_root = nonroot & (tree.parent != tree.root)
    parent_var[below_root] = var[tree.parent[below_root]]
    stable = (var < parent_var) & (var <= child_min) & (var <= max_variation)
    stable[tree.root] = False
    return stable


def select_msers(tree: ERTree, params: MserParams = MserParams()) -> MserTree:
    """Select MSERs and return the tree induced on them.

    Regions smaller than ``min_area`` pixels are never selected (the default
    of 1 disables the filter). Duplicates are resolved pairwise between each stable node and its nearest
    stable ancestor: when their relative area difference is below
    ``min_diversity`` the less stable of the two is dropped (ties keep the
    ancestor).
    """
    stable = mser_candidates(tree, params.max_variation)
    if params.min_area > 1:
        stable &= tree.area >= params.min_area
    keep = stable.copy()
    if params.min_diversity > 0:
        anc = _nearest_marked_ancestor(tree.parent, stable)
        nodes = np.flatnonzero(stable & (anc >= 0))
        a = anc[nodes]
        rel = (tree.area[a] - tree.area[nodes]) / tree.area[a]
        close = rel < params.min_diversity
        var = tree.variation
        child_loses = close & (var[nodes] >= var[a])
        keep[nodes[child_loses]] = False
        keep[a[close & ~child_loses]] = False
    ids = np.flatnonzero(keep)
    anc = _nearest_marked_ancestor(tree.parent, keep)
    local = np.full(tree.n_nodes, -1, np.int64)
    local[ids] = np.arange(ids.size)
    parent = np.where(anc[ids] >= 0, local[np.maximum(anc[ids], 0)], -1)
    er = dataclasses.replace(tree, is_mser=keep)
    return MserTree(er=er, ids=ids, parent=parent.astype(np.int64))


def format_tree(tree: ERTree, nodes=None, max_lines: int | None = None) -> str:
    """Indented outline, one node per line: level, area, bbox, variation.

    ``nodes`` restricts the outline to a subset (e.g. MSER ids); each node is
    then nested under its nearest listed ancestor.
    """
    if nodes is None:
        keep = np.ones(tree.n_nodes, bool)
    else:
        keep = np.zeros(tree.n_nodes, bool)
        keep[np.asarray(nodes, dtype=np.int64)] = True
    anc = _nearest_marked_ancestor(tree.parent, keep)
    kids: dict[int, list[int]] = {}
    tops = []
    for i in np.flatnonzero(keep):
        a = int(anc[i])
        if a < 0:
            tops.append(int(i))
        else:
            kids.setdefault(a, []).append(int(i))
    lines = []
    stack = [(t, 0) for t in reversed(tops)]
    while stack:
        i, depth = stack.pop()
        x, y, w, h = tree.xywh(i)
        var = tree.variation[i] if tree.variation is not None else float("nan")
        lines.append(f"{'  ' * depth}level={tree.level[i]} area={tree.area[i]} "
                     f"bbox={x},{y},{w},{h} var={var:.4f}")
        if max_lines is not None and len(lines) >= max_lines:
            lines.append("...")
            break
        stack.extend((c, depth + 1) for c in reversed(kids.get(i, [])))
    return "\n".join(lines)
