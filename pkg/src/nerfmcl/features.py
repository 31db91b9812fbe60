"""Pixel selection for sparse rendering.

Corner candidates come from FAST-9 ranked by Harris response; stable
candidates are the member pixels of maximally stable extremal regions.
Six strategies draw the pixels that get rendered each iteration:

    rand       fresh uniform sample every iteration
    randfix    one uniform sample, reused
    orb        best-scoring corners, reused
    orbrand    fresh sample from the corner pool every iteration
    mser       best-scoring stable-region pixels, reused
    mserrand   fresh sample from the stable-region pool every iteration
"""
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

STRATEGIES = ("rand", "randfix", "orb", "orbrand", "mser", "mserrand")
MODES = ("pixel", "patch")

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (drow, dcol).
FAST_RING = (
    (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
    (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
)
FAST_ARC = 9


class FeatureError(ValueError):
    pass


@dataclass
class KeypointPool:
    coords: np.ndarray  # (N, 2) int rows/cols, unique
    scores: np.ndarray  # (N,)
    detector: str  # "corner" or "stable-region"

    def __len__(self):
        return len(self.coords)


@dataclass
class PixelSet:
    coords: np.ndarray  # (M, 2) int
    strategy: str
    mode: str
    budget: int
    n_filled: int = 0  # pixels drawn at random to cover a pool deficit

    def __len__(self):
        return len(self.coords)


@dataclass(frozen=True)
class FeatureConfig:
    fast_threshold: int = 20
    max_keypoints: int = None  # None -> 4 x budget
    mser_delta: int = 5
    mser_min_area: int = 30
    mser_max_area: int = None  # None -> 1% of the image
    mser_max_variation: float = 0.25

    def resolved_max_area(self, shape):
        if self.mser_max_area is not None:
            return int(self.mser_max_area)
        return int(0.01 * shape[0] * shape[1])


def to_grayscale(image):
    """8-bit luma (0.299 R + 0.587 G + 0.114 B) as an int array."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        luma = image
    else:
        luma = image[..., :3] @ np.array([0.299, 0.587, 0.114])
    return np.clip(np.rint(luma * 255.0), 0, 255).astype(np.int32)


def _check_gray(gray):
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise FeatureError("expected a single-channel image")
    if gray.shape[0] < 7 or gray.shape[1] < 7:
        raise FeatureError("image must be at least 7x7")
    return gray.astype(np.int32)


# -- corners ------------------------------------------------------------------


def fast_mask(gray, threshold):
    """Boolean map of FAST-9 corners before non-maximum suppression.

    A pixel qualifies when 9 contiguous ring pixels are all brighter than
    centre + threshold or all darker than centre - threshold. The 3-pixel
    border never qualifies.
    """
    g = _check_gray(gray)
    h, w = g.shape
    c = g[3:h - 3, 3:w - 3]
    ring = np.stack([g[3 + dr:h - 3 + dr, 3 + dc:w - 3 + dc] for dr, dc in FAST_RING])
    out = np.zeros((h, w), dtype=bool)
    for flags in (ring > c + threshold, ring < c - threshold):
        doubled = np.concatenate([flags, flags[:FAST_ARC - 1]])
        run = np.zeros_like(c, dtype=bool)
        for start in range(16):
            run |= np.all(doubled[start:start + FAST_ARC], axis=0)
        out[3:h - 3, 3:w - 3] |= run
    return out


def harris_response(gray, window=7, k=0.04):
    g = np.asarray(gray, dtype=float)
    ix = ndimage.sobel(g, axis=1)
    iy = ndimage.sobel(g, axis=0)
    area = window * window
    sxx = ndimage.uniform_filter(ix * ix, window) * area
    syy = ndimage.uniform_filter(iy * iy, window) * area
    sxy = ndimage.uniform_filter(ix * iy, window) * area
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(gray, threshold=20, max_keypoints=None):
    """FAST-9 detections scored by Harris response, 3x3 NMS, top-k by score."""
    g = _check_gray(gray)
    mask = fast_mask(g, threshold)
    if not mask.any():
        return KeypointPool(np.zeros((0, 2), dtype=int), np.zeros(0), "corner")
    score = np.where(mask, harris_response(g), -np.inf)
    local_max = ndimage.maximum_filter(score, size=3, mode="constant", cval=-np.inf)
    keep = mask & (score >= local_max)
    rows, cols = np.nonzero(keep)
    scores = score[rows, cols]
    order = np.argsort(-scores, kind="stable")
    if max_keypoints is not None:
        order = order[:max_keypoints]
    return KeypointPool(np.stack([rows[order], cols[order]], axis=1), scores[order], "corner")


# -- stable regions -----------------------------------------------------------


@dataclass
class StableRegion:
    pixels: np.ndarray  # flat indices into the image
    variation: float
    level: int
    polarity: str  # "dark" regions of {I <= g}, "bright" regions of {I >= 255 - g}


class _ComponentTree:
    """Tree of connected components of {I <= g} over g = 0..255, 4-connected.

    Each node is a distinct pixel set; it exists from its birth level up to
    one below its parent's birth level (the root lives to 255).
    """

    def __init__(self, img):
        self.img = img
        h, w = img.shape
        flat = img.ravel()
        n = flat.size
        order = np.argsort(flat, kind="stable")
        levels = flat[order]
        parent = [-1] * n
        size = [0] * n
        node_of_root = [-1] * n
        self.level, self.area, self.parent, self.children, self.own = [], [], [], [], []

        def find(p):
            root = p
            while parent[root] != root:
                root = parent[root]
            while parent[p] != root:
                parent[p], p = root, parent[p]
            return root

        bounds = np.flatnonzero(np.diff(levels)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [n]])
        order = order.tolist()
        for s, e in zip(starts, ends):
            g = int(levels[s])
            batch = order[s:e]
            pending = {}  # root -> (child nodes, pixels new at this level)
            for p in batch:
                parent[p] = p
                size[p] = 1
                pending[p] = ([], [p])
            for p in batch:
                r, c = divmod(p, w)
                for q, ok in ((p - w, r > 0), (p + w, r < h - 1), (p - 1, c > 0), (p + 1, c < w - 1)):
                    if not ok or parent[q] < 0:
                        continue
                    rp, rq = find(p), find(q)
                    if rp == rq:
                        continue
                    if size[rp] < size[rq]:
                        rp, rq = rq, rp
                    parent[rq] = rp
                    size[rp] += size[rq]
                    a = pending.pop(rp) if rp in pending else ([node_of_root[rp]], [])
                    b = pending.pop(rq) if rq in pending else ([node_of_root[rq]], [])
                    pending[rp] = (a[0] + b[0], a[1] + b[1])
            for root, (kids, pix) in pending.items():
                node = len(self.level)
                self.level.append(g)
                self.area.append(size[root])
                self.parent.append(-1)
                self.children.append(kids)
                self.own.append(pix)
                for kid in kids:
                    self.parent[kid] = node
                node_of_root[root] = node

    def end(self, node):
        p = self.parent[node]
        return 255 if p < 0 else self.level[p] - 1

    def pixels(self, node):
        out, stack = [], [node]
        while stack:
            m = stack.pop()
            out.extend(self.own[m])
            stack.extend(self.children[m])
        return np.array(sorted(out), dtype=np.int64)

    def at_or_above(self, node, j):
        """The component alive at level j >= birth that contains ``node``."""
        while self.parent[node] >= 0 and self.level[self.parent[node]] <= j:
            node = self.parent[node]
        return node

    def alive_below(self, node, j):
        """Components alive at level j < birth(node) contained in ``node``."""
        found, stack = [], list(self.children[node])
        while stack:
            m = stack.pop()
            if self.level[m] <= j:
                found.append(m)
            else:
                stack.extend(self.children[m])
        return found


class _Stability:
    def __init__(self, tree, delta):
        self.t = tree
        self.delta = delta
        self._memo = {}

    def variation(self, node, i):
        key = (node, i)
        if key not in self._memo:
            t, d = self.t, self.delta
            area = t.area[node]
            up = t.area[t.at_or_above(node, min(i + d, 255))]
            j = i - d
            if j < 0:
                down = 0
            elif t.level[node] <= j:
                down = area
            else:
                down = max((t.area[m] for m in t.alive_below(node, j)), default=0)
            self._memo[key] = (up - down) / area
        return self._memo[key]

    def next_variation(self, node, i):
        if i + 1 > 255:
            return np.inf
        return self.variation(self.t.at_or_above(node, i + 1), i + 1)

    def prev_variation(self, node, i):
        if i - 1 < 0:
            return np.inf
        t = self.t
        if t.level[node] <= i - 1:
            return self.variation(node, i - 1)
        kids = t.children[node]
        if not kids:
            return np.inf
        biggest = max(t.area[m] for m in kids)
        return min(self.variation(m, i - 1) for m in kids if t.area[m] == biggest)


def _mser_one_polarity(img, delta, min_area, max_area, max_variation, polarity):
    tree = _ComponentTree(img)
    stab = _Stability(tree, delta)
    regions = []
    for node in range(len(tree.level)):
        if not min_area <= tree.area[node] <= max_area:
            continue
        best = None
        for i in range(tree.level[node], tree.end(node) + 1):
            v = stab.variation(node, i)
            if v > max_variation:
                continue
            if v <= stab.prev_variation(node, i) and v <= stab.next_variation(node, i):
                if best is None or v < best[0]:
                    best = (v, i)
        if best is not None:
            regions.append(StableRegion(tree.pixels(node), best[0], best[1], polarity))
    return regions


def stable_regions(gray, delta=5, min_area=30, max_area=None, max_variation=0.25):
    """Maximally stable extremal regions of both polarities.

    Variation of a region Q at level i is (|Q(i+delta)| - |Q(i-delta)|) / |Q(i)|
    where Q(i+delta) is the enclosing component (level clamped to 255) and
    Q(i-delta) is the largest component inside Q at that level (area 0 when
    none exists). A region is kept when its variation is at most
    ``max_variation`` and no larger than at the neighbouring levels i - 1
    (largest contained component, ties resolved to the smaller variation)
    and i + 1 (enclosing component).
    """
    g = _check_gray(gray)
    if max_area is None:
        max_area = int(0.01 * g.size)
    if not 0 < min_area < max_area <= g.size:
        raise FeatureError(f"need 0 < min_area < max_area <= {g.size}, got {min_area}, {max_area}")
    out = _mser_one_polarity(g, delta, min_area, max_area, max_variation, "dark")
    out += _mser_one_polarity(255 - g, delta, min_area, max_area, max_variation, "bright")
    return out


def detect_stable_regions(gray, delta=5, min_area=30, max_area=None, max_variation=0.25):
    """Pool of pixels lying inside stable regions, scored by -variation.

    A pixel inside several nested regions takes the best (largest) score.
    """
    g = _check_gray(gray)
    regions = stable_regions(g, delta, min_area, max_area, max_variation)
    best = np.full(g.size, -np.inf)
    for reg in regions:
        best[reg.pixels] = np.maximum(best[reg.pixels], -reg.variation)
    flat = np.flatnonzero(np.isfinite(best))
    coords = np.stack(np.unravel_index(flat, g.shape), axis=1) if len(flat) else np.zeros((0, 2), dtype=int)
    return KeypointPool(coords.astype(int), best[flat], "stable-region")


# -- selection ----------------------------------------------------------------

_TAGS = {name: i + 1 for i, name in enumerate(STRATEGIES)}
_FILL_TAG = 101
_ORDER_TAG = 102
_pool_cache = {}


def _image_key(gray):
    return hashlib.sha1(np.ascontiguousarray(gray, dtype=np.int32).tobytes()).hexdigest() + str(gray.shape)


def feature_pool(gray, detector, budget, config=FeatureConfig()):
    """Detector output for ``gray``, cached per image and parameter set."""
    gray = _check_gray(gray)
    if detector == "corner":
        max_kp = config.max_keypoints if config.max_keypoints is not None else 4 * budget
        params = ("corner", config.fast_threshold, max_kp)
    elif detector == "stable-region":
        params = ("stable-region", config.mser_delta, config.mser_min_area,
                  config.resolved_max_area(gray.shape), config.mser_max_variation)
    else:
        raise FeatureError(f"unknown detector {detector!r}")
    key = (_image_key(gray),) + params
    if key not in _pool_cache:
        if detector == "corner":
            pool = detect_corners(gray, params[1], params[2])
        else:
            pool = detect_stable_regions(gray, *params[1:])
        _pool_cache[key] = pool
    return _pool_cache[key]


def _ranked(pool, seed):
    """Pool indices by descending score; equal scores in seeded random order."""
    rng = np.random.default_rng([seed, _ORDER_TAG])
    tiebreak = rng.permutation(len(pool))
    return np.lexsort((tiebreak, -pool.scores))


def _candidates(shape, mode):
    h, w = shape
    m = 1 if mode == "patch" else 0
    rows, cols = np.meshgrid(np.arange(m, h - m), np.arange(m, w - m), indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def _fill(chosen, n, shape, mode, rng):
    """Top up ``chosen`` to n coords with distinct random pixels not already used."""
    deficit = n - len(chosen)
    if deficit <= 0:
        return chosen, 0
    cand = _candidates(shape, mode)
    used = {tuple(c) for c in chosen}
    free = np.array([c for c in cand if tuple(c) not in used]).reshape(-1, 2)
    extra = free[rng.choice(len(free), size=min(deficit, len(free)), replace=False)]
    return np.concatenate([chosen.reshape(-1, 2), extra]).astype(int), len(extra)


def _expand_patches(centers):
    offsets = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)])
    return (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)


def select_pixels(strategy, image, budget, mode="pixel", iteration=0, seed=0, config=FeatureConfig()):
    """Pixels to render for one iteration.

    ``image`` may be RGB in [0, 1] or an 8-bit grayscale array. In patch mode
    floor(budget / 9) centres are chosen (kept one pixel inside the border)
    and each expands to its 3x3 neighbourhood.
    """
    if strategy not in STRATEGIES:
        raise FeatureError(f"unknown strategy {strategy!r}")
    if mode not in MODES:
        raise FeatureError(f"unknown mode {mode!r}")
    gray = to_grayscale(image) if np.asarray(image).ndim == 3 else np.asarray(image, dtype=np.int32)
    h, w = gray.shape
    if budget <= 0:
        raise FeatureError("budget must be positive")
    if budget > h * w:
        raise FeatureError(f"budget {budget} exceeds the {h * w} image pixels")
    n = budget // 9 if mode == "patch" else budget
    if n == 0:
        raise FeatureError("patch mode needs a budget of at least 9")
    tag = _TAGS[strategy]
    filled = 0
    if strategy in ("rand", "randfix"):
        cand = _candidates(gray.shape, mode)
        rng = np.random.default_rng([seed, iteration, tag] if strategy == "rand" else [seed, tag])
        chosen = cand[rng.choice(len(cand), size=min(n, len(cand)), replace=False)]
    else:
        detector = "corner" if strategy.startswith("orb") else "stable-region"
        pool = feature_pool(gray, detector, budget, config)
        coords = pool.coords.astype(int)
        if mode == "patch":
            coords = np.clip(coords, 1, [h - 2, w - 2])
        if strategy in ("orb", "mser"):
            chosen = coords[_ranked(pool, seed)[:n]]
            rng = np.random.default_rng([seed, tag, _FILL_TAG])
        else:
            rng = np.random.default_rng([seed, iteration, tag])
            chosen = coords[rng.choice(len(coords), size=min(n, len(coords)), replace=False)]
        chosen, filled = _fill(chosen, n, gray.shape, mode, rng)
    chosen = np.asarray(chosen, dtype=int).reshape(-1, 2)
    if mode == "patch":
        chosen = _expand_patches(chosen)
    return PixelSet(chosen, strategy, mode, budget, filled)
