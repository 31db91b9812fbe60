"""Radiance fields: (point, view direction) -> (rgb, density).

Two kinds are provided: an MLP with positional encoding whose weights are
loaded from disk or drawn at random, and an analytic field built from
coloured spheres and axis-aligned boxes. Every evaluation goes through
:func:`query_batch`, which charges one forward pass per queried point to a
:class:`ForwardPassLedger`.
"""
import json
import threading
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np


class FieldError(ValueError):
    pass


class ForwardPassLedger:
    """Thread-safe monotone counter of field evaluations."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def add(self, n):
        if n < 0:
            raise ValueError("ledger increments must be non-negative")
        with self._lock:
            self._count += int(n)

    @property
    def count(self):
        return self._count

    def __repr__(self):
        return f"ForwardPassLedger(count={self._count})"


def encode(x, L):
    """Positional encoding: raw coords followed by sin/cos at L octaves.

    Output layout along the last axis is ``[x, sin(pi x), cos(pi x),
    sin(2 pi x), cos(2 pi x), ...]`` where each entry is a 3-vector, so the
    width is ``3 + 6 L``.
    """
    if L < 0:
        raise ValueError("frequency count must be >= 0")
    x = np.asarray(x, dtype=float)
    parts = [x]
    for k in range(L):
        arg = (2.0**k) * np.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def encoded_width(L):
    return 3 + 6 * L


class RadianceField:
    """Base class. Subclasses implement ``_evaluate(points, dirs)``."""

    def _evaluate(self, points, dirs):
        raise NotImplementedError

    def query_batch(self, points, dirs, ledger=None):
        return query_batch(self, points, dirs, ledger)


def query_batch(field, points, dirs, ledger=None, unit_tol=1e-6):
    """Evaluate ``field`` at N points with N unit view directions.

    Returns ``(rgb, sigma)`` with shapes (N, 3) and (N,). The ledger, when
    given, is advanced by N.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    if points.shape != dirs.shape:
        raise FieldError(f"got {len(points)} points but {len(dirs)} directions")
    n = len(points)
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0)
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(dirs))):
        raise FieldError("non-finite query coordinates")
    norms = np.linalg.norm(dirs, axis=1)
    if np.max(np.abs(norms - 1.0)) > unit_tol:
        raise FieldError("view directions must be unit length")
    rgb, sigma = field._evaluate(points, dirs)
    if ledger is not None:
        ledger.add(n)
    return rgb, sigma


# -- analytic scenes ---------------------------------------------------------


@dataclass(frozen=True)
class _Primitive:
    def colors_at(self, p):
        """Colour per point; a 3D checker alternates ``color`` and ``color2``."""
        base = np.broadcast_to(np.asarray(self.color, dtype=float), p.shape)
        if not self.checker:
            return base
        parity = np.sum(np.floor(p / self.checker), axis=-1).astype(np.int64) % 2
        return np.where(parity[:, None] == 1, np.asarray(self.color2, dtype=float), base)


@dataclass(frozen=True)
class Sphere(_Primitive):
    center: tuple
    radius: float
    color: tuple
    density: float
    checker: float = 0.0  # checker cell size in scene units; 0 disables
    color2: tuple = (0.0, 0.0, 0.0)

    def contains(self, p):
        c = np.asarray(self.center, dtype=float)
        return np.sum((p - c) ** 2, axis=-1) <= self.radius**2


@dataclass(frozen=True)
class Box(_Primitive):
    lo: tuple
    hi: tuple
    color: tuple
    density: float
    checker: float = 0.0
    color2: tuple = (0.0, 0.0, 0.0)

    def contains(self, p):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((p >= lo) & (p <= hi), axis=-1)


class AnalyticField(RadianceField):
    """Piecewise-constant field: constant density inside each primitive.

    Colour is constant too unless a primitive carries a checker texture.
    Overlapping primitives add their densities; colour is the
    density-weighted mean. Outside every primitive the density is zero.
    """

    def __init__(self, spheres=(), boxes=(), background=(1.0, 1.0, 1.0)):
        self.spheres = tuple(spheres)
        self.boxes = tuple(boxes)
        self.background = tuple(float(v) for v in background)
        for prim in self.primitives:
            if prim.density < 0:
                raise FieldError("primitive density must be non-negative")
            if not all(0.0 <= c <= 1.0 for c in prim.color + prim.color2):
                raise FieldError("primitive colours must lie in [0, 1]")

    @property
    def primitives(self):
        return self.spheres + self.boxes

    def _evaluate(self, points, dirs):
        sigma = np.zeros(len(points))
        weighted = np.zeros((len(points), 3))
        for prim in self.primitives:
            inside = prim.contains(points)
            if not inside.any():
                continue
            s = np.where(inside, float(prim.density), 0.0)
            sigma += s
            weighted[inside] += s[inside, None] * prim.colors_at(points[inside])
        rgb = np.zeros_like(weighted)
        hit = sigma > 0
        rgb[hit] = weighted[hit] / sigma[hit, None]
        return rgb, sigma

    def to_dict(self):
        return {
            "type": "analytic",
            "background": list(self.background),
            "spheres": [
                _texture({"center": list(s.center), "radius": s.radius, "color": list(s.color),
                          "density": s.density}, s)
                for s in self.spheres
            ],
            "boxes": [
                _texture({"lo": list(b.lo), "hi": list(b.hi), "color": list(b.color), "density": b.density}, b)
                for b in self.boxes
            ],
        }

    @classmethod
    def from_dict(cls, d):
        spheres = [
            Sphere(tuple(s["center"]), float(s["radius"]), tuple(s["color"]), float(s["density"]),
                   float(s.get("checker", 0.0)), tuple(s.get("color2", (0.0, 0.0, 0.0))))
            for s in d.get("spheres", [])
        ]
        boxes = [
            Box(tuple(b["lo"]), tuple(b["hi"]), tuple(b["color"]), float(b["density"]),
                float(b.get("checker", 0.0)), tuple(b.get("color2", (0.0, 0.0, 0.0))))
            for b in d.get("boxes", [])
        ]
        return cls(spheres, boxes, tuple(d.get("background", (1.0, 1.0, 1.0))))


def _texture(d, prim):
    if prim.checker:
        d["checker"] = prim.checker
        d["color2"] = list(prim.color2)
    return d


# -- MLP fields --------------------------------------------------------------


def _rowwise(h, W):
    """h @ W.T evaluated one row at a time.

    A single GEMM over the whole batch may pick kernels by batch size, which
    changes rounding; per-row products make outputs independent of how the
    queries were split into batches.
    """
    return np.matmul(h[:, None, :], W.T)[:, 0]


def _softplus(x):
    return np.logaddexp(0.0, x)


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MlpSpec:
    """Layer widths, encoding frequencies and parameter arrays.

    ``layers[0]`` is the encoded position width and ``layers[-1]`` must be
    4 (r, g, b, sigma logits). With ``l_dir > 0`` the encoded direction is
    appended to the input of the last layer; the sigma row only reads the
    position features, so density stays view independent.
    """

    layers: list
    l_pos: int = 10
    l_dir: int = 0
    weights: list = dc_field(default_factory=list)
    biases: list = dc_field(default_factory=list)

    def expected_shapes(self):
        shapes = []
        n = len(self.layers) - 1
        for i in range(n):
            fan_in = self.layers[i]
            if i == n - 1 and self.l_dir > 0:
                fan_in += encoded_width(self.l_dir)
            shapes.append(((self.layers[i + 1], fan_in), (self.layers[i + 1],)))
        return shapes

    def validate(self):
        if len(self.layers) < 2:
            raise FieldError("need at least an input and an output width")
        if self.l_pos < 0 or self.l_dir < 0:
            raise FieldError("encoding frequency counts must be >= 0")
        if self.layers[0] != encoded_width(self.l_pos):
            raise FieldError(
                f"input width {self.layers[0]} inconsistent with l_pos={self.l_pos} "
                f"(expected {encoded_width(self.l_pos)})"
            )
        if self.layers[-1] != 4:
            raise FieldError(f"output width must be 4, got {self.layers[-1]}")
        shapes = self.expected_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise FieldError(f"expected {len(shapes)} weight/bias pairs")
        for i, ((ws, bs), W, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if W.shape != ws or b.shape != bs:
                raise FieldError(f"layer {i}: got shapes {W.shape}/{b.shape}, expected {ws}/{bs}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise FieldError(f"layer {i}: non-finite parameters")


class MlpField(RadianceField):
    """ReLU MLP; logistic colour head and softplus density head."""

    def __init__(self, spec):
        spec.validate()
        spec.weights = [np.asarray(W, dtype=np.float32) for W in spec.weights]
        spec.biases = [np.asarray(b, dtype=np.float32) for b in spec.biases]
        self.spec = spec
        self._W = [W.astype(float) for W in spec.weights]
        self._b = [b.astype(float) for b in spec.biases]

    def _evaluate(self, points, dirs):
        h = encode(points, self.spec.l_pos)
        for W, b in zip(self._W[:-1], self._b[:-1]):
            h = np.maximum(_rowwise(h, W) + b, 0.0)
        W, b = self._W[-1], self._b[-1]
        width = h.shape[1]
        if self.spec.l_dir > 0:
            hd = np.concatenate([h, encode(dirs, self.spec.l_dir)], axis=1)
        else:
            hd = h
        color_logits = _rowwise(hd, W[:3]) + b[:3]
        sigma_logit = _rowwise(h, W[3:4, :width])[:, 0] + b[3]
        return _logistic(color_logits), _softplus(sigma_logit)


def random_mlp_spec(seed, hidden=(64, 64, 64, 64), l_pos=10, l_dir=0):
    """Weights ~ U(-1, 1) / sqrt(fan_in), drawn from a seeded generator."""
    rng = np.random.default_rng(seed)
    spec = MlpSpec([encoded_width(l_pos), *hidden, 4], l_pos, l_dir)
    for (ws, bs) in spec.expected_shapes():
        scale = 1.0 / np.sqrt(ws[1])
        spec.weights.append((rng.uniform(-1, 1, size=ws) * scale).astype(np.float32))
        spec.biases.append((rng.uniform(-1, 1, size=bs) * scale).astype(np.float32))
    return spec


def random_mlp_field(seed, **kwargs):
    return MlpField(random_mlp_spec(seed, **kwargs))


def save_weights(field, path):
    """Write a JSON header line followed by the float32 little-endian blob."""
    spec = field.spec
    header = {"layers": list(spec.layers), "l_pos": spec.l_pos, "l_dir": spec.l_dir}
    blob = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes()
        for W, b in zip(spec.weights, spec.biases)
        for a in (W, b)
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(blob)


def load_weights(path):
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FieldError(f"{path}: missing JSON header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        layers = [int(w) for w in header["layers"]]
        l_pos = int(header["l_pos"])
        l_dir = int(header.get("l_dir", 0))
    except (ValueError, KeyError, TypeError) as exc:
        raise FieldError(f"{path}: malformed header ({exc})") from None
    spec = MlpSpec(layers, l_pos, l_dir)
    if len(layers) < 2 or layers[0] != encoded_width(l_pos):
        spec.validate()  # raises with the precise reason
    blob = raw[newline + 1:]
    shapes = spec.expected_shapes()
    expected = 4 * sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in shapes)
    if len(blob) != expected:
        raise FieldError(f"{path}: blob has {len(blob)} bytes, header implies {expected}")
    offset = 0
    for ws, bs in shapes:
        for shape, dest in ((ws, spec.weights), (bs, spec.biases)):
            n = int(np.prod(shape))
            dest.append(np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy())
            offset += 4 * n
    return MlpField(spec)
