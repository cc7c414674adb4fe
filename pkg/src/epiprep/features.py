"""Feature data model, the canonical feature-file format, descriptor
similarity, and exhaustive nearest-neighbor search."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "EPF1"
MODE_NATURAL = "natural"
MODE_FIXED = "fixed"

# norm this far from 1 is silently renormalized on load; beyond 1% it is an error
_NORM_EXACT_TOL = 1e-9
_NORM_REPAIR_RANGE = (0.99, 1.01)


class ParseError(Exception):
    """Malformed feature file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class DimensionError(ValueError):
    """Descriptor lengths do not agree."""


@dataclass(eq=False)
class Feature:
    """One detected keypoint: position (px), scale (px), orientation (rad),
    unit-norm descriptor."""

    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray

    def __post_init__(self):
        self.descriptor = np.asarray(self.descriptor, dtype=float)
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if abs(np.linalg.norm(self.descriptor) - 1.0) > 1e-6:
            raise ValueError("descriptor must have unit norm")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(eq=False)
class FeatureSet:
    """Ordered, immutable-by-convention collection of features for one image.

    `mode` records whether descriptors were extracted at each feature's own
    orientation ("natural") or with all orientations forced to `fixed_angle`
    ("fixed"); clustering only accepts fixed sets.
    """

    image_id: str
    mode: str
    features: list[Feature]
    fixed_angle: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in (MODE_NATURAL, MODE_FIXED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_FIXED and self.fixed_angle is None:
            raise ValueError("fixed mode requires an angle")
        if self.mode == MODE_NATURAL:
            self.fixed_angle = None

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Feature:
        return self.features[i]

    def _array(self, key, build):
        if key not in self._cache:
            arr = build()
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]

    @property
    def descriptors(self) -> np.ndarray:
        return self._array("desc", lambda: np.array([f.descriptor for f in self.features]))

    @property
    def positions(self) -> np.ndarray:
        return self._array("pos", lambda: np.array([[f.x, f.y] for f in self.features]))

    @property
    def scales(self) -> np.ndarray:
        return self._array("scale", lambda: np.array([f.scale for f in self.features]))

    @property
    def orientations(self) -> np.ndarray:
        return self._array("orient", lambda: np.array([f.orientation for f in self.features]))


@dataclass(eq=False)
class PutativeMatch:
    """Candidate correspondence (feature i1 in image 1, i2 in image 2).

    Score fields stay None until the producing stage fills them; the source
    flags record which generator(s) emitted the pair.
    """

    i1: int
    i2: int
    m_k: float | None = None
    m_k1: float | None = None
    m_k2: float | None = None
    d_r: float | None = None
    t_k: float | None = None
    sfm: int | None = None
    prob: float | None = None
    in_XL: bool = False
    in_XB: bool = False
    in_X: bool = False

    def __post_init__(self):
        if not (self.in_XL or self.in_XB or self.in_X):
            raise ValueError("match must carry at least one source flag")

    @property
    def key(self) -> tuple[int, int]:
        return (self.i1, self.i2)

    @property
    def sources(self) -> str:
        parts = [n for n, ok in (("X", self.in_X), ("XL", self.in_XL), ("XB", self.in_XB)) if ok]
        return "|".join(parts)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Similarity of two unit descriptors: their dot product, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"descriptor lengths differ: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def nearest_two(q: np.ndarray, fset: FeatureSet) -> tuple[int, float, float]:
    """Best match of descriptor `q` in `fset`: (index, best, second-best similarity).

    Ties go to the lower index. A singleton set has no distinct second
    feature; its second-best similarity is reported as -1 (worst case).
    """
    if len(fset) == 0:
        raise ValueError("feature set is empty")
    sims = fset.descriptors @ np.asarray(q, dtype=float)
    best = int(np.argmax(sims))
    m_k = float(np.clip(sims[best], -1.0, 1.0))
    if len(fset) == 1:
        return best, m_k, -1.0
    rest = np.delete(sims, best)
    m_k2 = float(np.clip(rest.max(), -1.0, 1.0))
    return best, m_k, m_k2


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_features(fset: FeatureSet, path: str | Path) -> None:
    """Write the canonical text format (lossless for float64 values)."""
    dim = len(fset.features[0].descriptor) if fset.features else 0
    header = f"{MAGIC} {len(fset.features)} {dim} {fset.mode}"
    if fset.mode == MODE_FIXED:
        header += f" {_fmt(fset.fixed_angle)}"
    lines = [header]
    for f in fset.features:
        vals = [f.x, f.y, f.scale, f.orientation, *f.descriptor]
        lines.append(" ".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_features(path: str | Path, image_id: str | None = None) -> FeatureSet:
    """Parse the canonical format back into a FeatureSet.

    Descriptors whose norm drifted within 1% of unit length are renormalized;
    anything further off is a ParseError, as are malformed headers, wrong
    record lengths, and non-finite values.
    """
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].split()
    if len(head) < 4 or head[0] != MAGIC:
        raise ParseError(f"bad header (expected '{MAGIC} <count> <dim> <mode> [angle]')", line=1)
    try:
        count, dim = int(head[1]), int(head[2])
    except ValueError:
        raise ParseError("count and dim must be integers", line=1) from None
    mode = head[3]
    angle = None
    if mode == MODE_FIXED:
        if len(head) != 5:
            raise ParseError("fixed mode requires an angle", line=1)
        angle = float(head[4])
        if not np.isfinite(angle):
            raise ParseError("fixed angle must be finite", line=1)
    elif mode != MODE_NATURAL or len(head) != 4:
        raise ParseError(f"bad mode {mode!r}", line=1)

    records = [ln for ln in lines[1:] if ln.strip()]
    if len(records) != count:
        raise ParseError(f"expected {count} records, found {len(records)}", line=len(lines))
    feats = []
    for k, ln in enumerate(records):
        lineno = k + 2
        parts = ln.split()
        if len(parts) != 4 + dim:
            raise ParseError(f"expected {4 + dim} fields, found {len(parts)}", line=lineno)
        try:
            vals = np.array([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric field", line=lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", line=lineno)
        desc = vals[4:]
        norm = np.linalg.norm(desc)
        if abs(norm - 1.0) > _NORM_EXACT_TOL:
            if not (_NORM_REPAIR_RANGE[0] <= norm <= _NORM_REPAIR_RANGE[1]):
                raise ParseError(f"descriptor norm {norm:.4g} out of tolerance", line=lineno)
            desc = desc / norm
        if not vals[2] > 0.0:
            raise ParseError(f"scale must be positive, got {vals[2]:.4g}", line=lineno)
        feats.append(Feature(x=vals[0], y=vals[1], scale=vals[2], orientation=vals[3],
                             descriptor=desc))
    return FeatureSet(image_id=image_id or path.stem, mode=mode, features=feats,
                      fixed_angle=angle)
