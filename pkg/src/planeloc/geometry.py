"""Planes, volumes, oblique slicing and plane similarity metrics.

Coordinates are voxel indices shifted so the origin sits at the volume
center. A plane with unit normal ``n`` and offset ``d`` is the point set
``{x : n . x = d}``, so ``d * n`` is the point of the plane closest to the
volume center.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

_NORM_EPS = 1e-12
_SIGN_EPS = 1e-9


class DegenerateCosinesError(ValueError):
    """The direction-cosine vector is (numerically) zero."""


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Plane:
    """A plane in direction-cosine form.

    ``angles`` keeps the raw (zeta, beta, phi) triple the plane was built
    from; ``normal`` is its normalized, sign-canonical cosine vector.
    """

    angles: tuple[float, float, float]
    normal: np.ndarray
    d: float

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return bool(np.array_equal(self.normal, other.normal) and self.d == other.d)

    def __hash__(self):
        return hash((tuple(self.normal.tolist()), self.d))

    @property
    def center_point(self) -> np.ndarray:
        """Point of the plane closest to the volume center (center-relative)."""
        return self.d * self.normal

    def flipped(self) -> tuple[np.ndarray, float]:
        return -self.normal, -self.d

    def to_line(self) -> str:
        z, b, p = angles_from_normal(self.normal)
        return f"{z:.17g} {b:.17g} {p:.17g} {self.d:.17g}"

    @classmethod
    def from_line(cls, line: str) -> "Plane":
        vals = [float(v) for v in line.split()]
        if len(vals) != 4:
            raise ValueError(f"expected 'zeta beta phi d', got {line!r}")
        return plane_from_params(*vals)


def canonicalize(normal, d) -> tuple[np.ndarray, float]:
    """Flip (normal, d) so the first non-negligible normal component is positive."""
    normal = np.asarray(normal, dtype=np.float64)
    for c in normal:
        if abs(c) > _SIGN_EPS:
            if c < 0:
                return -normal, -float(d)
            break
    return normal.copy(), float(d)


def plane_from_params(zeta: float, beta: float, phi: float, d: float) -> Plane:
    """Build a plane from direction angles (degrees) and offset (voxels).

    The cosine vector is normalized and ``d`` is divided by the same factor,
    so the point set ``cos(zeta) x + cos(beta) y + cos(phi) z = d`` is kept.
    """
    cosines = np.cos(np.radians([zeta, beta, phi]))
    scale = float(np.linalg.norm(cosines))
    if scale < _NORM_EPS:
        raise DegenerateCosinesError(f"cosine vector of ({zeta}, {beta}, {phi}) is zero")
    normal, dd = canonicalize(cosines / scale, d / scale)
    return Plane((float(zeta), float(beta), float(phi)), normal, dd)


def plane_from_normal(normal, d: float) -> Plane:
    normal = np.asarray(normal, dtype=np.float64)
    scale = float(np.linalg.norm(normal))
    if scale < _NORM_EPS:
        raise DegenerateCosinesError("zero normal")
    n, dd = canonicalize(normal / scale, d / scale)
    return Plane(tuple(angles_from_normal(n)), n, dd)


def plane_through_point(normal, point) -> Plane:
    """Plane with the given normal through a center-relative point."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    return plane_from_normal(normal, float(normal @ np.asarray(point, dtype=np.float64)))


def angles_from_normal(normal) -> np.ndarray:
    return np.degrees(np.arccos(np.clip(np.asarray(normal, dtype=np.float64), -1.0, 1.0)))


def dihedral_angle(a: Plane, b: Plane) -> float:
    """Unsigned angle between two planes in degrees, in [0, 90]."""
    # atan2 stays accurate near 0, where arccos of the dot product does not
    s = float(np.linalg.norm(np.cross(a.normal, b.normal)))
    c = abs(float(a.normal @ b.normal))
    return float(np.degrees(np.arctan2(s, c)))


def origin_distance_diff(a: Plane, b: Plane) -> float:
    return abs(a.d - b.d)


def half_diagonal(shape) -> float:
    return 0.5 * float(np.linalg.norm(np.asarray(shape, dtype=np.float64)))


@dataclass(frozen=True)
class ParamDistance:
    """Euclidean distance between planes embedded as (normal, d / d_norm).

    Both planes are in canonical sign form, so the distance jumps where a
    normal crosses the canonical-sign boundary (first component ~ 0).
    """

    d_norm: float

    def __call__(self, p: Plane, g: Plane) -> float:
        return param_distance(p, g, self.d_norm)


def param_distance(p: Plane, g: Plane, d_norm: float) -> float:
    diff = np.append(p.normal - g.normal, (p.d - g.d) / d_norm)
    return float(np.linalg.norm(diff))


@dataclass
class Volume:
    voxels: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError("volume must be 3-D")
        if min(self.voxels.shape) < 8:
            raise ValueError(f"volume shape {self.voxels.shape} below minimum 8")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError("volume contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.voxels.shape)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.shape, dtype=np.float64) - 1.0) / 2.0


@dataclass
class PlaneImage:
    pixels: np.ndarray
    plane: Plane
    basis: tuple[np.ndarray, np.ndarray]
    center: np.ndarray = field(repr=False)


def in_plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal (u, v) spanning the plane.

    With ``i`` the dominant axis of the normal (first wins on ties), the
    normal is signed so that component ``i`` is positive and ``e`` is axis
    ``i + 1 (mod 3)``; then ``u = normalize(n x e)``, ``v = n x u``. The frame
    is continuous for every normal within 35 degrees of a coordinate axis and
    does not depend on the normal's sign.
    """
    n = np.asarray(normal, dtype=np.float64)
    i = int(np.argmax(np.abs(n)))
    if n[i] < 0:
        n = -n
    e = np.zeros(3)
    e[(i + 1) % 3] = 1.0
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def plane_grid(plane: Plane, size: int, center) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Voxel-index coordinates (3, size, size) of the sampling grid."""
    u, v = in_plane_basis(plane.normal)
    origin = np.asarray(center, dtype=np.float64) + plane.center_point
    offs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    pts = (origin[:, None, None]
           + u[:, None, None] * offs[None, :, None]
           + v[:, None, None] * offs[None, None, :])
    return pts, (u, v), origin


def slice_volume(vol: Volume, plane: Plane, size: int = 64) -> PlaneImage:
    """Trilinear oblique slice, unit pixel spacing, zero outside the volume."""
    if size < 8:
        raise ValueError("slice size must be >= 8")
    pts, basis, origin = plane_grid(plane, size, vol.center)
    pix = ndimage.map_coordinates(vol.voxels, pts, order=1, mode="constant", cval=0.0, prefilter=False)
    return PlaneImage(pix.astype(np.float32), plane, basis, origin)


def ssim(a, b, win: int = 7, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with a uniform window over the fully-covered region.

    The dynamic range is taken jointly from both images (1 if constant).
    """
    x = np.asarray(a.pixels if isinstance(a, PlaneImage) else a, dtype=np.float64)
    y = np.asarray(b.pixels if isinstance(b, PlaneImage) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"{x.shape} vs {y.shape}")
    rng_ = max(x.max(), y.max()) - min(x.min(), y.min())
    L = rng_ if rng_ > 0 else 1.0
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    n = win * win
    cov_norm = n / (n - 1.0)
    f = lambda img: ndimage.uniform_filter(img, size=win, mode="reflect")
    ux, uy = f(x), f(y)
    vx = cov_norm * (f(x * x) - ux * ux)
    vy = cov_norm * (f(y * y) - uy * uy)
    vxy = cov_norm * (f(x * y) - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    pad = (win - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


# -- file formats ----------------------------------------------------------

def write_volume(path, vol: Volume) -> None:
    """Text header ``<path>.hdr`` plus little-endian float32 raw ``<path>.raw``."""
    path = Path(path)
    nx, ny, nz = vol.shape
    header = (f"shape {nx} {ny} {nz}\n"
              f"spacing {vol.spacing!r}\n"
              "byteorder little\n"
              "dtype float32\n"
              "order x-fastest\n")
    path.with_suffix(".hdr").write_text(header)
    # x-fastest == Fortran order for an (x, y, z) indexed array
    path.with_suffix(".raw").write_bytes(vol.voxels.astype("<f4").tobytes(order="F"))


def read_volume(path) -> Volume:
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".hdr").read_text().splitlines():
        if line.strip():
            key, *vals = line.split()
            meta[key] = vals
    shape = tuple(int(v) for v in meta["shape"])
    if meta.get("byteorder", ["little"])[0] != "little":
        raise ValueError("only little-endian volumes are supported")
    raw = np.frombuffer(path.with_suffix(".raw").read_bytes(), dtype="<f4")
    vox = raw.reshape(shape, order="F").astype(np.float32)
    return Volume(vox, float(meta.get("spacing", ["1.0"])[0]))


def write_planes(path, planes) -> None:
    Path(path).write_text("".join(p.to_line() + "\n" for p in planes))


def read_planes(path) -> list[Plane]:
    return [Plane.from_line(l) for l in Path(path).read_text().splitlines() if l.strip()]
