"""Synthetic phantom volumes with planted planes and landmarks.

The organ is an ellipsoid built around three nearly orthogonal planes that
meet at a core point. Each plane carries a thin bright sheet and a signed
side tint, so a slice reveals both how far and to which side it lies from
the plane. Landmarks sit on the pairwise plane intersection lines, which
puts every landmark exactly on its designated planes.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .geometry import Plane, Volume, plane_from_normal, read_planes, read_volume, write_planes, write_volume

LANDMARK_LABELS = ("top", "left", "right", "front")
# landmark label -> indices (0-based) of the planes that contain it
LANDMARK_PLANES = {"top": (1, 2), "left": (0, 2), "right": (0, 2), "front": (0, 1)}
# nominal distance of each landmark from the core along its intersection line
LANDMARK_RADII = {"top": 12.0, "left": 10.0, "right": -10.0, "front": 8.0}
ORGAN_AXES = (24.0, 18.0, 14.0)
# The organ is modelled in a body frame with planes near the coordinate axes,
# then turned by this fixed rotation. In the resulting canonical frame every
# plane normal has a clearly positive x component and one dominant axis, so the
# canonical normal sign and the slice basis do not flip from case to case.
BODY_FRAME = Rotation.from_rotvec(np.radians(30.0) * np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0)).as_matrix()


class InvalidConfigError(ValueError):
    pass


class DegenerateConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    shape: int = 64
    angle_spread: float = 12.0
    anatomy_jitter: float = 2.0
    max_rotation: float = 30.0
    max_translation: float = 8.0
    noise: float = 0.15
    landmark_jitter: float = 0.5

    def validate(self) -> "PhantomConfig":
        if self.shape < 48:
            raise InvalidConfigError(f"shape must be >= 48, got {self.shape}")
        for name in ("angle_spread", "anatomy_jitter", "max_rotation", "max_translation", "noise", "landmark_jitter"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if self.angle_spread > 60:
            raise InvalidConfigError("angle_spread must be <= 60 degrees")
        return self

    def echo(self) -> str:
        return "".join(f"{k} {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_echo(cls, text: str) -> "PhantomConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            key, _, val = line.partition(" ")
            if key in types:
                kw[key] = int(val) if types[key] in (int, "int") else float(val)
        return cls(**kw)


@dataclass
class RigidTransform:
    """x -> rotation @ x + translation, on volume-center-relative coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


@dataclass
class PhantomCase:
    volume: Volume
    gt_planes: list[Plane]
    landmarks: dict[str, np.ndarray]  # center-relative voxel coordinates
    seed: int
    meta: dict = field(default_factory=dict)

    def landmark_array(self, labels=LANDMARK_LABELS) -> np.ndarray:
        return np.stack([self.landmarks[l] for l in labels])


def _random_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_deg))
    return Rotation.from_rotvec(axis * angle).as_matrix()


def _tilted_normals(rng: np.random.Generator, spread: float) -> np.ndarray:
    """Rows: unit normals near the coordinate axes, each tilted by <= spread/2."""
    out = np.eye(3)
    for k in range(3):
        if spread > 0:
            out[k] = _random_rotation(rng, spread / 2.0) @ out[k]
    return out


def _intersection_dir(na, nb) -> np.ndarray:
    u = np.cross(na, nb)
    return u / np.linalg.norm(u)


def _line_point(na, da, nb, db) -> np.ndarray:
    """Point on the intersection line of two planes closest to the origin."""
    u = np.cross(na, nb)
    return (da * np.cross(nb, u) + db * np.cross(u, na)) / (u @ u)


def _landmarks_for(normals, ds, radii) -> dict[str, np.ndarray]:
    out = {}
    for label, (i, j) in LANDMARK_PLANES.items():
        base = _line_point(normals[i], ds[i], normals[j], ds[j])
        u = _intersection_dir(normals[i], normals[j])
        # orient the line so that the nominal configuration matches the atlas
        k = 3 - i - j
        if u @ np.eye(3)[k] < 0:
            u = -u
        out[label] = base + radii[label] * u
    return out


def atlas_landmarks() -> dict[str, np.ndarray]:
    """Landmarks of the canonical, unperturbed phantom."""
    body = _landmarks_for(np.eye(3), np.zeros(3), LANDMARK_RADII)
    return {k: BODY_FRAME @ v for k, v in body.items()}


def _render(shape: int, normals, ds, core, landmarks, rot, trans, noise, rng) -> np.ndarray:
    """Evaluate the organ model on the voxel grid of the posed volume."""
    c = (shape - 1) / 2.0
    ax = np.arange(shape, dtype=np.float64) - c
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1) - trans
    # canonical-frame coordinates of every posed voxel
    q = pts @ rot  # == (rot.T @ p) per point
    del pts, X, Y, Z
    rel = q - core
    ell = np.sqrt(sum((rel[..., k] / ORGAN_AXES[k]) ** 2 for k in range(3)))
    organ = 1.0 / (1.0 + np.exp((ell - 1.0) * 12.0))
    vol = 0.05 + 0.30 * organ
    tint = (0.24, 0.19, 0.15)
    for k in range(3):
        s = q @ normals[k] - ds[k]
        vol += organ * (0.45 * np.exp(-0.5 * (s / 1.2) ** 2) + tint[k] * np.tanh(s / 5.0))
    # an off-center dark cavity breaks residual mirror symmetries
    cav = core + np.array([6.0, -4.0, 3.0])
    vol -= 0.2 * organ * np.exp(-0.5 * np.sum(((q - cav) / np.array([5.0, 3.0, 2.5])) ** 2, axis=-1))
    for p in landmarks.values():
        vol += 0.6 * np.exp(-0.5 * np.sum((q - p) ** 2, axis=-1) / 1.5 ** 2)
    if noise > 0:
        speckle = ndimage.gaussian_filter(rng.normal(size=vol.shape), 0.7)
        speckle /= speckle.std()
        vol = vol * (1.0 + noise * speckle)
    return np.clip(vol, 0.0, None).astype(np.float32)


def generate_phantom(seed: int, cfg: PhantomConfig | None = None) -> PhantomCase:
    """Deterministic phantom for ``seed``."""
    cfg = (cfg or PhantomConfig()).validate()
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2 ** 64 - 1)))
    normals = _tilted_normals(rng, cfg.angle_spread)
    core = rng.uniform(-1.0, 1.0, size=3) * cfg.anatomy_jitter * 1.5
    ds = normals @ core
    radii = {l: r + rng.uniform(-1.0, 1.0) * cfg.anatomy_jitter for l, r in LANDMARK_RADII.items()}
    lms = _landmarks_for(normals, ds, radii)

    rot = _random_rotation(rng, cfg.max_rotation)
    tdir = rng.normal(size=3)
    trans = tdir / np.linalg.norm(tdir) * rng.uniform(0.0, cfg.max_translation)
    # body frame -> canonical frame -> random pose
    vox = _render(cfg.shape, normals, ds, core, lms, rot @ BODY_FRAME, trans, cfg.noise, rng)

    pose = RigidTransform(rot @ BODY_FRAME, trans)
    planes = [apply_transform(plane_from_normal(normals[k], ds[k]), pose) for k in range(3)]
    posed_lms = {l: apply_transform(p, pose) for l, p in lms.items()}
    meta = {"config": asdict(cfg), "pose_rotation": rot.tolist(), "pose_translation": trans.tolist()}
    return PhantomCase(Volume(vox), planes, posed_lms, int(seed), meta)


def landmark_residuals(case: PhantomCase) -> list[float]:
    out = []
    for label, idx in LANDMARK_PLANES.items():
        for k in idx:
            pl = case.gt_planes[k]
            out.append(abs(float(pl.normal @ case.landmarks[label]) - pl.d))
    return out


# -- rigid alignment ---------------------------------------------------------

def align_landmarks(src: dict, atlas: dict) -> RigidTransform:
    """Least-squares rigid map taking ``src`` landmarks onto ``atlas``.

    Orthogonal Procrustes with a determinant correction so the result is a
    proper rotation.
    """
    labels = [l for l in src if l in atlas]
    if len(labels) < 3:
        raise DegenerateConfigurationError("need >= 3 matching landmarks")
    A = np.stack([np.asarray(src[l], dtype=np.float64) for l in labels])
    B = np.stack([np.asarray(atlas[l], dtype=np.float64) for l in labels])
    ca, cb = A.mean(0), B.mean(0)
    A0, B0 = A - ca, B - cb
    sv = np.linalg.svd(A0, compute_uv=False)
    if sv[1] < 1e-9 * max(1.0, sv[0]):
        raise DegenerateConfigurationError("landmarks are collinear")
    U, _, Vt = np.linalg.svd(A0.T @ B0)
    sign = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, sign]) @ U.T
    return RigidTransform(R, cb - R @ ca)


def apply_transform(x, T: RigidTransform):
    """Map a Volume, Plane, point array or landmark dict through ``T``."""
    if isinstance(x, Plane):
        n = T.rotation @ x.normal
        return plane_from_normal(n, x.d + float(n @ T.translation))
    if isinstance(x, Volume):
        shape = x.shape
        c = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
        grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
        out_pts = np.stack(grids, axis=0).reshape(3, -1) - c[:, None]
        src = T.rotation.T @ (out_pts - T.translation[:, None]) + c[:, None]
        vals = ndimage.map_coordinates(x.voxels, src, order=1, mode="constant", cval=0.0, prefilter=False)
        return Volume(vals.reshape(shape).astype(np.float32), x.spacing)
    if isinstance(x, dict):
        return {k: apply_transform(v, T) for k, v in x.items()}
    pts = np.asarray(x, dtype=np.float64)
    return pts @ T.rotation.T + T.translation


def annotate_landmarks(case: PhantomCase, sigma: float, rng: np.random.Generator) -> dict:
    """Landmarks as an annotator would mark them: true positions plus jitter."""
    return {l: p + rng.normal(scale=sigma, size=3) for l, p in case.landmarks.items()}


def align_case(case: PhantomCase, sigma: float | None = None, rng=None) -> PhantomCase:
    """Register a case onto the atlas using (jittered) landmarks."""
    if sigma is None:
        sigma = case.meta.get("config", {}).get("landmark_jitter", 0.5)
    if rng is None:
        rng = np.random.default_rng([int(case.seed) & (2 ** 63 - 1), 7])
    T = align_landmarks(annotate_landmarks(case, sigma, rng), atlas_landmarks())
    meta = dict(case.meta, aligned=True, align_rotation=T.rotation.tolist(),
                align_translation=T.translation.tolist())
    return PhantomCase(apply_transform(case.volume, T),
                       [apply_transform(p, T) for p in case.gt_planes],
                       apply_transform(case.landmarks, T), case.seed, meta)


def rmsd(a: dict, b: dict) -> float:
    labels = [l for l in a if l in b]
    return float(np.sqrt(np.mean([np.sum((a[l] - b[l]) ** 2) for l in labels])))


# -- dataset I/O -------------------------------------------------------------

def save_case(case: PhantomCase, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_volume(d / "volume", case.volume)
    write_planes(d / "planes.txt", case.gt_planes)
    c = case.volume.center
    (d / "landmarks.txt").write_text("".join(
        f"{l} {p[0] + c[0]:.17g} {p[1] + c[1]:.17g} {p[2] + c[2]:.17g}\n" for l, p in case.landmarks.items()))
    cfg = PhantomConfig(**case.meta["config"]) if "config" in case.meta else PhantomConfig()
    (d / "meta.txt").write_text(f"seed {case.seed}\n" + cfg.echo())


def load_case(directory) -> PhantomCase:
    d = Path(directory)
    vol = read_volume(d / "volume")
    planes = read_planes(d / "planes.txt")
    c = vol.center
    lms = {}
    for line in (d / "landmarks.txt").read_text().splitlines():
        if line.strip():
            label, *xyz = line.split()
            lms[label] = np.array([float(v) for v in xyz]) - c
    meta_text = (d / "meta.txt").read_text()
    seed = int(meta_text.splitlines()[0].split()[1])
    cfg = PhantomConfig.from_echo(meta_text)
    return PhantomCase(vol, planes, lms, seed, {"config": asdict(cfg)})


def generate_dataset(out_dir, n: int, cfg: PhantomConfig | None = None, seed_base: int = 0) -> list[Path]:
    out = []
    for i in range(n):
        case = generate_phantom(seed_base + i, cfg)
        p = Path(out_dir) / f"case_{i:04d}"
        save_case(case, p)
        out.append(p)
    return out


def load_dataset(directory) -> list[PhantomCase]:
    return [load_case(p) for p in sorted(Path(directory).iterdir()) if (p / "planes.txt").exists()]


def tree_hash(directory) -> str:
    """Content hash of every file under ``directory`` (relative paths included), or of one file."""
    h = hashlib.sha256()
    root = Path(directory)
    if root.is_file():
        h.update(root.read_bytes())
        return h.hexdigest()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
