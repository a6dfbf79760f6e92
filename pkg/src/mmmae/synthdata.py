"""Procedural RGB-D scene generator and dataset serialization.

Scenes are ray-cast tabletop setups: a fronto-parallel background plane plus
spheres and axis-aligned boxes, Lambertian-shaded. Depth is the distance
along the optical axis to the nearest hit, the point cloud is the depth map
unprojected and FPS-downsampled, so the three modalities are geometrically
consistent by construction.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, farthest_point_sampling, unproject_depth

SHARD_MAGIC = b"MMDS"
SHARD_VERSION = 1


@dataclass(frozen=True)
class SceneObject:
    kind: str  # "sphere" | "box"
    center: tuple[float, float, float]  # meters, camera frame
    size: tuple[float, float, float]  # sphere: (r, 0, 0); box: half extents
    albedo: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    objects: tuple[SceneObject, ...]
    plane_z: float  # fronto-parallel background plane depth
    plane_albedo: tuple[float, float, float]
    light_dir: tuple[float, float, float]  # direction light travels
    intr: CameraIntrinsics
    n_points: int = 8192
    d_max: float = 2.0


@dataclass
class Sample:
    """One synchronized observation."""

    id: str
    rgb: np.ndarray  # (3, H, W) float32 in [0, 1]
    depth: np.ndarray  # (1, H, W) float32, meters
    cloud: np.ndarray  # (M, 3) float32
    intr: CameraIntrinsics


def default_intrinsics(size: int = 224) -> CameraIntrinsics:
    f = size * 1.2
    return CameraIntrinsics(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def random_scene(seed: int, image_size: int = 224, n_points: int = 8192) -> SceneSpec:
    """A seeded desk scene: 1-4 objects floating over a background plane."""
    rng = np.random.default_rng([seed, 101])
    intr = default_intrinsics(image_size)
    plane_z = float(rng.uniform(1.5, 1.9))
    objects = []
    for _ in range(int(rng.integers(1, 5))):
        z = float(rng.uniform(0.45, 1.3))
        # keep the object inside the frustum at its depth
        lim = 0.5 * z * image_size / intr.fx * 0.55
        cx, cy = rng.uniform(-lim, lim, size=2)
        albedo = tuple(rng.uniform(0.2, 0.95, size=3).tolist())
        if rng.random() < 0.5:
            r = float(rng.uniform(0.04, 0.14))
            objects.append(SceneObject("sphere", (float(cx), float(cy), z), (r, 0.0, 0.0), albedo))
        else:
            he = tuple(rng.uniform(0.03, 0.12, size=3).tolist())
            objects.append(SceneObject("box", (float(cx), float(cy), z), he, albedo))
    light = rng.normal(size=3)
    light[2] = abs(light[2])  # light travels into the scene
    light = light / np.linalg.norm(light)
    return SceneSpec(
        seed=seed,
        objects=tuple(objects),
        plane_z=plane_z,
        plane_albedo=(0.55, 0.5, 0.45),
        light_dir=tuple(light.tolist()),
        intr=intr,
        n_points=n_points,
    )


def _sphere_hits(dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Smallest positive ray parameter per pixel (inf when missed).

    Rays are o + t*d with o = 0 and d_z = 1, so t equals the depth along
    the optical axis.
    """
    a = (dirs * dirs).sum(axis=-1)
    b = -2.0 * dirs @ center
    c = center @ center - radius * radius
    disc = b * b - 4 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-9, t0, t1)
    return np.where(hit & (t > 1e-9), t, np.inf)


def _box_hits(dirs: np.ndarray, center: np.ndarray, half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slab test; returns (t_enter, axis of entry face) per pixel."""
    lo = center - half
    hi = center + half
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)  # avoid 0/0 on axis-aligned rays
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = lo / d
        t_hi = hi / d
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    t_enter = t_near.max(axis=-1)
    t_exit = t_far.min(axis=-1)
    axis = t_near.argmax(axis=-1)
    ok = (t_enter <= t_exit) & (t_enter > 1e-9)
    return np.where(ok, t_enter, np.inf), axis


def render(spec: SceneSpec) -> Sample:
    """Ray-cast the scene into a geometrically consistent Sample."""
    intr = spec.intr
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1)
    flat = dirs.reshape(-1, 3)

    depth = np.full(flat.shape[0], spec.plane_z, dtype=np.float64)
    normal = np.tile(np.array([0.0, 0.0, -1.0]), (flat.shape[0], 1))
    albedo = np.tile(np.asarray(spec.plane_albedo), (flat.shape[0], 1))

    for obj in spec.objects:
        center = np.asarray(obj.center, dtype=np.float64)
        if obj.kind == "sphere":
            t = _sphere_hits(flat, center, obj.size[0])
            closer = t < depth
            if closer.any():
                pts = flat[closer] * t[closer, None]
                n = pts - center
                n /= np.linalg.norm(n, axis=1, keepdims=True)
                normal[closer] = n
                albedo[closer] = obj.albedo
                depth[closer] = t[closer]
        elif obj.kind == "box":
            t, axis = _box_hits(flat, center, np.asarray(obj.size, dtype=np.float64))
            closer = t < depth
            if closer.any():
                pts = flat[closer] * t[closer, None]
                n = np.zeros((int(closer.sum()), 3))
                ax = axis[closer]
                sign = np.sign(pts[np.arange(len(ax)), ax] - center[ax])
                n[np.arange(len(ax)), ax] = np.where(sign == 0, -1.0, sign)
                normal[closer] = n
                albedo[closer] = obj.albedo
                depth[closer] = t[closer]
        else:
            raise ValueError(f"unknown object kind {obj.kind!r}")

    if not np.isfinite(depth).all() or (depth <= 0).any():
        raise ValueError("scene leaves pixels without a valid hit")

    light = np.asarray(spec.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = np.maximum(0.0, -(normal @ light))
    shade = 0.25 + 0.75 * lambert
    rgb = np.clip(albedo * shade[:, None], 0.0, 1.0)

    depth_map = depth.reshape(h, w).astype(np.float32)
    rgb_map = rgb.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32)

    cloud = unproject_depth(depth_map.astype(np.float64), intr, stride=1)
    if spec.n_points < cloud.shape[0]:
        keep = farthest_point_sampling(cloud, spec.n_points, start=0)
        cloud = cloud[keep]
    return Sample(
        id=f"scene-{spec.seed:08d}",
        rgb=rgb_map,
        depth=depth_map[None],
        cloud=cloud.astype(np.float32),
        intr=intr,
    )


def scene_sdf(spec: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest scene surface (test oracle)."""
    pts = np.asarray(points, dtype=np.float64)
    best = np.abs(pts[:, 2] - spec.plane_z)
    for obj in spec.objects:
        center = np.asarray(obj.center)
        if obj.kind == "sphere":
            d = np.abs(np.linalg.norm(pts - center, axis=1) - obj.size[0])
        else:
            q = np.abs(pts - center) - np.asarray(obj.size)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            d = np.abs(outside + inside)
        best = np.minimum(best, d)
    return best


def color_jitter(
    rgb: np.ndarray,
    rng: np.random.Generator,
    brightness: float = 0.1,
    contrast: float = 0.1,
    saturation: float = 0.1,
    hue: float = 0.05,
) -> np.ndarray:
    """Seeded brightness/contrast/saturation/hue jitter on a (3, H, W) image."""
    img = np.asarray(rgb, dtype=np.float32).copy()
    fb = rng.uniform(1 - brightness, 1 + brightness)
    fc = rng.uniform(1 - contrast, 1 + contrast)
    fs = rng.uniform(1 - saturation, 1 + saturation)
    fh = rng.uniform(-hue, hue)

    img = img * fb
    gray = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]
    img = (img - gray.mean()) * fc + gray.mean()
    img = (img - gray) * fs + gray
    img = _shift_hue(np.clip(img, 0.0, 1.0), fh)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _shift_hue(rgb: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by `shift` (fraction of a full turn) via HSV round trip."""
    r, g, b = rgb
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.where(span == 0, 1.0, span)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span == 0, 0.0, (h / 6.0) % 1.0)
    h = (h + shift) % 1.0

    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r2 = np.choose(i, [v, q, p, p, t, v])
    g2 = np.choose(i, [t, v, v, q, p, p])
    b2 = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r2, g2, b2])


def _pack_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f4")
    out = struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return out + a.tobytes()


def _unpack_array(blob: bytes, pos: int, what: str) -> tuple[np.ndarray, int]:
    if pos + 1 > len(blob):
        raise FormatError(f"shard truncated while reading {what} header")
    (ndim,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if pos + 4 * ndim > len(blob):
        raise FormatError(f"shard truncated while reading {what} shape")
    shape = struct.unpack_from(f"<{ndim}I", blob, pos)
    pos += 4 * ndim
    n = int(np.prod(shape)) * 4
    if pos + n > len(blob):
        raise FormatError(f"shard truncated while reading {what} data")
    arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
    return arr, pos + n


def _encode_record(sample: Sample) -> bytes:
    idb = sample.id.encode("utf-8")
    out = struct.pack("<H", len(idb)) + idb
    out += _pack_array(sample.rgb)
    out += _pack_array(sample.depth)
    out += _pack_array(sample.cloud)
    return out


def write_dataset(samples: list[Sample], path: str | Path) -> Path:
    """Serialize samples to <path>/data.bin + <path>/manifest.json."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    shard = root / "data.bin"
    offsets, digests, ids, intrinsics = [], [], [], []
    with open(shard, "wb") as f:
        f.write(SHARD_MAGIC)
        f.write(struct.pack("<II", SHARD_VERSION, len(samples)))
        for s in samples:
            rec = _encode_record(s)
            offsets.append(f.tell())
            digests.append(hashlib.sha256(rec).hexdigest())
            ids.append(s.id)
            intrinsics.append(
                {
                    "fx": s.intr.fx,
                    "fy": s.intr.fy,
                    "cx": s.intr.cx,
                    "cy": s.intr.cy,
                    "width": s.intr.width,
                    "height": s.intr.height,
                }
            )
            f.write(rec)
    manifest = {
        "version": SHARD_VERSION,
        "count": len(samples),
        "ids": ids,
        "offsets": offsets,
        "digests": digests,
        "intrinsics": intrinsics,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


class Dataset:
    """Manifest-ordered reader over one shard, with per-record validation."""

    def __init__(self, path: str | Path):
        root = Path(path)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FormatError(f"no manifest.json under {root}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("version") != SHARD_VERSION:
            raise FormatError(
                f"dataset version {self.manifest.get('version')} unsupported (expected {SHARD_VERSION})"
            )
        self._blob = (root / "data.bin").read_bytes()
        if self._blob[:4] != SHARD_MAGIC:
            raise FormatError(f"bad shard magic {self._blob[:4]!r}")
        version, count = struct.unpack_from("<II", self._blob, 4)
        if version != SHARD_VERSION:
            raise FormatError(f"shard version {version} unsupported (expected {SHARD_VERSION})")
        if count != self.manifest["count"] or count != len(self.manifest["ids"]):
            raise FormatError("shard/manifest sample counts disagree")

    def __len__(self) -> int:
        return self.manifest["count"]

    def __getitem__(self, i: int) -> Sample:
        rec_id = self.manifest["ids"][i]
        pos = self.manifest["offsets"][i]
        if pos + 2 > len(self._blob):
            raise FormatError(f"shard truncated at record {rec_id!r}")
        (id_len,) = struct.unpack_from("<H", self._blob, pos)
        pos += 2
        stored_id = self._blob[pos : pos + id_len].decode("utf-8", errors="replace")
        if stored_id != rec_id:
            raise FormatError(f"record id mismatch: manifest {rec_id!r} vs shard {stored_id!r}")
        pos += id_len
        try:
            rgb, pos = _unpack_array(self._blob, pos, f"record {rec_id!r} rgb")
            depth, pos = _unpack_array(self._blob, pos, f"record {rec_id!r} depth")
            cloud, pos = _unpack_array(self._blob, pos, f"record {rec_id!r} cloud")
        except struct.error as e:
            raise FormatError(f"record {rec_id!r} corrupt: {e}") from e
        ci = self.manifest["intrinsics"][i]
        intr = CameraIntrinsics(
            fx=ci["fx"], fy=ci["fy"], cx=ci["cx"], cy=ci["cy"],
            width=int(ci["width"]), height=int(ci["height"]),
        )
        return Sample(id=rec_id, rgb=rgb, depth=depth, cloud=cloud, intr=intr)

    def verify_digests(self) -> None:
        """Recompute every record digest against the manifest."""
        for i, rec_id in enumerate(self.manifest["ids"]):
            start = self.manifest["offsets"][i]
            end = (
                self.manifest["offsets"][i + 1]
                if i + 1 < len(self.manifest["offsets"])
                else len(self._blob)
            )
            digest = hashlib.sha256(self._blob[start:end]).hexdigest()
            if digest != self.manifest["digests"][i]:
                raise FormatError(f"digest mismatch for record {rec_id!r}")

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]


def read_dataset(path: str | Path) -> Dataset:
    return Dataset(path)
