"""Benchmark construction: synthetic shapes, viewpoint cropping samples, splits and file formats."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import geom

DIFFICULTIES = ("simple", "moderate", "hard")
SHAPE_KINDS = ("sphere", "box", "cylinder", "torus", "composite")
MANIFEST_VERSION = 1


class ParseError(ValueError):
    pass


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    n_objects: int = 10
    gt_points: int = 8192
    input_points: int = 2048
    n_range_train: tuple = (2048, 6144)
    eval_n: tuple = (2048, 4096, 6144)
    split_ratio: float = 0.8
    unseen_categories: tuple = ()
    seed: int = 0

    def __post_init__(self):
        self.n_range_train = tuple(self.n_range_train)
        self.eval_n = tuple(self.eval_n)
        self.unseen_categories = tuple(self.unseen_categories)
        lo, hi = self.n_range_train
        if not 0 < lo <= hi < self.gt_points:
            raise ValueError(f"n_range_train {self.n_range_train} must lie in (0, {self.gt_points})")
        if len(self.eval_n) != 3 or not all(0 < n < self.gt_points for n in self.eval_n):
            raise ValueError("eval_n needs three removal counts below gt_points")
        if self.input_points > self.gt_points - max(lo, max(self.eval_n)):
            raise ValueError("input_points exceeds what survives the largest crop")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")

    def removal(self, difficulty: str) -> int:
        return self.eval_n[DIFFICULTIES.index(difficulty)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("n_range_train", "eval_n", "unseen_categories"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown dataset spec key: {unknown[0]}")
        return cls(**data)


def desk_spec(**overrides) -> DatasetSpec:
    """Quarter-scale counts: 2048 gt points, 512 inputs, 25/50/75% removal."""
    base = dict(gt_points=2048, input_points=512, n_range_train=(512, 1536), eval_n=(512, 1024, 1536))
    base.update(overrides)
    return DatasetSpec(**base)


@dataclass
class EvalSample:
    partial: np.ndarray
    gt: np.ndarray
    difficulty: str
    viewpoint_index: int
    category: str
    object_id: str = ""


# ---------------------------------------------------------------- synthetic surfaces


def _area_split(rng, n: int, areas) -> np.ndarray:
    """How many of n samples land on each piece, proportional to area."""
    p = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(n, p / p.sum())


def _sphere(rng, n, radius=1.0, centre=(0, 0, 0)):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(centre, dtype=np.float64)


def _box(rng, n, half):
    hx, hy, hz = half
    faces = [(0, hx, (hy, hz)), (1, hy, (hx, hz)), (2, hz, (hx, hy))]
    areas = [4 * a * b for _, _, (a, b) in faces for _ in (0, 1)]
    counts = _area_split(rng, n, areas)
    out = []
    for j, c in enumerate(counts):
        axis, h, _ = faces[j // 2]
        pts = rng.uniform(-1, 1, size=(c, 3)) * np.asarray(half)
        pts[:, axis] = h if j % 2 == 0 else -h
        out.append(pts)
    return np.concatenate(out)


def _cylinder(rng, n, radius, height):
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    c_side, c_top, c_bot = _area_split(rng, n, [lateral, cap, cap])
    th = rng.uniform(0, 2 * np.pi, c_side)
    side = np.stack([radius * np.cos(th), radius * np.sin(th), rng.uniform(-height / 2, height / 2, c_side)], 1)
    caps = []
    for c, z in ((c_top, height / 2), (c_bot, -height / 2)):
        r = radius * np.sqrt(rng.uniform(0, 1, c))
        t = rng.uniform(0, 2 * np.pi, c)
        caps.append(np.stack([r * np.cos(t), r * np.sin(t), np.full(c, z)], 1))
    return np.concatenate([side] + caps)


def _torus(rng, n, major, minor):
    out, have = [], 0
    while have < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, 1, 2 * n) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out.append(np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], 1))
        have += len(u)
    return np.concatenate(out)[:n]


def _composite(rng, n):
    """A box body with a cylinder post and a sphere cap on top."""
    half = rng.uniform(0.5, 1.0, 3) * np.array([1.0, 1.0, 0.4])
    r_post, h_post = rng.uniform(0.15, 0.3), rng.uniform(0.6, 1.0)
    r_ball = rng.uniform(0.3, 0.45)
    areas = [
        8 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2]),
        2 * np.pi * r_post * h_post + 2 * np.pi * r_post**2,
        4 * np.pi * r_ball**2,
    ]
    c_box, c_post, c_ball = _area_split(rng, n, areas)
    body = _box(rng, c_box, half)
    post = _cylinder(rng, c_post, r_post, h_post) + [0, 0, half[2] + h_post / 2]
    ball = _sphere(rng, c_ball, r_ball, (0, 0, half[2] + h_post + r_ball))
    return np.concatenate([body, post, ball])


def synth_shape(kind: str, seed: int, n: int = 8192, raw: bool = False) -> np.ndarray:
    """Uniform surface sample of a parametric shape, randomly rotated/scaled, unit-normalized.

    ``raw=True`` skips the rotation, scaling and normalization.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    rng = np.random.default_rng([SHAPE_KINDS.index(kind), seed])
    if kind == "sphere":
        pts = _sphere(rng, n, rng.uniform(0.5, 2.0))
    elif kind == "box":
        pts = _box(rng, n, rng.uniform(0.3, 1.0, 3))
    elif kind == "cylinder":
        pts = _cylinder(rng, n, rng.uniform(0.3, 0.8), rng.uniform(0.5, 2.0))
    elif kind == "torus":
        major = rng.uniform(0.6, 1.0)
        pts = _torus(rng, n, major, major * rng.uniform(0.2, 0.5))
    else:
        pts = _composite(rng, n)
    pts = pts[rng.permutation(n)]
    if raw:
        return pts
    rot = Rotation.random(random_state=rng)
    pts = rot.apply(pts) * rng.uniform(0.5, 2.0)
    out, _, _ = geom.normalize_unit(pts)
    return out.astype(np.float32)


# ---------------------------------------------------------------- samples


def random_viewpoint(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def make_train_sample(gt, rng, spec: DatasetSpec | None = None):
    """Online training crop: random viewpoint, random removal count, downsample to the input size.

    Returns ``(partial, gt, n_removed)``.
    """
    spec = spec or DatasetSpec()
    gt = geom.as_cloud(gt, "gt")
    if len(gt) != spec.gt_points:
        raise geom.SizeError(f"gt has {len(gt)} points, expected {spec.gt_points}")
    vp = random_viewpoint(rng)
    lo, hi = spec.n_range_train
    n = int(rng.integers(lo, hi + 1))
    kept, _ = geom.crop_by_viewpoint(gt, vp, n)
    return geom.downsample_random(kept, spec.input_points, rng), gt, n


def eval_seed(object_id: str, viewpoint_index: int, difficulty: str) -> int:
    key = f"{object_id}|{viewpoint_index}|{difficulty}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def make_eval_sample(gt, viewpoint_index: int, difficulty: str, object_id: str = "",
                     category: str = "", spec: DatasetSpec | None = None) -> EvalSample:
    spec = spec or DatasetSpec()
    gt = geom.as_cloud(gt, "gt")
    if not 0 <= viewpoint_index < len(geom.EVAL_VIEWPOINTS):
        raise IndexError(f"viewpoint index {viewpoint_index} not in 0..{len(geom.EVAL_VIEWPOINTS) - 1}")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}")
    if len(gt) != spec.gt_points:
        raise geom.SizeError(f"gt has {len(gt)} points, expected {spec.gt_points}")
    kept, _ = geom.crop_by_viewpoint(gt, geom.EVAL_VIEWPOINTS[viewpoint_index], spec.removal(difficulty))
    partial = geom.downsample_random(kept, spec.input_points, eval_seed(object_id, viewpoint_index, difficulty))
    return EvalSample(partial, gt, difficulty, viewpoint_index, category, object_id)


def eval_samples_for(object_id: str, category: str, gt, spec: DatasetSpec) -> list[EvalSample]:
    return [
        make_eval_sample(gt, v, d, object_id, category, spec)
        for v in range(len(geom.EVAL_VIEWPOINTS))
        for d in DIFFICULTIES
    ]


# ---------------------------------------------------------------- corpus and split


@dataclass
class ShapeObject:
    object_id: str
    category: str
    points: np.ndarray
    source: str = ""


def synthetic_corpus(spec: DatasetSpec) -> list[ShapeObject]:
    objs = []
    for i in range(spec.n_objects):
        kind = SHAPE_KINDS[i % len(SHAPE_KINDS)]
        seed = spec.seed * 100003 + i
        objs.append(ShapeObject(f"{kind}-{i:04d}", kind, synth_shape(kind, seed, spec.gt_points),
                                f"synthetic:{kind}:{seed}"))
    return objs


def directory_corpus(root, spec: DatasetSpec) -> list[ShapeObject]:
    """Clouds laid out as ``root/<category>/<name>.xyz``; each is normalized and resampled to gt_points."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    objs = []
    for path in sorted(root.glob("*/*.xyz")):
        cloud, _, _ = geom.normalize_unit(load_xyz(path))
        pts = geom.downsample_random(cloud, spec.gt_points, eval_seed(path.stem, 0, "gt"))
        objs.append(ShapeObject(f"{path.parent.name}-{path.stem}", path.parent.name, pts.astype(np.float32),
                                str(path.relative_to(root))))
    return objs


def load_corpus(spec: DatasetSpec) -> list[ShapeObject]:
    if spec.source == "synthetic":
        return synthetic_corpus(spec)
    return directory_corpus(spec.source, spec)


def make_split(spec: DatasetSpec, objects: list[ShapeObject]) -> dict:
    """Stratified per-category split; ``unseen_categories`` are held out entirely."""
    by_cat: dict[str, list[ShapeObject]] = {}
    for obj in objects:
        by_cat.setdefault(obj.category, []).append(obj)
    for cat in spec.unseen_categories:
        if cat not in by_cat:
            raise geom.SizeError(f"unseen category {cat!r} has no objects")
    entries = []
    for cat in sorted(by_cat):
        members = sorted(by_cat[cat], key=lambda o: o.object_id)
        if cat in spec.unseen_categories:
            roles = ["unseen"] * len(members)
        elif len(members) == 1:
            # nothing to stratify; a lone object is only useful for training
            roles = ["train"]
        else:
            n_train = min(len(members) - 1, max(1, int(round(spec.split_ratio * len(members)))))
            rng = np.random.default_rng([spec.seed, eval_seed(cat, 0, "split") % (2**32)])
            order = rng.permutation(len(members))
            roles = [""] * len(members)
            for rank, i in enumerate(order):
                roles[i] = "train" if rank < n_train else "test"
        for obj, role in zip(members, roles):
            entries.append({"id": obj.object_id, "category": cat, "role": role, "source": obj.source})
    return {"version": MANIFEST_VERSION, "seed": spec.seed, "spec": spec.to_dict(), "entries": entries}


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def load_manifest(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("version", "seed", "spec", "entries"):
        if key not in data:
            raise ParseError(f"{path}: manifest missing {key!r}")
    if data["version"] != MANIFEST_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {data['version']}")
    return data


# ---------------------------------------------------------------- dataset tree


def write_dataset(out_dir, spec: DatasetSpec) -> dict:
    """Materialize objects, eval crops (8 viewpoints x 3 tiers each) and ``manifest.json``."""
    out = Path(out_dir)
    objects = load_corpus(spec)
    manifest = make_split(spec, objects)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    for obj in objects:
        save_xyz(obj.points, out / "objects" / f"{obj.object_id}.xyz")
        sample_dir = out / "eval" / obj.object_id
        sample_dir.mkdir(parents=True, exist_ok=True)
        for s in eval_samples_for(obj.object_id, obj.category, obj.points, spec):
            save_xyz(s.partial, sample_dir / f"vp{s.viewpoint_index}_{s.difficulty}.xyz")
    (out / "manifest.json").write_text(dump_manifest(manifest), encoding="utf-8")
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    spec: DatasetSpec
    objects: dict = field(default_factory=dict)

    def entries(self, roles=("train",)) -> list[dict]:
        return [e for e in self.manifest["entries"] if e["role"] in roles]

    def gt(self, object_id: str) -> np.ndarray:
        if object_id not in self.objects:
            self.objects[object_id] = load_xyz(self.root / "objects" / f"{object_id}.xyz")
        return self.objects[object_id]

    def train_clouds(self) -> list[np.ndarray]:
        return [self.gt(e["id"]) for e in self.entries(("train",))]

    def eval_samples(self, roles=("test", "unseen")) -> list[EvalSample]:
        out = []
        for e in self.entries(roles):
            gt = self.gt(e["id"])
            for v in range(len(geom.EVAL_VIEWPOINTS)):
                for d in DIFFICULTIES:
                    partial = load_xyz(self.root / "eval" / e["id"] / f"vp{v}_{d}.xyz")
                    out.append(EvalSample(partial, gt, d, v, e["category"], e["id"]))
        return out


def open_dataset(root) -> Dataset:
    root = Path(root)
    manifest = load_manifest(root / "manifest.json")
    return Dataset(root, manifest, DatasetSpec.from_dict(manifest["spec"]))


# ---------------------------------------------------------------- file formats


def save_xyz(cloud, path) -> None:
    pts = geom.as_cloud(cloud)
    lines = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts.astype(np.float64)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_xyz(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with path.open("r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float32)


PLY_HEADER = "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"


def save_ply(cloud, path) -> None:
    pts = geom.as_cloud(cloud)
    body = "\n".join(f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts.astype(np.float64))
    Path(path).write_text(PLY_HEADER.format(n=len(pts)) + body + "\n", encoding="ascii")


def load_ply(path) -> np.ndarray:
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply" or "end_header" not in lines:
        raise ParseError(f"{path}: not an ASCII PLY file")
    end = lines.index("end_header")
    count = None
    for line in lines[:end]:
        if line.startswith("element vertex"):
            count = int(line.split()[2])
    if count is None:
        raise ParseError(f"{path}: missing vertex count")
    rows = []
    for lineno, line in enumerate(lines[end + 1 : end + 1 + count], start=end + 2):
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
        rows.append([float(v) for v in parts])
    if len(rows) != count:
        raise ParseError(f"{path}: header declares {count} vertices, found {len(rows)}")
    return np.asarray(rows, dtype=np.float32)
