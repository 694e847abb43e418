"""Pinhole cameras on the enclosing sphere, pixel rays, depth image files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odf.domain import DEFAULT_DOMAIN, DomainConfig, normalize, uniform_dir_sample
from odf.errors import DataError
from odf.storage import load_json, save_json, sidecar_path

DEFAULT_RESOLUTION = 256
DEFAULT_FOV_DEG = 100.0


@dataclass(frozen=True)
class Camera:
    """Look-at pinhole camera; intrinsics in pixels."""

    center: tuple[float, float, float]
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    focal: float = (DEFAULT_RESOLUTION / 2) / np.tan(np.radians(DEFAULT_FOV_DEG / 2))
    cx: float = DEFAULT_RESOLUTION / 2
    cy: float = DEFAULT_RESOLUTION / 2
    width: int = DEFAULT_RESOLUTION
    height: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.focal > 0:
            raise DataError(f"invalid intrinsics: {self.width}x{self.height}, focal {self.focal}")
        look = np.subtract(self.target, self.center)
        if np.linalg.norm(look) == 0:
            raise DataError("camera center and target coincide")
        if np.linalg.norm(np.cross(look, self.up)) < 1e-12:
            raise DataError("camera up vector is parallel to the viewing direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) orthonormal frame."""
        forward = normalize(np.subtract(self.target, self.center))
        right = normalize(np.cross(forward, self.up))
        up = np.cross(right, forward)
        return forward, right, up

    def on_sphere(self, domain: DomainConfig = DEFAULT_DOMAIN, tol: float = 1e-9) -> bool:
        return abs(float(np.linalg.norm(self.center)) - domain.sphere_radius) <= tol

    def to_dict(self) -> dict:
        return {
            "center": list(self.center), "target": list(self.target), "up": list(self.up),
            "focal": self.focal, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Camera:
        return cls(
            center=tuple(data["center"]), target=tuple(data["target"]), up=tuple(data["up"]),
            focal=float(data["focal"]), cx=float(data["cx"]), cy=float(data["cy"]),
            width=int(data["width"]), height=int(data["height"]),
        )


def look_at_camera(center, target=(0.0, 0.0, 0.0), up=None, width: int = DEFAULT_RESOLUTION,
                   height: int = DEFAULT_RESOLUTION, fov_deg: float = DEFAULT_FOV_DEG) -> Camera:
    """Camera at `center` looking at `target`; picks a non-degenerate up vector if none given."""
    center = tuple(float(x) for x in center)
    target = tuple(float(x) for x in target)
    if up is None:
        forward = normalize(np.subtract(target, center))
        up = (0.0, 0.0, 1.0) if abs(forward[2]) < 0.99 else (0.0, 1.0, 0.0)
    focal = (width / 2) / np.tan(np.radians(fov_deg / 2))
    return Camera(center, target, tuple(float(x) for x in up), float(focal), width / 2, height / 2, width, height)


def sample_cameras(k: int, rng: np.random.Generator, domain: DomainConfig = DEFAULT_DOMAIN,
                   width: int = DEFAULT_RESOLUTION, height: int = DEFAULT_RESOLUTION,
                   fov_deg: float = DEFAULT_FOV_DEG) -> list[Camera]:
    """k cameras with centers uniform on the enclosing sphere, all looking at the origin."""
    centers = uniform_dir_sample(rng, k) * domain.sphere_radius
    return [look_at_camera(c, width=width, height=height, fov_deg=fov_deg) for c in centers]


def pixel_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Row-major (H·W, 3) origins and unit directions through pixel centers."""
    forward, right, up = camera.basis()
    rows, cols = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    x = (cols.reshape(-1) + 0.5 - camera.cx) / camera.focal
    y = (rows.reshape(-1) + 0.5 - camera.cy) / camera.focal
    dirs = normalize(forward[None, :] + x[:, None] * right[None, :] - y[:, None] * up[None, :])
    origins = np.broadcast_to(np.asarray(camera.center, dtype=np.float64), dirs.shape).copy()
    return origins, dirs


# ─── Depth images ────────────────────────────────────────────────────────


@dataclass
class DepthImage:
    """Per-pixel ray length (not z-depth); 0 marks background."""

    camera: Camera
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.camera.height, self.camera.width):
            raise DataError(
                f"depth image is {self.values.shape}, camera expects "
                f"{(self.camera.height, self.camera.width)}"
            )

    @property
    def foreground(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)

    def points(self) -> np.ndarray:
        """Surface points lifted from foreground pixels."""
        origins, dirs = pixel_rays(self.camera)
        fg = self.foreground.reshape(-1)
        return origins[fg] + self.values.reshape(-1)[fg, None] * dirs[fg]


def _write_pfm(path: Path, values: np.ndarray):
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(values).astype("<f4").tobytes())


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise DataError(f"{path} is not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype)
    if data.size != w * h:
        raise DataError(f"{path} is truncated")
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def save_depth_image(image: DepthImage, path: str | Path, domain: DomainConfig = DEFAULT_DOMAIN,
                     png: bool = True, meta: dict | None = None):
    """`<path>.pfm` float32 raster + `.json` camera sidecar (+ 16-bit PNG preview)."""
    path = Path(path).with_suffix(".pfm")
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.where(image.foreground, image.values, 0.0)
    _write_pfm(path, values)
    save_json(sidecar_path(path), {**(meta or {}), "camera": image.camera.to_dict()})
    if png:
        from PIL import Image

        scaled = np.clip(values / (2 * domain.sphere_radius), 0.0, 1.0) * 65535
        Image.fromarray(scaled.round().astype(np.uint16)).save(path.with_suffix(".png"))


def load_depth_image(path: str | Path) -> DepthImage:
    path = Path(path).with_suffix(".pfm")
    if not path.exists():
        raise DataError(f"depth image not found: {path}")
    meta = load_json(sidecar_path(path))
    if "camera" not in meta:
        raise DataError(f"camera sidecar missing for {path}")
    return DepthImage(Camera.from_dict(meta["camera"]), _read_pfm(path))


def load_depth_dir(directory: str | Path) -> list[DepthImage]:
    """All depth images (*.pfm) of a directory, in name order."""
    directory = Path(directory)
    files = sorted(directory.glob("*.pfm"))
    if not files:
        raise DataError(f"no .pfm depth images in {directory}")
    return [load_depth_image(f) for f in files]
