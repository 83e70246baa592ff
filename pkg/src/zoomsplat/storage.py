"""Serialization: scene PLY, camera JSON, config files, image files.

The scene format is binary little-endian PLY with the de-facto splatting
property layout (x y z, nx ny nz, f_dc_*, f_rest_*, opacity, scale_*,
rot_*), so third-party viewers can open base layers. Two extension
properties trail the standard ones: ``lod_layer`` (int32) and ``psi_ref``
(float32); readers that ignore unknown trailing properties still open the
file, and files without the extensions load with defaults and a warning.

All writes are atomic: temp file in the same directory, then rename.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from . import pngcodec
from .errors import SceneLoadError
from .geometry import Camera, DepthMap, ImageBuffer, sh_coeff_count, sh_degree_from_count
from .lod import GaussianScene, LodConfig, LodLayer

logger = logging.getLogger(__name__)

DEFAULT_NEAR = 0.01
DEFAULT_FAR = 100.0


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(f"{path.name}.tmp-{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# scene PLY


def scene_to_ply_bytes(scene: GaussianScene) -> bytes:
    n = len(scene)
    b = sh_coeff_count(scene.sh_degree)
    rest = 3 * (b - 1)
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(rest)]
    props += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    header = ["ply", "format binary_little_endian 1.0",
              f"comment zoomsplat zoom_factor_s={scene.lod_config.zoom_factor_s!r}",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header += ["property int lod_layer", "property float psi_ref", "end_header"]

    cols = [scene.centers.astype("<f4"),
            np.zeros((n, 3), dtype="<f4")]
    dc = scene.sh_coeffs[:, 0, :].astype("<f4")
    cols.append(dc)
    if b > 1:
        # channel-major rest layout: all bands for R, then G, then B
        rest_arr = scene.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, rest)
        cols.append(rest_arr.astype("<f4"))
    cols.append(scene.opacity_logits.reshape(n, 1).astype("<f4"))
    cols.append(scene.log_scales.astype("<f4"))
    cols.append(scene.rotations.astype("<f4"))

    float_block = np.concatenate(cols, axis=1) if n else np.zeros((0, len(props)),
                                                                  dtype="<f4")
    row_dtype = np.dtype([("f", "<f4", (len(props),)), ("layer", "<i4"),
                          ("psi", "<f4")])
    rows = np.empty(n, dtype=row_dtype)
    rows["f"] = float_block
    rows["layer"] = scene.lod_layer.astype("<i4")
    rows["psi"] = scene.psi_ref.astype("<f4")
    return ("\n".join(header) + "\n").encode("ascii") + rows.tobytes()


def write_scene(path, scene: GaussianScene):
    scene.validate()
    atomic_write_bytes(path, scene_to_ply_bytes(scene))


def scene_from_ply_bytes(data: bytes) -> GaussianScene:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise SceneLoadError("malformed PLY header")
    header_lines = data[:end].decode("ascii", errors="replace").split("\n")
    payload = data[end + len(b"end_header\n"):]

    n = None
    props: list[tuple[str, str]] = []
    zoom_factor = 4.0
    fmt_ok = False
    for line in header_lines:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "binary_little_endian"
        elif parts[0] == "comment" and "zoom_factor_s=" in line:
            try:
                zoom_factor = float(line.split("zoom_factor_s=")[1])
            except ValueError:
                pass
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise SceneLoadError(f"unsupported element {parts[1]}")
            n = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if not fmt_ok:
        raise SceneLoadError("scene PLY must be binary_little_endian")
    if n is None:
        raise SceneLoadError("missing vertex element")

    type_map = {"float": "<f4", "int": "<i4", "uint": "<u4", "uchar": "u1",
                "float32": "<f4", "int32": "<i4", "double": "<f8"}
    try:
        dtype = np.dtype([(name, type_map[t]) for t, name in props])
    except KeyError as exc:
        raise SceneLoadError(f"unsupported property type {exc}") from exc
    if len(payload) < dtype.itemsize * n:
        raise SceneLoadError(
            f"truncated payload: need {dtype.itemsize * n} bytes, "
            f"have {len(payload)}")
    rows = np.frombuffer(payload[:dtype.itemsize * n], dtype=dtype)
    names = {name for _, name in props}

    required = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
                "rot_3"}
    missing = required - names
    if missing:
        raise SceneLoadError(f"missing properties: {sorted(missing)}")

    rest_names = sorted((nm for nm in names if nm.startswith("f_rest_")),
                        key=lambda s: int(s.split("_")[-1]))
    b = 1 + len(rest_names) // 3
    degree = sh_degree_from_count(b)

    scene = GaussianScene(sh_degree=degree,
                          lod_config=LodConfig(zoom_factor_s=zoom_factor))
    get = lambda *cols: np.stack([rows[c].astype(np.float64) for c in cols], axis=1)
    scene.centers = get("x", "y", "z")
    scene.log_scales = get("scale_0", "scale_1", "scale_2")
    scene.rotations = get("rot_0", "rot_1", "rot_2", "rot_3")
    scene.opacity_logits = rows["opacity"].astype(np.float64)
    sh = np.zeros((n, b, 3))
    sh[:, 0, :] = get("f_dc_0", "f_dc_1", "f_dc_2")
    if rest_names:
        rest = np.stack([rows[nm].astype(np.float64) for nm in rest_names],
                        axis=1)
        sh[:, 1:, :] = rest.reshape(n, 3, b - 1).transpose(0, 2, 1)
    scene.sh_coeffs = sh

    if "lod_layer" in names and "psi_ref" in names:
        scene.lod_layer = rows["lod_layer"].astype(np.int32)
        scene.psi_ref = rows["psi_ref"].astype(np.float64)
    else:
        logger.warning("PLY lacks LoD extension properties; defaulting to "
                       "lod_layer=0, psi_ref=1.0")
        scene.lod_layer = np.zeros(n, dtype=np.int32)
        scene.psi_ref = np.ones(n)

    # validate, naming the first offending primitive
    norms = np.linalg.norm(scene.rotations, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
    if len(bad):
        raise SceneLoadError(
            f"primitive {int(bad[0])}: quaternion norm {norms[bad[0]]:.3g}")
    for name, arr in (("center", scene.centers), ("scale", scene.log_scales),
                      ("opacity", scene.opacity_logits), ("sh", scene.sh_coeffs)):
        finite = np.isfinite(arr).reshape(n, -1).all(axis=1)
        if not finite.all():
            raise SceneLoadError(
                f"primitive {int(np.flatnonzero(~finite)[0])}: non-finite {name}")
    bad = np.flatnonzero(scene.psi_ref <= 0)
    if len(bad):
        raise SceneLoadError(f"primitive {int(bad[0])}: psi_ref <= 0")
    if n and scene.lod_layer.min() < 0:
        raise SceneLoadError(
            f"primitive {int(np.argmin(scene.lod_layer))}: negative lod_layer")

    n_layers = int(scene.lod_layer.max()) + 1 if n else 0
    scene.layers = [LodLayer(index=i, zoom_level=i, frozen=i < n_layers - 1)
                    for i in range(n_layers)]
    return scene


def read_scene(path) -> GaussianScene:
    return scene_from_ply_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# cameras JSON


_CAMERA_KEYS = {"id", "width", "height", "fx", "fy", "cx", "cy", "rotation",
                "translation", "near", "far"}


def write_cameras(path, cameras: list[Camera]):
    objs = []
    for cam in cameras:
        objs.append({
            "id": cam.id, "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "rotation": cam.rotation_wc.reshape(9).tolist(),
            "translation": cam.translation_wc.tolist(),
            "near": cam.near, "far": cam.far,
        })
    atomic_write_text(path, json.dumps(objs, indent=2) + "\n")


def read_cameras(path) -> list[Camera]:
    try:
        objs = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneLoadError(f"cannot read cameras: {exc}") from exc
    if not isinstance(objs, list):
        raise SceneLoadError("camera file must contain a JSON array")
    cameras = []
    for i, obj in enumerate(objs):
        unknown = set(obj) - _CAMERA_KEYS
        if "distortion" in obj and any(np.asarray(obj["distortion"]).ravel()):
            raise SceneLoadError(
                f"camera {i}: distortion coefficients are not supported "
                "(pinhole model only)")
        unknown.discard("distortion")
        if unknown:
            logger.warning("camera %d: ignoring unknown keys %s", i,
                           sorted(unknown))
        try:
            rot = np.asarray(obj["rotation"], dtype=np.float64).reshape(3, 3)
            trans = np.asarray(obj["translation"], dtype=np.float64).reshape(3)
        except (KeyError, ValueError) as exc:
            raise SceneLoadError(f"camera {i}: bad pose: {exc}") from exc
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > 1e-6:
            raise SceneLoadError(
                f"camera {i}: rotation not orthonormal (error {err:.3g})")
        if np.linalg.det(rot) < 0:
            raise SceneLoadError(f"camera {i}: rotation has determinant -1")
        # project to the nearest orthonormal matrix so downstream math sees
        # an exactly rigid pose
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        if "near" not in obj or "far" not in obj:
            logger.warning("camera %d: missing near/far, using defaults", i)
        try:
            cameras.append(Camera(
                fx=float(obj["fx"]), fy=float(obj["fy"]),
                cx=float(obj["cx"]), cy=float(obj["cy"]),
                width=int(obj["width"]), height=int(obj["height"]),
                rotation_wc=rot, translation_wc=trans,
                near=float(obj.get("near", DEFAULT_NEAR)),
                far=float(obj.get("far", DEFAULT_FAR)),
                id=str(obj.get("id", i))))
        except (KeyError, ValueError, TypeError) as exc:
            raise SceneLoadError(f"camera {i}: {exc}") from exc
        except Exception as exc:
            raise SceneLoadError(f"camera {i}: {exc}") from exc
    return cameras


# ---------------------------------------------------------------------------
# config files: `key = value` lines with # comments


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneLoadError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def emit_config(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def read_config(path) -> dict:
    return parse_config(Path(path).read_text())


def write_config(path, mapping: dict):
    atomic_write_text(path, emit_config(mapping))


# ---------------------------------------------------------------------------
# images and depth maps


def write_image(path, image: ImageBuffer):
    atomic_write_bytes(path, pngcodec.image_to_png_bytes(image))


def read_image(path) -> ImageBuffer:
    return pngcodec.png_bytes_to_image(Path(path).read_bytes())


def write_depth(path, depth: DepthMap):
    import io
    buf = io.BytesIO()
    np.save(buf, depth.data)
    atomic_write_bytes(path, buf.getvalue())


def read_depth(path) -> DepthMap:
    return DepthMap(np.load(path))


# ---------------------------------------------------------------------------
# sparse points PLY (init input)


def read_points_ply(path):
    """xyz (+ optional uchar rgb) from an ascii or binary PLY.

    Returns (points (N,3) float64, colors (N,3) float64 in [0,1] or None).
    """
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise SceneLoadError("malformed points PLY")
    header = data[:end].decode("ascii", errors="replace").split("\n")
    payload = data[end + len(b"end_header\n"):]
    fmt = None
    n = None
    props = []
    for line in header:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property" and n is not None and props is not None:
            props.append((parts[1], parts[2]))
        elif parts[0] == "element" and n is not None:
            break
    if n is None or fmt is None:
        raise SceneLoadError("points PLY missing vertex element")

    names = [p[1] for p in props]
    if fmt == "ascii":
        rows = np.loadtxt([l for l in payload.decode().split("\n") if l.strip()][:n],
                          ndmin=2)
        table = {nm: rows[:, i] for i, nm in enumerate(names)}
    elif fmt == "binary_little_endian":
        type_map = {"float": "<f4", "double": "<f8", "uchar": "u1",
                    "int": "<i4", "uint": "<u4", "float32": "<f4"}
        dtype = np.dtype([(nm, type_map[t]) for t, nm in props])
        rows = np.frombuffer(payload[:dtype.itemsize * n], dtype=dtype)
        if len(rows) < n:
            raise SceneLoadError("truncated points PLY")
        table = {nm: rows[nm] for nm in names}
    else:
        raise SceneLoadError(f"unsupported points PLY format {fmt}")

    try:
        pts = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
    except KeyError as exc:
        raise SceneLoadError(f"points PLY missing {exc}") from exc
    colors = None
    if all(k in table for k in ("red", "green", "blue")):
        colors = np.stack([table["red"], table["green"], table["blue"]],
                          axis=1).astype(np.float64)
        if colors.max() > 1.0:
            colors = colors / 255.0
    return pts, colors
