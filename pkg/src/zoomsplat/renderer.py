"""Tile-based forward rasterizer and its analytic backward pass.

Primitives are projected to screen space, binned into tiles by their
footprint ellipse, depth-sorted, and alpha-blended front to back with
LoD-modulated opacity. The backward pass recomputes forward intermediates
per tile (recompute-over-store) and reduces per-tile partial gradients in
tile-index order, so results are bit-identical across worker counts.

A correctness-first global-sort reference blend (`reference_render`) is kept
in-tree as the oracle for the tiled path.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .geometry import (
    Camera,
    DepthMap,
    ImageBuffer,
    covariances_from_params,
    project_all,
    quat_rot_jacobians,
    quat_to_rot,
    sh_basis,
    sh_basis_gradients,
)
from .lod import GaussianScene, layer_weights


@dataclass
class RenderOptions:
    background_color: tuple = (0.0, 0.0, 0.0)
    tile_size: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    depth_alpha_floor: float = 1e-3
    transmittance_floor: float = 1e-4
    footprint_sigma: float | None = 3.0   # per-pixel cutoff radius in sigmas
    lod_enabled: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.tile_size < 1:
            raise InvalidParameterError("tile_size must be >= 1")
        if not (0.0 <= self.alpha_cutoff < 1.0):
            raise InvalidParameterError("alpha_cutoff must be in [0, 1)")

    def smooth(self) -> "RenderOptions":
        """Copy with every hard cutoff disabled; the render becomes a smooth
        function of its parameters (used by gradient verification)."""
        return RenderOptions(
            background_color=self.background_color,
            tile_size=self.tile_size,
            alpha_cutoff=0.0,
            depth_alpha_floor=self.depth_alpha_floor,
            transmittance_floor=0.0,
            footprint_sigma=None,
            lod_enabled=self.lod_enabled,
            workers=self.workers,
        )


@dataclass
class RenderOutput:
    color: ImageBuffer
    depth: DepthMap
    alpha: ImageBuffer


@dataclass
class ParamGradients:
    """Per-primitive parameter gradients; frozen-layer rows are reported but
    must never be applied."""

    centers: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    @classmethod
    def zeros_like(cls, scene: GaussianScene) -> "ParamGradients":
        return cls(
            centers=np.zeros_like(scene.centers),
            log_scales=np.zeros_like(scene.log_scales),
            rotations=np.zeros_like(scene.rotations),
            opacity_logits=np.zeros_like(scene.opacity_logits),
            sh_coeffs=np.zeros_like(scene.sh_coeffs),
        )


@dataclass
class BlendRecords:
    """Per-pixel blending records: which primitives contributed, with what
    blend weight w = T * alpha, at what camera depth."""

    height: int
    width: int
    prim_ids: list          # per-pixel int arrays
    weights: list           # per-pixel float arrays (T * alpha)
    alphas: list
    depths: list
    alpha_image: np.ndarray
    scene: GaussianScene = field(repr=False, default=None)
    camera: Camera = field(repr=False, default=None)
    options: RenderOptions = field(repr=False, default=None)

    def at(self, row: int, col: int) -> dict:
        i = row * self.width + col
        return {
            "prim_ids": self.prim_ids[i],
            "weights": self.weights[i],
            "alphas": self.alphas[i],
            "depths": self.depths[i],
        }


# ---------------------------------------------------------------------------
# preparation shared by the tiled and reference paths


@dataclass
class _Prepared:
    ids: np.ndarray          # visible primitive ids, depth-sorted (ties by id)
    mean2d: np.ndarray       # (K,2)
    depth: np.ndarray        # (K,)
    qa: np.ndarray           # precision entries: m2 = qa dx^2 + 2 qb dx dy + qc dy^2
    qb: np.ndarray
    qc: np.ndarray
    radius: np.ndarray       # binning radius in px (inf when footprint disabled)
    oeff: np.ndarray         # opacity * lod weight
    colors: np.ndarray       # (K,3) clamped SH colors
    lod_w: np.ndarray        # (K,)
    cov2d: np.ndarray        # (K,2,2)
    t_cam: np.ndarray        # (K,3)
    M: np.ndarray            # (K,2,3) Jacobian * rotation
    cov3d: np.ndarray        # (K,3,3)
    sh_f: np.ndarray         # (K,3) pre-clamp SH value + offset
    view_dir: np.ndarray     # (K,3)
    view_dist: np.ndarray    # (K,)


def _prepare(scene: GaussianScene, camera: Camera, options: RenderOptions) -> _Prepared:
    n = len(scene)
    if n == 0:
        z = np.zeros(0)
        return _Prepared(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), z, z, z, z,
                         z, z, np.zeros((0, 3)), z, np.zeros((0, 2, 2)),
                         np.zeros((0, 3)), np.zeros((0, 2, 3)), np.zeros((0, 3, 3)),
                         np.zeros((0, 3)), np.zeros((0, 3)), z)

    w = layer_weights(scene, camera) if options.lod_enabled else np.ones(n)
    oeff = scene.opacities() * w
    cov3d = covariances_from_params(scene.log_scales, scene.rotations)
    proj = project_all(scene.centers, cov3d, camera)
    visible = proj["visible"] & (oeff > 0.0)
    ids = np.flatnonzero(visible)
    order = np.lexsort((ids, proj["depth"][ids]))
    ids = ids[order]

    cov2d = proj["cov2d"][ids]
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    if np.any(det <= 0):
        raise RuntimeError("projected covariance singular after flooring; "
                           "internal invariant violated")
    qa, qb, qc = c / det, -b / det, a / det

    if options.footprint_sigma is None:
        radius = np.full(len(ids), np.inf)
    else:
        mid = 0.5 * (a + c)
        disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
        radius = options.footprint_sigma * np.sqrt(mid + disc)

    diff = scene.centers[ids] - camera.position[None, :]
    dist = np.linalg.norm(diff, axis=1)
    view_dir = diff / dist[:, None]
    basis = sh_basis(view_dir, scene.sh_degree)
    sh_f = np.einsum("kb,kbc->kc", basis, scene.sh_coeffs[ids]) + 0.5
    colors = np.maximum(sh_f, 0.0)

    return _Prepared(
        ids=ids, mean2d=proj["mean2d"][ids], depth=proj["depth"][ids],
        qa=qa, qb=qb, qc=qc, radius=radius, oeff=oeff[ids], colors=colors,
        lod_w=w[ids], cov2d=cov2d, t_cam=proj["t_cam"][ids], M=proj["M"][ids],
        cov3d=cov3d[ids], sh_f=sh_f, view_dir=view_dir, view_dist=dist,
    )


def sort_and_bin(prep: _Prepared, camera: Camera, options: RenderOptions) -> list:
    """Per-tile depth-ordered primitive lists (positions into ``prep`` order).

    A primitive lands in every tile whose rectangle intersects the axis-
    aligned box around its footprint ellipse.
    """
    ts = options.tile_size
    nx = (camera.width + ts - 1) // ts
    ny = (camera.height + ts - 1) // ts
    bins: list[list[int]] = [[] for _ in range(nx * ny)]
    k = len(prep.ids)
    if k == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(nx * ny)]
    u, v = prep.mean2d[:, 0], prep.mean2d[:, 1]
    r = prep.radius
    x0 = np.clip(np.floor((u - r) / ts), 0, nx - 1).astype(np.int64)
    x1 = np.clip(np.floor((u + r) / ts), 0, nx - 1).astype(np.int64)
    y0 = np.clip(np.floor((v - r) / ts), 0, ny - 1).astype(np.int64)
    y1 = np.clip(np.floor((v + r) / ts), 0, ny - 1).astype(np.int64)
    # cull footprints entirely outside the image
    keep = (u + r >= 0) & (u - r <= camera.width) & \
           (v + r >= 0) & (v - r <= camera.height)
    for i in range(k):
        if not keep[i]:
            continue
        for ty in range(y0[i], y1[i] + 1):
            row = ty * nx
            for tx in range(x0[i], x1[i] + 1):
                bins[row + tx].append(i)
    return [np.asarray(b, dtype=np.int64) for b in bins]


def _tile_pixels(tile_idx: int, nx: int, ts: int, width: int, height: int):
    ty, tx = divmod(tile_idx, nx)
    xs = np.arange(tx * ts, min((tx + 1) * ts, width))
    ys = np.arange(ty * ts, min((ty + 1) * ts, height))
    px = (xs[None, :] + 0.5).repeat(len(ys), axis=0).ravel()
    py = (ys[:, None] + 0.5).repeat(len(xs), axis=1).ravel()
    return xs, ys, px, py


def _tile_alpha(prep: _Prepared, sel: np.ndarray, px: np.ndarray, py: np.ndarray,
                options: RenderOptions):
    """Per-contribution alpha and transmittance for one tile.

    Returns (dx, dy, m2, alpha_eff, T, w, bg_T) with leading axis over the
    tile's primitive list and trailing axis over pixels.
    """
    dx = px[None, :] - prep.mean2d[sel, 0][:, None]
    dy = py[None, :] - prep.mean2d[sel, 1][:, None]
    m2 = (prep.qa[sel][:, None] * dx * dx
          + 2.0 * prep.qb[sel][:, None] * dx * dy
          + prep.qc[sel][:, None] * dy * dy)
    alpha = prep.oeff[sel][:, None] * np.exp(-0.5 * m2)
    include = np.ones(alpha.shape, dtype=bool)
    if options.footprint_sigma is not None:
        include &= m2 <= options.footprint_sigma ** 2
    if options.alpha_cutoff > 0.0:
        include &= alpha >= options.alpha_cutoff
    alpha_eff = np.where(include, alpha, 0.0)

    kk, pp = alpha_eff.shape
    T = np.empty((kk + 1, pp))
    T[0] = 1.0
    np.cumprod(1.0 - alpha_eff, axis=0, out=T[1:])
    if options.transmittance_floor > 0.0:
        live = T[:kk] >= options.transmittance_floor
        n_inc = live.sum(axis=0)
        w = np.where(live, T[:kk] * alpha_eff, 0.0)
    else:
        n_inc = np.full(pp, kk)
        w = T[:kk] * alpha_eff
    bg_T = T[n_inc, np.arange(pp)]
    return dx, dy, m2, alpha_eff, T, w, bg_T


def _forward_tile(prep: _Prepared, sel: np.ndarray, px: np.ndarray, py: np.ndarray,
                  options: RenderOptions, bg: np.ndarray, want_geo: bool = False):
    if len(sel) == 0:
        p = len(px)
        return (np.tile(bg, (p, 1)), np.zeros(p), np.zeros(p),
                np.zeros(p), None)
    _, _, _, alpha_eff, T, w, bg_T = _tile_alpha(prep, sel, px, py, options)
    color = np.einsum("kp,kc->pc", w, prep.colors[sel]) + bg_T[:, None] * bg[None, :]
    a_sum = w.sum(axis=0)
    d_sum = (w * prep.depth[sel][:, None]).sum(axis=0)
    geo_p = np.zeros(len(px))
    if want_geo:
        depths = prep.depth[sel][:, None]
        wd = w * depths
        pw = np.cumsum(w, axis=0) - w
        pwd = np.cumsum(wd, axis=0) - wd
        geo_p = (w * (depths * pw - pwd)).sum(axis=0) * 2.0
    return color, a_sum, d_sum, geo_p, (alpha_eff, T, w, bg_T)


def render(scene: GaussianScene, camera: Camera, options: RenderOptions | None = None,
           return_records: bool = False, want_geo: bool = False):
    """Forward render: color over background, accumulated alpha, and
    alpha-weighted expected depth (0 where alpha is below the floor).

    With ``want_geo`` returns ``(output, geo_value)`` where geo_value is the
    depth-distortion term averaged over pixels with alpha > 0.5; with
    ``return_records`` returns ``(output, BlendRecords)``.
    """
    options = options or RenderOptions()
    bg = np.asarray(options.background_color, dtype=np.float64).reshape(3)
    prep = _prepare(scene, camera, options)
    bins = sort_and_bin(prep, camera, options)

    h, w_img = camera.height, camera.width
    color = np.zeros((h, w_img, 3))
    alpha = np.zeros((h, w_img))
    dsum = np.zeros((h, w_img))
    geo_img = np.zeros((h, w_img))
    ts = options.tile_size
    nx = (w_img + ts - 1) // ts

    records = None
    if return_records:
        records = BlendRecords(h, w_img, [None] * (h * w_img), [None] * (h * w_img),
                               [None] * (h * w_img), [None] * (h * w_img),
                               alpha_image=None, scene=scene, camera=camera,
                               options=options)

    def run_tile(t):
        xs, ys, px, py = _tile_pixels(t, nx, ts, w_img, h)
        return t, xs, ys, _forward_tile(prep, bins[t], px, py, options, bg,
                                        want_geo=want_geo)

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            results = list(pool.map(run_tile, range(len(bins))))
    else:
        results = [run_tile(t) for t in range(len(bins))]

    for t, xs, ys, (c_tile, a_tile, d_tile, geo_tile, extras) in results:
        sl = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
        shape = (len(ys), len(xs))
        color[sl] = c_tile.reshape(shape + (3,))
        alpha[sl] = a_tile.reshape(shape)
        dsum[sl] = d_tile.reshape(shape)
        geo_img[sl] = geo_tile.reshape(shape)
        if return_records:
            sel = bins[t]
            for j, (r, cidx) in enumerate(
                    (r, c) for r in ys for c in xs):
                i = r * w_img + cidx
                if len(sel) == 0 or extras is None:
                    nz = np.zeros(0, dtype=np.int64)
                else:
                    nz = np.flatnonzero(extras[2][:, j] > 0.0)
                if len(nz):
                    records.prim_ids[i] = prep.ids[sel[nz]]
                    records.weights[i] = extras[2][nz, j]
                    records.alphas[i] = extras[0][nz, j]
                    records.depths[i] = prep.depth[sel[nz]]
                else:
                    records.prim_ids[i] = np.zeros(0, dtype=np.int64)
                    records.weights[i] = np.zeros(0)
                    records.alphas[i] = np.zeros(0)
                    records.depths[i] = np.zeros(0)

    depth = np.where(alpha >= options.depth_alpha_floor,
                     np.divide(dsum, alpha, out=np.zeros_like(dsum),
                               where=alpha > 0.0),
                     0.0)
    out = RenderOutput(color=ImageBuffer(color), depth=DepthMap(depth),
                       alpha=ImageBuffer(alpha[:, :, None]))
    if return_records:
        records.alpha_image = alpha
        return out, records
    if want_geo:
        selected = alpha > 0.5
        n_sel = int(selected.sum())
        geo_value = float(geo_img[selected].sum() / n_sel) if n_sel else 0.0
        return out, geo_value
    return out


def reference_render(scene: GaussianScene, camera: Camera,
                     options: RenderOptions | None = None) -> RenderOutput:
    """Global-sort single-threaded blend over the whole image; the oracle the
    tiled renderer is tested against."""
    options = options or RenderOptions()
    bg = np.asarray(options.background_color, dtype=np.float64).reshape(3)
    prep = _prepare(scene, camera, options)
    h, w_img = camera.height, camera.width
    px = (np.arange(w_img)[None, :] + 0.5).repeat(h, axis=0).ravel()
    py = (np.arange(h)[:, None] + 0.5).repeat(w_img, axis=1).ravel()

    T = np.ones(h * w_img)
    color = np.zeros((h * w_img, 3))
    a_sum = np.zeros(h * w_img)
    d_sum = np.zeros(h * w_img)
    fp2 = None if options.footprint_sigma is None else options.footprint_sigma ** 2
    for k in range(len(prep.ids)):
        dx = px - prep.mean2d[k, 0]
        dy = py - prep.mean2d[k, 1]
        m2 = prep.qa[k] * dx * dx + 2.0 * prep.qb[k] * dx * dy + prep.qc[k] * dy * dy
        alpha = prep.oeff[k] * np.exp(-0.5 * m2)
        include = np.ones(alpha.shape, dtype=bool)
        if fp2 is not None:
            include &= m2 <= fp2
        if options.alpha_cutoff > 0.0:
            include &= alpha >= options.alpha_cutoff
        if options.transmittance_floor > 0.0:
            include &= T >= options.transmittance_floor
        alpha = np.where(include, alpha, 0.0)
        wgt = T * alpha
        color += wgt[:, None] * prep.colors[k][None, :]
        a_sum += wgt
        d_sum += wgt * prep.depth[k]
        T = T * (1.0 - alpha)
    color += T[:, None] * bg[None, :]

    color = color.reshape(h, w_img, 3)
    a_img = a_sum.reshape(h, w_img)
    d_img = d_sum.reshape(h, w_img)
    depth = np.where(a_img >= options.depth_alpha_floor,
                     np.divide(d_img, a_img, out=np.zeros_like(d_img),
                               where=a_img > 0.0),
                     0.0)
    return RenderOutput(color=ImageBuffer(color), depth=DepthMap(depth),
                        alpha=ImageBuffer(a_img[:, :, None]))


# ---------------------------------------------------------------------------
# backward


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.where(np.abs(den) > 1e-12, num / np.where(den == 0.0, 1.0, den), 0.0)


def _backward_tile(prep: _Prepared, sel: np.ndarray, px, py, options: RenderOptions,
                   bg: np.ndarray, g_color_pix: np.ndarray, geo_weight: float,
                   geo_norm: float):
    """Per-tile gradient partials w.r.t. per-contribution quantities.

    Returns (partials dict keyed by prep-row index array, geo_value_sum).
    """
    dx, dy, m2, alpha_eff, T, w, bg_T = _tile_alpha(prep, sel, px, py, options)
    kk = len(sel)
    colors = prep.colors[sel]
    depths = prep.depth[sel]
    one_minus = 1.0 - alpha_eff
    Tk = T[:kk]

    # color path: dC/dalpha_k = T_k c_k - S_k / (1 - alpha_k)
    wc = w[:, :, None] * colors[:, None, :]
    tail = np.flip(np.cumsum(np.flip(wc, axis=0), axis=0), axis=0) - wc
    tail += bg_T[None, :, None] * bg[None, None, :]
    dC_da = Tk[:, :, None] * colors[:, None, :] - _safe_div(tail, one_minus[:, :, None])
    g_alpha = np.einsum("kpc,pc->kp", dC_da, g_color_pix)
    g_color_prim = np.einsum("kp,pc->kc", w, g_color_pix)
    g_depth_prim = np.zeros(kk)
    geo_value = 0.0

    if geo_weight != 0.0 and geo_norm > 0:
        a_sum = w.sum(axis=0)
        sel_pix = a_sum > 0.5
        if np.any(sel_pix):
            wd = w * depths[:, None]
            pw = np.cumsum(w, axis=0) - w          # sum_{j<k} w_j
            pwd = np.cumsum(wd, axis=0) - wd
            tw = w.sum(axis=0)
            twd = wd.sum(axis=0)
            per_pix_v = (w * (depths[:, None] * pw - pwd)).sum(axis=0) * 2.0
            geo_value = float(per_pix_v[sel_pix].sum())

            gamma = (2.0 / geo_norm) * (
                2.0 * depths[:, None] * pw - 2.0 * pwd
                + twd[None, :] - depths[:, None] * tw[None, :])
            gamma = np.where(sel_pix[None, :], gamma, 0.0)
            g_d = (2.0 / geo_norm) * w * (2.0 * pw + w - tw[None, :])
            g_d = np.where(sel_pix[None, :], g_d, 0.0)

            gw = gamma * w
            tail_g = np.flip(np.cumsum(np.flip(gw, axis=0), axis=0), axis=0) - gw
            g_alpha = g_alpha + geo_weight * (
                gamma * Tk - _safe_div(tail_g, one_minus))
            g_depth_prim = geo_weight * g_d.sum(axis=1)

    included = w > 0.0
    g_alpha = np.where(included, g_alpha, 0.0)

    g_oeff = (g_alpha * np.exp(-0.5 * m2)).sum(axis=1)
    g_m2 = g_alpha * (-0.5 * alpha_eff)
    qa, qb, qc = prep.qa[sel], prep.qb[sel], prep.qc[sel]
    g_u = (-2.0 * g_m2 * (qa[:, None] * dx + qb[:, None] * dy)).sum(axis=1)
    g_v = (-2.0 * g_m2 * (qb[:, None] * dx + qc[:, None] * dy)).sum(axis=1)
    gQ = np.empty((kk, 2, 2))
    gQ[:, 0, 0] = (g_m2 * dx * dx).sum(axis=1)
    gQ[:, 0, 1] = gQ[:, 1, 0] = (g_m2 * dx * dy).sum(axis=1)
    gQ[:, 1, 1] = (g_m2 * dy * dy).sum(axis=1)

    return {
        "sel": sel,
        "g_color": g_color_prim,
        "g_oeff": g_oeff,
        "g_mean2d": np.stack([g_u, g_v], axis=1),
        "gQ": gQ,
        "g_depth": g_depth_prim,
    }, geo_value


def render_backward(scene: GaussianScene, camera: Camera, options: RenderOptions,
                    grad_color, geo_weight: float = 0.0,
                    forward_output: RenderOutput | None = None):
    """Analytic gradients of (grad_color . rendered color + geo_weight * L_geo)
    with respect to every primitive parameter.

    ``grad_color`` is an (H, W, 3) array or ImageBuffer matching the camera.
    The LoD weight is treated as a constant factor: its own dependence on the
    primitive center is dropped from the center gradient. Returns
    ``(ParamGradients, geo_value, RenderOutput)``; frozen-layer gradients are
    reported but must never be applied.
    """
    options = options or RenderOptions()
    g_img = grad_color.data if isinstance(grad_color, ImageBuffer) else \
        np.asarray(grad_color, dtype=np.float64)
    if g_img.shape != (camera.height, camera.width, 3):
        raise InvalidParameterError(
            f"grad_color shape {g_img.shape} does not match the camera "
            f"({camera.height}, {camera.width}, 3)")

    bg = np.asarray(options.background_color, dtype=np.float64).reshape(3)
    prep = _prepare(scene, camera, options)
    bins = sort_and_bin(prep, camera, options)
    h, w_img = camera.height, camera.width
    ts = options.tile_size
    nx = (w_img + ts - 1) // ts

    # forward pass for outputs and the geo pixel selection
    output = forward_output if forward_output is not None \
        else render(scene, camera, options)
    grads = ParamGradients.zeros_like(scene)
    k = len(prep.ids)
    if k == 0:
        return grads, 0.0, output
    geo_norm = float((output.alpha.data[:, :, 0] > 0.5).sum()) if geo_weight != 0.0 else 0.0

    acc_color = np.zeros((k, 3))
    acc_oeff = np.zeros(k)
    acc_mean2d = np.zeros((k, 2))
    acc_Q = np.zeros((k, 2, 2))
    acc_depth = np.zeros(k)
    geo_total = 0.0

    def run_tile(t):
        sel = bins[t]
        if len(sel) == 0:
            return t, None, 0.0
        xs, ys, px, py = _tile_pixels(t, nx, ts, w_img, h)
        g_tile = g_img[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1].reshape(-1, 3)
        partial, geo_v = _backward_tile(prep, sel, px, py, options, bg,
                                        g_tile, geo_weight, geo_norm)
        return t, partial, geo_v

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            results = list(pool.map(run_tile, range(len(bins))))
    else:
        results = [run_tile(t) for t in range(len(bins))]

    for t, partial, geo_v in sorted(results, key=lambda r: r[0]):
        geo_total += geo_v
        if partial is None:
            continue
        sel = partial["sel"]
        np.add.at(acc_color, sel, partial["g_color"])
        np.add.at(acc_oeff, sel, partial["g_oeff"])
        np.add.at(acc_mean2d, sel, partial["g_mean2d"])
        np.add.at(acc_Q, sel, partial["gQ"])
        np.add.at(acc_depth, sel, partial["g_depth"])

    geo_value = geo_total / geo_norm if geo_norm > 0 else 0.0

    # chain per-primitive accumulators back to the parameters
    Q = np.empty((k, 2, 2))
    Q[:, 0, 0] = prep.qa
    Q[:, 0, 1] = Q[:, 1, 0] = prep.qb
    Q[:, 1, 1] = prep.qc
    gC2d = -np.einsum("kij,kjl,klm->kim", Q, acc_Q, Q)
    g_cov3d = np.einsum("kil,kij,kjm->klm", prep.M, gC2d, prep.M)
    g_M = 2.0 * np.einsum("kij,kjl,klm->kim", gC2d, prep.M, prep.cov3d)
    g_J = g_M @ camera.rotation_wc.T

    t_cam = prep.t_cam
    tz = t_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    g_t = np.zeros((k, 3))
    g_t[:, 0] = g_J[:, 0, 2] * (-fx / tz**2)
    g_t[:, 1] = g_J[:, 1, 2] * (-fy / tz**2)
    g_t[:, 2] = (g_J[:, 0, 0] * (-fx / tz**2) + g_J[:, 1, 1] * (-fy / tz**2)
                 + g_J[:, 0, 2] * (2.0 * fx * t_cam[:, 0] / tz**3)
                 + g_J[:, 1, 2] * (2.0 * fy * t_cam[:, 1] / tz**3))
    g_t[:, 0] += acc_mean2d[:, 0] * fx / tz
    g_t[:, 1] += acc_mean2d[:, 1] * fy / tz
    g_t[:, 2] += (acc_mean2d[:, 0] * (-fx * t_cam[:, 0] / tz**2)
                  + acc_mean2d[:, 1] * (-fy * t_cam[:, 1] / tz**2))
    g_t[:, 2] += acc_depth
    g_center = g_t @ camera.rotation_wc

    # spherical harmonics
    clamp_open = prep.sh_f > 0.0
    g_f = acc_color * clamp_open
    basis = sh_basis(prep.view_dir, scene.sh_degree)
    g_sh = np.einsum("kb,kc->kbc", basis, g_f)
    basis_grad = sh_basis_gradients(prep.view_dir, scene.sh_degree)
    coeff_g = np.einsum("kbc,kc->kb", scene.sh_coeffs[prep.ids], g_f)
    g_dir = np.einsum("kb,kbd->kd", coeff_g, basis_grad)
    g_center += (g_dir - prep.view_dir *
                 np.einsum("kd,kd->k", prep.view_dir, g_dir)[:, None]) \
        / prep.view_dist[:, None]

    # covariance parameters
    rot = scene.rotations[prep.ids]
    R_q = quat_to_rot(rot)
    s2 = np.exp(2.0 * scene.log_scales[prep.ids])
    g_s2 = np.einsum("kij,kil,klj->kj", R_q, g_cov3d, R_q)
    g_ls = g_s2 * 2.0 * s2
    g_Rq = 2.0 * np.einsum("kij,kjl,kl->kil", g_cov3d, R_q, s2)
    dRdq = quat_rot_jacobians(rot)
    g_qhat = np.einsum("kim,kqim->kq", g_Rq, dRdq)
    g_q = g_qhat - rot * np.einsum("kq,kq->k", rot, g_qhat)[:, None]

    # opacity logit through sigmoid and the (constant) LoD weight
    sig = 1.0 / (1.0 + np.exp(-scene.opacity_logits[prep.ids]))
    g_logit = acc_oeff * prep.lod_w * sig * (1.0 - sig)

    ids = prep.ids
    grads.centers[ids] = g_center
    grads.log_scales[ids] = g_ls
    grads.rotations[ids] = g_q
    grads.opacity_logits[ids] = g_logit
    grads.sh_coeffs[ids] = g_sh
    return grads, geo_value, output
