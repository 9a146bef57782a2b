"""Orthographic detector, ray integration, attenuation and render driver.

Sampling scheme: rays carry a global equidistant grid t_j = (j + 1/2) * step
anchored at the emission plane; a sample is evaluated iff t_j falls inside
the union of the leaf box intervals hit by the ray (clamped to t >= 0).
Restricting to the leaf intervals is result-identical to sampling the whole
depth because samples outside every leaf box lie outside every element and
contribute exactly zero; the global anchoring makes the tree-accelerated,
brute-force and multi-worker paths produce bitwise-identical images.

Two execution paths share all numeric kernels: ``integrate_ray`` follows the
per-ray description literally (traverse, order candidates by the linear
entry guess, first-success point location), while ``render`` batches the
same arithmetic over all rays of a row block and resolves multiply-claimed
samples with the same ordering key.  Both produce bitwise-equal images.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from .locate import NewtonSettings, membership_test
from .mesh import Mesh, NodalField, interpolate_values
from .raycast import Ray, slab_intervals, tet_entry, traverse
from .spatial import Aabb, ObbTree, build_obb_tree, element_bounding_points, model_aabb

FACE_SELECTORS = {
    "+x": (0, 1.0),
    "-x": (0, -1.0),
    "+y": (1, 1.0),
    "-y": (1, -1.0),
    "+z": (2, 1.0),
    "-z": (2, -1.0),
}

# margin factor for the per-element box prefilter; covers the in-hull
# tolerance shell and the Newton residual bound with room to spare
ELEMENT_BOX_MARGIN = 1e-6


@dataclass(frozen=True)
class Detector:
    """Orthographic emission plane with one ray per pixel center."""

    origin: np.ndarray  # center of pixel (0, 0)
    axis_u: np.ndarray
    axis_v: np.ndarray
    normal: np.ndarray  # unit ray direction
    nu: int
    nv: int
    pitch: float

    def __post_init__(self):
        for name in ("origin", "axis_u", "axis_v", "normal"):
            v = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if v.shape != (3,) or not np.isfinite(v).all():
                raise ValueError(f"detector {name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        if self.nu < 1 or self.nv < 1:
            raise ValueError("detector needs at least one pixel per axis")
        if not self.pitch > 0.0:
            raise ValueError("pixel pitch must be positive")
        for a, b in ((self.axis_u, self.axis_v), (self.axis_u, self.normal), (self.axis_v, self.normal)):
            if abs(float(np.dot(a, b))) > 1e-12:
                raise ValueError("detector axes must be mutually orthogonal")
        for a in (self.axis_u, self.axis_v, self.normal):
            if abs(float(np.linalg.norm(a)) - 1.0) > 1e-12:
                raise ValueError("detector axes must be unit vectors")

    @property
    def n_rays(self) -> int:
        return self.nu * self.nv

    def pixel_origin(self, i: int, j: int) -> np.ndarray:
        return self.origin + (i * self.pitch) * self.axis_u + (j * self.pitch) * self.axis_v

    def ray(self, i: int, j: int) -> Ray:
        return Ray(self.pixel_origin(i, j), self.normal)


@dataclass(frozen=True)
class IntegrationSettings:
    step: float = 0.01
    max_leaf_elements: int = 10
    newton: NewtonSettings = dataclasses.field(default_factory=NewtonSettings)
    geom_tol: float = 1e-8

    def __post_init__(self):
        if not self.step > 0.0:
            raise ValueError("step must be positive")
        if self.max_leaf_elements < 1:
            raise ValueError("max_leaf_elements must be >= 1")
        if not self.geom_tol >= 0.0:
            raise ValueError("geom_tol must be non-negative")


@dataclass(frozen=True)
class AttenuationModel:
    """Maps projected density to a Beer-Lambert attenuation integral.

    identity: the mu integral is the projected density itself.
    linear:   mu = kappa * rho, applied after summation.
    table:    mu(rho) looked up per sample inside the integration; samples
              outside every element contribute zero attenuation.
    """

    variant: str = "identity"
    kappa: float = 1.0
    table_rho: np.ndarray | None = None
    table_mu: np.ndarray | None = None
    i_in: float = 1.0

    def __post_init__(self):
        if self.variant not in ("identity", "linear", "table"):
            raise ValueError(f"unknown attenuation variant {self.variant!r}")
        if self.variant == "linear" and not self.kappa >= 0.0:
            raise ValueError("kappa must be non-negative")
        if self.variant == "table":
            rho = np.asarray(self.table_rho, dtype=np.float64)
            mu = np.asarray(self.table_mu, dtype=np.float64)
            if rho.ndim != 1 or rho.shape != mu.shape or rho.size < 2:
                raise ValueError("lookup table needs >= 2 matching entries")
            if not (np.diff(rho) > 0.0).all():
                raise ValueError("lookup table densities must increase strictly")
            if not (np.isfinite(rho).all() and np.isfinite(mu).all()):
                raise ValueError("lookup table contains non-finite values")
            object.__setattr__(self, "table_rho", rho)
            object.__setattr__(self, "table_mu", mu)
        if not self.i_in > 0.0:
            raise ValueError("source intensity must be positive")

    def mu_of_rho(self, rho: np.ndarray) -> np.ndarray:
        return np.interp(rho, self.table_rho, self.table_mu)


def attenuate(projected_mu_integral: float, model: AttenuationModel):
    """Beer-Lambert transmitted intensity I_in * exp(-integral)."""
    return model.i_in * np.exp(-np.asarray(projected_mu_integral, dtype=np.float64))


@dataclass
class RenderStats:
    rays: int = 0
    samples: int = 0
    newton_iterations: int = 0
    non_converged: int = 0
    wall_time: float = 0.0

    def merge(self, other: "RenderStats") -> None:
        self.rays += other.rays
        self.samples += other.samples
        self.newton_iterations += other.newton_iterations
        self.non_converged += other.non_converged

    def to_text(self) -> str:
        return (
            f"rays = {self.rays}\n"
            f"samples = {self.samples}\n"
            f"newton_iterations = {self.newton_iterations}\n"
            f"non_converged = {self.non_converged}\n"
            f"wall_time_s = {self.wall_time:.3f}\n"
        )


@dataclass(frozen=True)
class ProjectionImage:
    """Per-pixel projected density (g/cm^2) and optional intensity grid."""

    density: np.ndarray  # (nv, nu)
    pitch: float
    intensity: np.ndarray | None = None
    stats: RenderStats = dataclasses.field(default_factory=RenderStats)

    def __post_init__(self):
        density = np.ascontiguousarray(np.asarray(self.density, dtype=np.float64))
        if density.ndim != 2:
            raise ValueError("density grid must be 2-d")
        if not np.isfinite(density).all():
            raise ValueError("density grid contains non-finite values")
        if (density < 0.0).any():
            raise ValueError("projected density must be non-negative")
        object.__setattr__(self, "density", density)

    @property
    def nv(self) -> int:
        return self.density.shape[0]

    @property
    def nu(self) -> int:
        return self.density.shape[1]


def make_detector(
    model_box: Aabb,
    face: str,
    rays_per_cm2: float | None = None,
    pitch: float | None = None,
    nu: int | None = None,
    nv: int | None = None,
) -> Detector:
    """Detector on a box face, grid centered and covering the face fully.

    Either ``rays_per_cm2`` (pixel pitch 1/sqrt of it, pixel counts from the
    face extents) or an explicit ``pitch``/``nu``/``nv`` grid must be given.
    Ray direction is the inward face normal.
    """
    if face not in FACE_SELECTORS:
        raise ValueError(
            f"invalid face {face!r}; expected one of {sorted(FACE_SELECTORS)}"
        )
    axis, sign = FACE_SELECTORS[face]
    if rays_per_cm2 is not None:
        if not rays_per_cm2 > 0.0:
            raise ValueError("rays_per_cm2 must be positive")
        pitch = 1.0 / math.sqrt(rays_per_cm2)
    if pitch is None or not pitch > 0.0:
        raise ValueError("either rays_per_cm2 or a positive pitch is required")
    u_ax = (axis + 1) % 3
    v_ax = (axis + 2) % 3
    if nu is None or nv is None:
        span_u = float(model_box.pmax[u_ax] - model_box.pmin[u_ax])
        span_v = float(model_box.pmax[v_ax] - model_box.pmin[v_ax])
        # guard so that an exact multiple does not gain a pixel from roundoff
        nu = max(1, math.ceil(span_u / pitch * (1.0 - 1e-12)))
        nv = max(1, math.ceil(span_v / pitch * (1.0 - 1e-12)))
    origin = np.zeros(3)
    origin[axis] = model_box.pmax[axis] if sign > 0 else model_box.pmin[axis]
    origin[u_ax] = 0.5 * float(model_box.pmin[u_ax] + model_box.pmax[u_ax]) - 0.5 * (nu - 1) * pitch
    origin[v_ax] = 0.5 * float(model_box.pmin[v_ax] + model_box.pmax[v_ax]) - 0.5 * (nv - 1) * pitch
    axis_u = np.zeros(3)
    axis_u[u_ax] = 1.0
    axis_v = np.zeros(3)
    axis_v[v_ax] = 1.0
    normal = np.zeros(3)
    normal[axis] = -sign
    return Detector(origin, axis_u, axis_v, normal, int(nu), int(nv), float(pitch))


def default_face(box: Aabb) -> str:
    """Emission face on the positive side of the longest box axis."""
    axis = int(np.argmax(box.extents))
    return ("+x", "+y", "+z")[axis]


def _grid_range(t_enter, t_exit, step: float):
    """Global-grid sample index range [j_lo, j_hi] inside an interval.

    Non-finite intervals (rays that miss a box via a zero-direction axis)
    yield an empty range.
    """
    a = np.maximum(t_enter, 0.0)
    with np.errstate(invalid="ignore"):
        lo = np.ceil(a / step - 0.5)
        hi = np.floor(t_exit / step - 0.5)
    bad = ~(np.isfinite(lo) & np.isfinite(hi))
    if np.any(bad):
        lo = np.where(bad, 1.0, lo)
        hi = np.where(bad, 0.0, hi)
    return lo.astype(np.int64), hi.astype(np.int64)


def _ragged_arange(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate arange(start, start+count) rows."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep = np.repeat(np.arange(len(counts)), counts)
    base = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.repeat(starts, counts) + (np.arange(total) - base[rep])


@dataclass
class RayIntegral:
    projected_density: float
    mu_integral: float | None
    samples: int
    newton_iterations: int
    non_converged: int


def integrate_ray(
    ray: Ray,
    tree: ObbTree,
    mesh: Mesh,
    field: NodalField,
    settings: IntegrationSettings,
    model: AttenuationModel | None = None,
) -> RayIntegral:
    """Projected density along one ray (reference per-ray path).

    Returns the discrete sum over located samples of step * rho; with a
    table attenuation model the per-sample mu(rho) sum is carried along.
    """
    if abs(float(np.linalg.norm(ray.direction)) - 1.0) > 1e-12:
        raise ValueError("integration expects a unit ray direction")
    want_mu = model is not None and model.variant == "table"
    hits = traverse(tree, ray)
    if not hits:
        return RayIntegral(0.0, 0.0 if want_mu else None, 0, 0, 0)

    # merge overlapping intervals (clamped to t >= 0); traverse orders by entry
    merged: list[list[float]] = []
    for node, interval in hits:
        a = max(interval.t_enter, 0.0)
        b = interval.t_exit
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])

    ts_parts = []
    for a, b in merged:
        j_lo, j_hi = _grid_range(np.float64(a), np.float64(b), settings.step)
        if j_hi >= j_lo:
            j = np.arange(int(j_lo), int(j_hi) + 1, dtype=np.int64)
            ts_parts.append((j + 0.5) * settings.step)
    if not ts_parts:
        return RayIntegral(0.0, 0.0 if want_mu else None, 0, 0, 0)
    ts = np.concatenate(ts_parts)
    points = ray.origin + ts[:, None] * ray.direction

    candidates = np.unique(np.concatenate([node.elements for node, _ in hits]))
    corners = mesh.nodes[mesh.elements[candidates, :4]]
    t_guess, _ = tet_entry(ray.origin, ray.direction, corners)
    order = np.lexsort((candidates, t_guess))
    candidates = candidates[order]

    n = ts.shape[0]
    rho = np.zeros(n)
    located = np.zeros(n, dtype=bool)
    newton_iters = 0
    non_conv = 0
    values = field.values
    for e in candidates:
        open_idx = np.flatnonzero(~located)
        if open_idx.size == 0:
            break
        inside, xi, iters, converged = membership_test(
            mesh, int(e), points[open_idx], settings.newton, settings.geom_tol
        )
        newton_iters += int(iters.sum())
        non_conv += int(np.count_nonzero(~converged))
        if inside.any():
            hit_idx = open_idx[inside]
            rho[hit_idx] = interpolate_values(
                values[mesh.elements[int(e)]], xi[inside], mesh.order
            )
            located[hit_idx] = True

    contrib = settings.step * rho
    pd = 0.0
    for k in np.flatnonzero(located):
        pd += contrib[k]
    mu_int = None
    if want_mu:
        mu_int = 0.0
        if located.any():
            mu_s = settings.step * model.mu_of_rho(rho[located])
            for v in mu_s:
                mu_int += v
        mu_int = float(mu_int)
    return RayIntegral(float(pd), mu_int, n, newton_iters, non_conv)


# ---------------------------------------------------------------------------
# batched renderer


@dataclass
class _RenderContext:
    mesh: Mesh
    values: np.ndarray
    tree: ObbTree | None
    brute_box: Aabb | None
    detector: Detector
    settings: IntegrationSettings
    want_mu: bool
    model: AttenuationModel | None
    elem_pmin: np.ndarray
    elem_pmax: np.ndarray


_WORKER_CTX: _RenderContext | None = None


def _block_rays(ctx: _RenderContext, v_lo: int, v_hi: int) -> np.ndarray:
    det = ctx.detector
    i_idx = np.tile(np.arange(det.nu, dtype=np.int64), v_hi - v_lo)
    j_idx = np.repeat(np.arange(v_lo, v_hi, dtype=np.int64), det.nu)
    return (
        det.origin
        + (i_idx * det.pitch)[:, None] * det.axis_u
        + (j_idx * det.pitch)[:, None] * det.axis_v
    )


def _traverse_block(ctx: _RenderContext, origins: np.ndarray):
    """Vectorized tree traversal; yields (elements, ray_ids, t_enter, t_exit)."""
    d = ctx.detector.normal
    records = []
    if ctx.tree is None:
        box = ctx.brute_box
        with np.errstate(divide="ignore"):
            inv_d = 1.0 / d
        te, tx, hit = slab_intervals(origins, inv_d, d, box.pmin, box.pmax)
        ids = np.flatnonzero(hit)
        if ids.size:
            all_elems = np.arange(ctx.mesh.n_elements, dtype=np.int64)
            records.append((all_elems, ids, te[ids], tx[ids]))
        return records
    stack = [(ctx.tree.root, np.arange(origins.shape[0], dtype=np.int64))]
    while stack:
        node, ids = stack.pop()
        basis = node.obb.basis
        o_local = basis.to_local(origins[ids])
        d_local = basis.rotate(d)
        with np.errstate(divide="ignore"):
            inv_d = 1.0 / d_local
        te, tx, hit = slab_intervals(
            o_local, inv_d, d_local, node.obb.box.pmin, node.obb.box.pmax
        )
        keep = ids[hit]
        if keep.size == 0:
            continue
        if node.is_leaf:
            records.append((node.elements, keep, te[hit], tx[hit]))
        else:
            stack.append((node.right, keep))
            stack.append((node.left, keep))
    return records


NEWTON_CHUNK = 65536


def _render_block(ctx: _RenderContext, v_lo: int, v_hi: int):
    det = ctx.detector
    settings = ctx.settings
    step = settings.step
    n_rays = (v_hi - v_lo) * det.nu
    pd = np.zeros(n_rays)
    mu = np.zeros(n_rays) if ctx.want_mu else None
    stats = RenderStats(rays=n_rays)

    origins = _block_rays(ctx, v_lo, v_hi)
    records = _traverse_block(ctx, origins)
    if not records:
        return pd.reshape(v_hi - v_lo, det.nu), (
            mu.reshape(v_hi - v_lo, det.nu) if mu is not None else None
        ), stats

    # global-grid samples, deduplicated across overlapping leaf intervals
    rec_ranges = []
    key_parts = []
    for _, ids, te, tx in records:
        j_lo, j_hi = _grid_range(te, tx, step)
        rec_ranges.append((j_lo, j_hi))
        counts = np.maximum(j_hi - j_lo + 1, 0)
        j_flat = _ragged_arange(j_lo, counts)
        ray_flat = np.repeat(ids, counts)
        key_parts.append(ray_flat * (1 << 32) + j_flat)
    keys = np.unique(np.concatenate(key_parts))
    s_ray = (keys >> 32).astype(np.int64)
    s_j = (keys & ((1 << 32) - 1)).astype(np.int64)
    ts = (s_j + 0.5) * step
    pts = origins[s_ray] + ts[:, None] * det.normal
    m = keys.shape[0]
    stats.samples = m

    d = det.normal
    with np.errstate(divide="ignore"):
        inv_d = 1.0 / d

    # candidate samples per element: the ray/element-box slab interval keeps
    # exactly the samples inside the (margined) element box, intersected with
    # the record's own range so each (sample, element) claim arises once
    claims_s: list[np.ndarray] = []
    claims_t: list[np.ndarray] = []
    claims_e: list[np.ndarray] = []
    claims_rho: list[np.ndarray] = []
    for (elems, ids, _, _), (rec_jlo, rec_jhi) in zip(records, rec_ranges):
        o_rec = origins[ids]
        for e in elems:
            e = int(e)
            t1, t2, box_hit = slab_intervals(
                o_rec, inv_d, d, ctx.elem_pmin[e], ctx.elem_pmax[e]
            )
            j1, j2 = _grid_range(t1, t2, step)
            j1 = np.maximum(j1, rec_jlo)
            j2 = np.minimum(j2, rec_jhi)
            valid = box_hit & (j2 >= j1)
            if not valid.any():
                continue
            counts = np.where(valid, j2 - j1 + 1, 0)
            j_flat = _ragged_arange(np.where(valid, j1, 0), counts)
            ray_flat = np.repeat(ids, counts)
            sidx = np.searchsorted(keys, ray_flat * (1 << 32) + j_flat)
            corners = ctx.mesh.nodes[ctx.mesh.elements[e, :4]]
            t_guess, _ = tet_entry(o_rec[valid], d, corners)
            tkey_s = np.repeat(t_guess, counts[valid])
            for lo in range(0, sidx.size, NEWTON_CHUNK):
                ch = slice(lo, min(lo + NEWTON_CHUNK, sidx.size))
                inside, xi, iters, converged = membership_test(
                    ctx.mesh, e, pts[sidx[ch]], settings.newton, settings.geom_tol
                )
                stats.newton_iterations += int(iters.sum())
                stats.non_converged += int(np.count_nonzero(~converged))
                if not inside.any():
                    continue
                rho = interpolate_values(
                    ctx.values[ctx.mesh.elements[e]], xi[inside], ctx.mesh.order
                )
                claims_s.append(sidx[ch][inside])
                claims_t.append(tkey_s[ch][inside])
                claims_e.append(np.full(int(inside.sum()), e, dtype=np.int64))
                claims_rho.append(np.atleast_1d(np.asarray(rho, dtype=np.float64)))

    if claims_s:
        cs = np.concatenate(claims_s)
        ct = np.concatenate(claims_t)
        ce = np.concatenate(claims_e)
        cr = np.concatenate(claims_rho)
        # winner per sample: first candidate in (entry t, element id) order
        perm = np.lexsort((ce, ct, cs))
        cs, cr = cs[perm], cr[perm]
        win_s, first = np.unique(cs, return_index=True)
        rho_samples = np.zeros(m)
        rho_samples[win_s] = cr[first]
        pd = np.bincount(s_ray, weights=step * rho_samples, minlength=n_rays)
        if ctx.want_mu:
            mu_samples = np.zeros(m)
            mu_samples[win_s] = ctx.model.mu_of_rho(cr[first])
            mu = np.bincount(s_ray, weights=step * mu_samples, minlength=n_rays)

    return pd.reshape(v_hi - v_lo, det.nu), (
        mu.reshape(v_hi - v_lo, det.nu) if mu is not None else None
    ), stats


def _worker_block(args):
    v_lo, v_hi = args
    return _render_block(_WORKER_CTX, v_lo, v_hi)


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def render(
    mesh: Mesh,
    field: NodalField,
    detector: Detector,
    settings: IntegrationSettings,
    model: AttenuationModel | None = None,
    tree: ObbTree | None = None,
    workers: int = 1,
    brute_force: bool = False,
) -> ProjectionImage:
    """Render the full detector grid.

    ``brute_force`` drops the OBB tree: every ray samples the model box
    interval and every element is a candidate (same ordering rule); on any
    mesh this is bitwise-identical to the accelerated path.  Images are also
    bitwise-identical across worker counts.
    """
    if len(field) != mesh.n_nodes:
        raise ValueError("field length does not match mesh node count")
    if (field.values < 0.0).any():
        raise ValueError("density field must be non-negative for rendering")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    t0 = time.perf_counter()
    box = model_aabb(mesh)
    if float(np.linalg.norm(box.extents)) / settings.step >= 2**31:
        raise ValueError("step too small for the model extent (sample index overflow)")
    if brute_force:
        tree = None
        brute_box = box
    else:
        tree = tree or build_obb_tree(mesh, settings.max_leaf_elements)
        brute_box = None

    bpts = element_bounding_points(mesh)
    pmin = bpts.min(axis=1)
    pmax = bpts.max(axis=1)
    margin = ELEMENT_BOX_MARGIN * np.linalg.norm(pmax - pmin, axis=1)[:, None]
    ctx = _RenderContext(
        mesh=mesh,
        values=field.values,
        tree=tree,
        brute_box=brute_box,
        detector=detector,
        settings=settings,
        want_mu=model is not None and model.variant == "table",
        model=model,
        elem_pmin=pmin - margin,
        elem_pmax=pmax + margin,
    )

    blocks = _split_rows(detector.nv, workers)
    if workers == 1:
        results = [_render_block(ctx, lo, hi) for lo, hi in blocks]
    else:
        import multiprocessing as mp

        mp_ctx = mp.get_context("fork")
        with mp_ctx.Pool(workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            results = pool.map(_worker_block, blocks)

    density = np.vstack([r[0] for r in results])
    stats = RenderStats()
    for r in results:
        stats.merge(r[2])
    stats.wall_time = time.perf_counter() - t0

    intensity = None
    if model is not None:
        if model.variant == "identity":
            integral = density
        elif model.variant == "linear":
            integral = model.kappa * density
        else:
            integral = np.vstack([r[1] for r in results])
        intensity = model.i_in * np.exp(-integral)

    return ProjectionImage(density, detector.pitch, intensity, stats)


def _split_rows(nv: int, workers: int) -> list[tuple[int, int]]:
    n_blocks = min(workers, nv)
    edges = np.linspace(0, nv, n_blocks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def image_mass(img: ProjectionImage) -> float:
    """Total mass in g: sum of pixels times pixel area."""
    return float(img.density.sum() * img.pitch**2)


def error_map(img: ProjectionImage, oracle: np.ndarray) -> ProjectionImage:
    """Per-pixel absolute difference against an analytic oracle grid."""
    oracle = np.asarray(oracle, dtype=np.float64)
    if oracle.shape != img.density.shape:
        raise ValueError(
            f"oracle grid {oracle.shape} does not match image {img.density.shape}"
        )
    return ProjectionImage(np.abs(img.density - oracle), img.pitch)
