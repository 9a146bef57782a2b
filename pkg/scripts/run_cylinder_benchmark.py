#!/usr/bin/env python3
"""Cylinder benchmark: axis-aligned render with one depth sample per ray.

The density has no variation along the axis, so a single midpoint sample
integrates each ray exactly; the remaining error is the in-plane
interpolation of the radial density profile.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from fexray.bench import CylinderSpec, generate_cylinder, radial_density
from fexray.io_text import FloatGrid, write_float_grid, write_graymap
from fexray.spatial import model_aabb
from fexray.xray import IntegrationSettings, error_map, make_detector, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rays-per-cm2", type=float, default=10000.0)
    ap.add_argument("--target-elements", type=int, default=2143)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="out/cylinder")
    args = ap.parse_args(argv)

    spec = CylinderSpec(target_elements=args.target_elements)
    mesh, field = generate_cylinder(spec)
    print(f"mesh: {mesh.n_elements} elements, {mesh.n_nodes} nodes")

    box = model_aabb(mesh)
    det = make_detector(box, "+z", rays_per_cm2=args.rays_per_cm2)
    print(f"detector: {det.nu} x {det.nv} pixels, pitch {det.pitch:.5f} cm")

    img = render(
        mesh, field, det, IntegrationSettings(step=spec.height), workers=args.workers
    )
    print(f"samples: {img.stats.samples} for {img.stats.rays} rays "
          f"({img.stats.samples / img.stats.rays:.2f} per ray)")
    print(img.stats.to_text(), end="")

    i = np.arange(det.nu) - (det.nu - 1) / 2.0
    j = np.arange(det.nv) - (det.nv - 1) / 2.0
    du, dv = np.meshgrid(i * det.pitch, j * det.pitch)
    rho = np.hypot(du, dv)
    oracle = np.where(rho <= spec.radius, spec.height * radial_density(rho), 0.0)
    err = error_map(img, oracle)
    away = rho <= spec.radius - 2.0 * det.pitch
    print(f"max |error|: {err.density.max():.3e} g/cm^2 overall, "
          f"{err.density[away].max():.3e} away from the rim")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "density.fgrid").write_bytes(
        write_float_grid(FloatGrid(img.nu, img.nv, img.pitch, img.density))
    )
    (out / "density.pgm").write_bytes(write_graymap(img.density, 8, (0.0, 0.2)))
    (out / "error.pgm").write_bytes(write_graymap(err.density))
    print(f"wrote {out}/density.fgrid, density.pgm, error.pgm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
