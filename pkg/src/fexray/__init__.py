"""Virtual X-ray images from quadratic tetrahedral finite-element results."""

from .bench import (
    BallSpec,
    CylinderSpec,
    ball_projection_oracle,
    cylinder_projection_oracle,
    generate_ball,
    generate_cylinder,
)
from .locate import Location, NewtonSettings, global_to_local, in_hull, locate_point
from .mesh import (
    Mesh,
    MeshError,
    NodalField,
    boundary_faces,
    interpolate,
    local_to_global,
    shape_gradients,
    shape_values,
)
from .raycast import HitInterval, Ray, ray_aabb, ray_obb, ray_tet_entry, ray_triangle, traverse
from .spatial import (
    Aabb,
    Basis,
    DegenerateGeometryError,
    Obb,
    ObbTree,
    build_obb_tree,
    convex_hull,
    covariance,
    fit_obb,
    model_aabb,
    pca_basis,
    triangle_centroid_area,
    weighted_center,
)
from .xray import (
    AttenuationModel,
    Detector,
    IntegrationSettings,
    ProjectionImage,
    attenuate,
    error_map,
    image_mass,
    integrate_ray,
    make_detector,
    render,
)

__version__ = "0.1.0"
