import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import OUTPUT_DIR
from ..services.mesh_service import Mesh, write_mesh
from ..utils.constants import (
    PATCH_INLET,
    PATCH_OUTLET,
    PATCH_WALL,
    PATCH_OBS_FIXED,
    PATCH_OBS_FREE,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CylinderChannelSpec:
    """Geometry of the channel-with-cylinder case; lengths are nondimensional"""

    center: Tuple[float, float] = (0.2, 0.2)
    radius: float = 0.05
    block_half_width: float = 0.1
    cells_per_block_side: int = 10
    radial_layers: int = 6
    radial_grading: float = 1.3
    pad_left: int = 5
    pad_right: int = 95
    pad_bottom: int = 5
    pad_top: int = 5
    lateral_kind: str = PATCH_WALL
    waterline: Optional[float] = None

    def refined(self, factor: int) -> "CylinderChannelSpec":
        """Same geometry with every cell count multiplied by factor"""
        return CylinderChannelSpec(
            center=self.center,
            radius=self.radius,
            block_half_width=self.block_half_width,
            cells_per_block_side=self.cells_per_block_side * factor,
            radial_layers=self.radial_layers * factor,
            radial_grading=self.radial_grading ** (1.0 / factor),
            pad_left=self.pad_left * factor,
            pad_right=self.pad_right * factor,
            pad_bottom=self.pad_bottom * factor,
            pad_top=self.pad_top * factor,
            lateral_kind=self.lateral_kind,
            waterline=self.waterline,
        )


def _split_quads(vertices: np.ndarray, quads: np.ndarray, y_mirror: float) -> np.ndarray:
    """
    Split quads into triangles, mirror-symmetric about y = y_mirror.

    The diagonal joins the extreme corners of x + s*y with s = +1 above the
    mirror line and s = -1 below it.
    """
    triangles = []
    for quad in quads:
        pts = vertices[quad]
        s = 1.0 if pts[:, 1].mean() > y_mirror else -1.0
        key = pts[:, 0] + s * pts[:, 1]
        lo, hi = int(np.argmin(key)), int(np.argmax(key))
        if (hi - lo) % 4 != 2:
            lo = 0
        a, b, c, d = (quad[(lo + k) % 4] for k in range(4))
        triangles.append((a, b, c))
        triangles.append((a, c, d))
    triangles = np.array(triangles, dtype=np.int64)

    # Orient counter-clockwise
    p = vertices[triangles]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _compact(vertices: np.ndarray, cells: np.ndarray, edges: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    used = np.unique(cells)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return vertices[used], remap[cells], remap[edges]


def rectangle_mesh(
    x_range: Tuple[float, float],
    y_range: Tuple[float, float],
    nx: int,
    ny: int,
    side_kinds: Dict[str, str],
) -> Mesh:
    """
    Structured triangulation of a rectangle

    Args:
        x_range: (x_min, x_max)
        y_range: (y_min, y_max)
        nx: Cells along x
        ny: Cells along y
        side_kinds: Patch kind per side, keys 'left', 'right', 'bottom', 'top'

    Returns:
        Mesh with 2 * nx * ny triangles
    """
    xs = np.linspace(x_range[0], x_range[1], nx + 1)
    ys = np.linspace(y_range[0], y_range[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing='ij')
    vertices = np.column_stack((X.ravel(), Y.ravel()))

    def vid(i, j):
        return i * (ny + 1) + j

    quads = np.array(
        [(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)) for i in range(nx) for j in range(ny)],
        dtype=np.int64,
    )
    cells = _split_quads(vertices, quads, 0.5 * (y_range[0] + y_range[1]))

    edges: List[Tuple[int, int]] = []
    kinds: List[str] = []
    for j in range(ny):
        edges += [(vid(0, j), vid(0, j + 1)), (vid(nx, j), vid(nx, j + 1))]
        kinds += [side_kinds['left'], side_kinds['right']]
    for i in range(nx):
        edges += [(vid(i, 0), vid(i + 1, 0)), (vid(i, ny), vid(i + 1, ny))]
        kinds += [side_kinds['bottom'], side_kinds['top']]

    return Mesh.from_arrays(vertices, cells, np.array(edges), kinds)


def unit_square_mesh(n: int = 1, kind: str = PATCH_WALL) -> Mesh:
    """Unit square split into 2 * n * n triangles, every side tagged with kind"""
    return rectangle_mesh((0.0, 1.0), (0.0, 1.0), n, n, {side: kind for side in ('left', 'right', 'bottom', 'top')})


def channel_mesh(
    length: float,
    height: float,
    nx: int,
    ny: int,
    lateral_kind: str = PATCH_WALL,
) -> Mesh:
    """Empty channel: inlet on the left, outlet on the right, lateral sides of the given kind"""
    return rectangle_mesh(
        (0.0, length), (0.0, height), nx, ny,
        {'left': PATCH_INLET, 'right': PATCH_OUTLET, 'bottom': lateral_kind, 'top': lateral_kind},
    )


def _radial_fractions(layers: int, grading: float) -> np.ndarray:
    widths = grading ** np.arange(layers)
    fractions = np.concatenate(([0.0], np.cumsum(widths)))
    return fractions / fractions[-1]


def cylinder_channel_mesh(spec: CylinderChannelSpec = CylinderChannelSpec()) -> Mesh:
    """
    Channel with a circular obstacle.

    A Cartesian background grid of spacing h = 2b/m surrounds a square block
    [xc-b, xc+b] x [yc-b, yc+b]. Inside the block an O-grid connects the 4m
    perimeter vertices of the block to 4m equally spaced points on the circle,
    so the obstacle polygon has 4m edges and the grid is mirror-symmetric
    about y = yc.
    """
    m = spec.cells_per_block_side
    if m % 2:
        raise ValueError("cells_per_block_side must be even")
    if spec.radius >= spec.block_half_width:
        raise ValueError("Cylinder radius must be smaller than the block half width")

    xc, yc = spec.center
    b = spec.block_half_width
    h = 2.0 * b / m
    nx = spec.pad_left + m + spec.pad_right
    ny = spec.pad_bottom + m + spec.pad_top
    x0 = xc - b - spec.pad_left * h
    y0 = yc - b - spec.pad_bottom * h

    X, Y = np.meshgrid(x0 + h * np.arange(nx + 1), y0 + h * np.arange(ny + 1), indexing='ij')
    background = np.column_stack((X.ravel(), Y.ravel()))

    def vid(i, j):
        return i * (ny + 1) + j

    i0, j0, half = spec.pad_left, spec.pad_bottom, m // 2
    in_block = lambda i, j: i0 <= i < i0 + m and j0 <= j < j0 + m
    quads = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for i in range(nx) for j in range(ny) if not in_block(i, j)
    ]

    # Block perimeter, counter-clockwise from (xc + b, yc)
    perimeter = []
    for k in range(4 * m):
        if k < half:
            perimeter.append(vid(i0 + m, j0 + half + k))
        elif k < half + m:
            perimeter.append(vid(i0 + m - (k - half), j0 + m))
        elif k < half + 2 * m:
            perimeter.append(vid(i0, j0 + m - (k - half - m)))
        elif k < half + 3 * m:
            perimeter.append(vid(i0 + (k - half - 2 * m), j0))
        else:
            perimeter.append(vid(i0 + m, j0 + (k - half - 3 * m)))
    perimeter = np.array(perimeter)

    theta = 2.0 * np.pi * np.arange(4 * m) / (4 * m)
    circle = np.column_stack((xc + spec.radius * np.cos(theta), yc + spec.radius * np.sin(theta)))
    outer = background[perimeter]
    fractions = _radial_fractions(spec.radial_layers, spec.radial_grading)

    rings = [circle + t * (outer - circle) for t in fractions[:-1]]
    ring_points = np.vstack(rings) if rings else np.empty((0, 2))
    offset = len(background)
    vertices = np.vstack((background, ring_points))

    def ring_vid(layer, k):
        k %= 4 * m
        if layer == spec.radial_layers:
            return perimeter[k]
        return offset + layer * 4 * m + k

    for layer in range(spec.radial_layers):
        for k in range(4 * m):
            quads.append((ring_vid(layer, k), ring_vid(layer + 1, k), ring_vid(layer + 1, k + 1), ring_vid(layer, k + 1)))

    cells = _split_quads(vertices, np.array(quads, dtype=np.int64), yc)

    edges: List[Tuple[int, int]] = []
    kinds: List[str] = []
    for j in range(ny):
        edges += [(vid(0, j), vid(0, j + 1)), (vid(nx, j), vid(nx, j + 1))]
        kinds += [PATCH_INLET, PATCH_OUTLET]
    for i in range(nx):
        edges += [(vid(i, 0), vid(i + 1, 0)), (vid(i, ny), vid(i + 1, ny))]
        kinds += [spec.lateral_kind, spec.lateral_kind]
    for k in range(4 * m):
        edges.append((ring_vid(0, k), ring_vid(0, k + 1)))
        mid_y = 0.5 * (circle[k, 1] + circle[(k + 1) % (4 * m), 1])
        above = spec.waterline is not None and mid_y > spec.waterline
        kinds.append(PATCH_OBS_FIXED if above else PATCH_OBS_FREE)

    vertices, cells, edges = _compact(vertices, cells, np.array(edges, dtype=np.int64))
    mesh = Mesh.from_arrays(vertices, cells, edges, kinds)
    logger.info(f"Cylinder channel mesh: {mesh.n_cells} cells, {4 * m} obstacle faces")
    return mesh


class MeshGenerator:
    """Writes the scripted case meshes to disk"""

    NAMES = ("cylinder", "channel", "unit_square")

    def __init__(self, output_dir: Path = OUTPUT_DIR):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def generate(self, name: str, refine: int = 1, waterline: Optional[float] = None) -> Path:
        """
        Generate a named mesh and write it in the text mesh format

        Args:
            name: 'cylinder', 'channel' or 'unit_square'
            refine: Cell-count multiplier
            waterline: Optional waterline splitting the obstacle into obsD above / obsN below

        Returns:
            Path of the written mesh file
        """
        if name == 'cylinder':
            mesh = cylinder_channel_mesh(CylinderChannelSpec(waterline=waterline).refined(refine))
        elif name == 'channel':
            mesh = channel_mesh(2.0, 0.4, 40 * refine, 32 * refine)
        elif name == 'unit_square':
            mesh = unit_square_mesh(refine)
        else:
            raise ValueError(f"Unknown mesh name: {name}")

        suffix = f"_r{refine}" if refine > 1 else ""
        return write_mesh(mesh, self.output_dir / f"{name}{suffix}.msh")


if __name__ == "__main__":
    generator = MeshGenerator()
    for factor in (1, 2):
        generator.generate('cylinder', refine=factor)
