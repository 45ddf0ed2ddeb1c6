"""
Result files: VTK snapshots through meshio, CSV tables, status file and
plain-text sensitivity files
"""
import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import meshio
import numpy as np

from src.services.mesh_service import Mesh
from src.utils.constants import MSG_SENSITIVITY_NOT_FOUND
from src.utils.exceptions import ShapeOptError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _points3d(mesh: Mesh) -> np.ndarray:
    return np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def export_vtk(
    path: PathLike,
    mesh: Mesh,
    cell_data: Optional[Dict[str, np.ndarray]] = None,
    point_data: Optional[Dict[str, np.ndarray]] = None,
    face_data: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    """
    Write a legacy ASCII VTK snapshot

    Triangles carry cell_data; face_data (per mesh face) is written on a second
    block of line cells holding the boundary faces, with triangles set to zero.
    Vectors of length 2 are padded to 3 components.

    Args:
        path: Output file
        mesh: Mesh to export
        cell_data: name -> (n_cells,) or (n_cells, 2) arrays
        point_data: name -> (n_vertices,) or (n_vertices, 2) arrays
        face_data: name -> (n_faces,) arrays restricted to boundary faces

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cells = [("triangle", mesh.cells.astype(np.int32))]
    boundary = mesh.boundary_faces
    if face_data:
        cells.append(("line", mesh.face_vertices[boundary].astype(np.int32)))

    def pad(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.ndim == 2 and values.shape[1] == 2:
            return np.column_stack([values, np.zeros(len(values))])
        return values

    blocks = {}
    for name, values in (cell_data or {}).items():
        blocks[name] = [pad(values)]
        if face_data:
            blocks[name].append(np.zeros((boundary.size,) + blocks[name][0].shape[1:]))
    for name, values in (face_data or {}).items():
        values = np.asarray(values, dtype=float)
        blocks[name] = [np.zeros(mesh.n_cells), values[boundary]]

    out = meshio.Mesh(
        points=_points3d(mesh),
        cells=cells,
        point_data={name: pad(v) for name, v in (point_data or {}).items()},
        cell_data=blocks,
    )
    meshio.write(path, out, file_format="vtk", binary=False)
    logger.debug(f"Wrote VTK snapshot {path}")
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open(newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def write_residuals(path: PathLike, residual_history: Sequence[Tuple[int, float, float]]) -> Path:
    """Flow residuals: iteration, normalised momentum and continuity residuals"""
    return write_csv(path, ('iteration', 'momentum_residual', 'continuity_residual'), residual_history)


def write_descent_residuals(path: PathLike, residual_history: Sequence[Tuple]) -> Path:
    header = ('p', 'iteration', 'res_V', 'res_lambda_bc', 'res_lambda_v', 'R')
    return write_csv(path, header, residual_history)


def write_history(path: PathLike, history) -> Path:
    """One row per accepted optimisation iteration"""
    dim = len(history.reference) - 1 if history.reference is not None else 2
    header = (
        ['iteration', 'objective', 'drag', 'normalized_drag']
        + [f'g{i}' for i in range(dim + 1)]
        + [f'lambda{i}' for i in range(dim + 1)]
        + ['eps', 'min_cell_volume', 'picard_iterations', 'backtracks', 'rejections']
    )
    rows = []
    for r in history.records:
        rows.append(
            [r.iteration, r.objective, r.drag, r.normalized_drag]
            + list(r.g) + list(r.lam)
            + [r.eps, r.min_cell_volume, r.picard_iterations, r.backtracks, r.rejections]
        )
    return write_csv(path, header, rows)


def write_gradient_check(path: PathLike, rows: Sequence[Tuple[int, float, float, float]]) -> Path:
    return write_csv(path, ('field', 'adjoint', 'finite_difference', 'relative_difference'), rows)


def write_status(path: PathLike, status: str, message: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = status if not message else f"{status}\n{message}"
    path.write_text(text + "\n", encoding='utf-8')
    return path


def read_status(path: PathLike) -> str:
    return Path(path).read_text(encoding='utf-8').splitlines()[0].strip()


def write_sensitivity_file(path: PathLike, density: np.ndarray, faces: np.ndarray,
                           g: Optional[np.ndarray] = None) -> Path:
    """One 'face_index density' line per face, optional '# g ...' header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as f:
        if g is not None:
            f.write('# g ' + ' '.join(repr(float(x)) for x in g) + '\n')
        for face in faces:
            f.write(f"{int(face)} {float(density[face])!r}\n")
    return path


def read_sensitivity_file(path: PathLike, mesh: Mesh) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Read a sensitivity file written by write_sensitivity_file

    Returns:
        Tuple of ((n_faces,) density, zero where not listed; g or None)
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{MSG_SENSITIVITY_NOT_FOUND}: {path}")

    density = np.zeros(mesh.n_faces)
    g = None
    with path.open(encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                parts = line[1:].split()
                if parts and parts[0] == 'g':
                    try:
                        g = np.array([float(x) for x in parts[1:]])
                    except ValueError as e:
                        raise ShapeOptError(f"{path}:{lineno}: malformed constraint header '{line}'") from e
                    if g.size != mesh.dim + 1:
                        raise ShapeOptError(
                            f"{path}:{lineno}: constraint header has {g.size} values, expected {mesh.dim + 1}"
                        )
                continue
            try:
                face, value = line.split()
                face = int(face)
                value = float(value)
            except ValueError as e:
                raise ShapeOptError(f"{path}:{lineno}: malformed sensitivity line '{line}'") from e
            if not 0 <= face < mesh.n_faces:
                raise ShapeOptError(f"{path}:{lineno}: face index {face} outside [0, {mesh.n_faces})")
            density[face] = value
    logger.info(f"Read sensitivity from {path}")
    return density, g
