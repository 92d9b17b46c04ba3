"""
Spatial layout: Poisson node placement, hexagonal cells and frequency reuse.

Cells are pointy-top hexagons with circumradius ``R``; their centres sit on
a triangular lattice of pitch sqrt(3)*R, expressed in axial coordinates
(q, r) with the lattice origin at the centre of the region.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidLayoutError, InvalidParameterError

SQRT3 = math.sqrt(3.0)
REUSE7 = 7
# relative slack for boundary ties when comparing distances
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class Region:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidParameterError(f"region must have positive size, got {self.width}x{self.height}")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return self.width / 2.0, self.height / 2.0


class Role(enum.Enum):
    HONEST = "honest"
    UNTRUSTED = "untrusted"


@dataclass(frozen=True)
class NodeSite:
    id: int
    position: tuple[float, float]
    cell_id: int = -1
    role: Role = Role.HONEST
    tx_power: float = 0.1


@dataclass(frozen=True)
class Cell:
    cell_id: int
    center: tuple[float, float]
    axial: tuple[int, int]
    frequency_channel: int = -1


@dataclass(frozen=True)
class CellPlan:
    cells: tuple[Cell, ...]
    cell_radius: float
    num_channels: int = 0
    region: Region | None = None
    # False when the requested channel count could not separate all conflicting cells
    coloring_ok: bool = True

    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.cells], dtype=np.float64).reshape(-1, 2)

    def channels(self) -> np.ndarray:
        return np.array([c.frequency_channel for c in self.cells], dtype=np.int64)

    def cell(self, cell_id: int) -> Cell:
        return self.cells[cell_id]

    def __len__(self) -> int:
        return len(self.cells)


# -- point processes -------------------------------------------------------------

def sample_ppp(
    intensity: float,
    region: Region,
    untrusted_fraction: float = 0.0,
    rng_seed: int = 0,
    tx_power: float = 0.1,
) -> list[NodeSite]:
    """Homogeneous PPP of ``intensity`` nodes/m^2 over ``region``.

    Each node is marked untrusted independently with probability
    ``untrusted_fraction``.
    """
    if intensity < 0:
        raise InvalidParameterError("intensity must be >= 0")
    if not 0.0 <= untrusted_fraction <= 1.0:
        raise InvalidParameterError("untrusted_fraction must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    count = int(rng.poisson(intensity * region.area))
    xy = rng.uniform((0.0, 0.0), (region.width, region.height), size=(count, 2))
    untrusted = rng.random(count) < untrusted_fraction
    return _make_nodes(xy, untrusted, tx_power)


def sample_fixed_count(
    count: int,
    region: Region,
    untrusted_fraction: float = 0.0,
    rng_seed: int = 0,
    tx_power: float = 0.1,
) -> list[NodeSite]:
    """PPP conditioned on its node count (i.i.d. uniform positions).

    Exactly ``round(untrusted_fraction * count)`` nodes are marked untrusted,
    chosen uniformly at random.
    """
    if count < 0:
        raise InvalidParameterError("count must be >= 0")
    if not 0.0 <= untrusted_fraction <= 1.0:
        raise InvalidParameterError("untrusted_fraction must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    xy = rng.uniform((0.0, 0.0), (region.width, region.height), size=(count, 2))
    untrusted = np.zeros(count, dtype=bool)
    n_bad = int(round(untrusted_fraction * count))
    untrusted[rng.permutation(count)[:n_bad]] = True
    return _make_nodes(xy, untrusted, tx_power)


def _make_nodes(xy: np.ndarray, untrusted: np.ndarray, tx_power: float) -> list[NodeSite]:
    if tx_power <= 0:
        raise InvalidParameterError("tx_power must be > 0")
    return [
        NodeSite(
            id=i,
            position=(float(x), float(y)),
            role=Role.UNTRUSTED if bad else Role.HONEST,
            tx_power=tx_power,
        )
        for i, ((x, y), bad) in enumerate(zip(xy, untrusted))
    ]


# -- hexagons ---------------------------------------------------------------------

def axial_to_xy(q, r, cell_radius: float, origin=(0.0, 0.0)):
    x = origin[0] + cell_radius * SQRT3 * (q + r / 2.0)
    y = origin[1] + cell_radius * 1.5 * r
    return x, y


def hexagon_vertices(center, cell_radius: float) -> np.ndarray:
    """Corners of a pointy-top hexagon, counter-clockwise from the top."""
    angles = np.deg2rad(90.0 + 60.0 * np.arange(6))
    return np.column_stack([center[0] + cell_radius * np.cos(angles),
                            center[1] + cell_radius * np.sin(angles)])


def point_in_hexagon(points, center, cell_radius: float, tol: float = 1e-9) -> np.ndarray:
    """Closed point-in-hexagon test (boundary counts as inside)."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dx = np.abs(p[:, 0] - center[0])
    dy = np.abs(p[:, 1] - center[1])
    apothem = cell_radius * SQRT3 / 2.0
    slack = tol * cell_radius
    return (dx <= apothem + slack) & (dx / SQRT3 + dy <= cell_radius + slack)


def _hexagon_intersects_rect(center, cell_radius: float, region: Region) -> bool:
    # Convex polygons: separating axis test over the hexagon's and rectangle's edge normals.
    hexv = hexagon_vertices(center, cell_radius)
    rect = np.array([[0, 0], [region.width, 0], [region.width, region.height], [0, region.height]],
                    dtype=np.float64)
    axes = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for i in range(6):
        edge = hexv[(i + 1) % 6] - hexv[i]
        axes.append(np.array([-edge[1], edge[0]]))
    for axis in axes:
        a, b = hexv @ axis, rect @ axis
        # touching at a single boundary point does not count as intersecting
        if a.max() <= b.min() + 1e-9 * cell_radius or b.max() <= a.min() + 1e-9 * cell_radius:
            return False
    return True


def build_hex_tessellation(region: Region, cell_radius: float) -> CellPlan:
    """All lattice hexagons whose interior meets the region.

    Cell ids are assigned in row-major order (bottom to top, left to right).
    """
    if cell_radius <= 0:
        raise InvalidParameterError("cell_radius must be > 0")
    origin = region.center
    r_span = int(math.ceil(region.height / (1.5 * cell_radius))) + 2
    q_span = int(math.ceil(region.width / (SQRT3 * cell_radius))) + r_span + 2
    found = []
    for r in range(-r_span, r_span + 1):
        for q in range(-q_span, q_span + 1):
            center = axial_to_xy(q, r, cell_radius, origin)
            if _hexagon_intersects_rect(center, cell_radius, region):
                found.append((center[1], center[0], q, r, center))
    found.sort()
    cells = tuple(
        Cell(cell_id=i, center=(float(c[0]), float(c[1])), axial=(q, r))
        for i, (_, _, q, r, c) in enumerate(found)
    )
    return CellPlan(cells=cells, cell_radius=cell_radius, region=region)


def cell_of_points(points, plan: CellPlan) -> np.ndarray:
    """Containing cell for each point; boundary ties go to the lowest cell id."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(plan) == 0:
        raise InvalidLayoutError("plan has no cells")
    d2 = ((p[:, None, :] - plan.centers()[None, :, :]) ** 2).sum(axis=2)
    best = d2.min(axis=1, keepdims=True)
    # first index within the tie tolerance = lowest cell id
    within = d2 <= best * (1 + _TIE_RTOL) + 1e-12
    ids = within.argmax(axis=1)
    inside = point_in_hexagon(p, plan.centers()[ids].T, plan.cell_radius) if len(p) else np.ones(0, bool)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)[0]
        raise InvalidLayoutError(f"point {tuple(p[bad])} lies outside every cell")
    return ids


def assign_cells(nodes: Sequence[NodeSite], plan: CellPlan) -> list[NodeSite]:
    if not nodes:
        return []
    ids = cell_of_points([n.position for n in nodes], plan)
    return [replace(n, cell_id=int(c)) for n, c in zip(nodes, ids)]


def server_distance(node: NodeSite, plan: CellPlan) -> float:
    cx, cy = plan.cell(node.cell_id).center
    return math.hypot(node.position[0] - cx, node.position[1] - cy)


# -- frequency planning ----------------------------------------------------------------

def _hex_distance(a: tuple[int, int], b: tuple[int, int]) -> int:
    dq, dr = a[0] - b[0], a[1] - b[1]
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def reuse7_channel(q: int, r: int) -> int:
    return (q + 3 * r) % REUSE7


def _greedy(plan: CellPlan, conflict_rings: int, num_channels: int) -> tuple[list[int], bool]:
    colors: list[int] = []
    ok = True
    for cell in plan.cells:
        conflicts = [
            colors[other.cell_id]
            for other in plan.cells[: cell.cell_id]
            if _hex_distance(cell.axial, other.axial) <= conflict_rings
        ]
        free = [c for c in range(num_channels) if c not in conflicts]
        if free:
            colors.append(free[0])
        else:
            ok = False
            # best effort: the channel used by the fewest conflicting cells
            counts = np.bincount(conflicts, minlength=num_channels)
            colors.append(int(counts.argmin()))
    return colors, ok


def assign_frequencies(plan: CellPlan, num_channels: int) -> CellPlan:
    """Colour the cells with ``num_channels`` uplink channels.

    With 7 channels the classic reuse-7 pattern ``(q + 3r) mod 7`` is used;
    it keeps co-channel centres at least sqrt(21)*R apart. With more
    channels a greedy colouring separates every pair of cells within two
    lattice steps, falling back to the reuse-7 pattern if greedy runs out.
    With fewer than 7, only touching cells are kept apart (greedy first,
    then a fixed 3-colouring); ``coloring_ok`` is False with 1 or 2 channels
    whenever two cells touch.
    """
    if num_channels < 1:
        raise InvalidParameterError("num_channels must be >= 1")
    if num_channels == REUSE7:
        colors, ok = [reuse7_channel(*c.axial) for c in plan.cells], True
    elif num_channels > REUSE7:
        colors, ok = _greedy(plan, 2, num_channels)
        if not ok:
            colors, ok = [reuse7_channel(*c.axial) for c in plan.cells], True
    else:
        colors, ok = _greedy(plan, 1, num_channels)
        if not ok and num_channels >= 3:
            # touching cells form a triangular lattice, which (q - r) mod 3 colours exactly
            colors, ok = [(c.axial[0] - c.axial[1]) % 3 for c in plan.cells], True
    cells = tuple(replace(c, frequency_channel=int(ch)) for c, ch in zip(plan.cells, colors))
    return replace(plan, cells=cells, num_channels=num_channels, coloring_ok=ok)


def build_cell_plan(region: Region, cell_radius: float, num_channels: int) -> CellPlan:
    return assign_frequencies(build_hex_tessellation(region, cell_radius), num_channels)


def flower_region(cell_radius: float) -> Region:
    """Rectangle whose tessellation is exactly the 7-cell flower (centre + 6 neighbours)."""
    return Region(2.0 * SQRT3 * cell_radius, 4.0 * cell_radius)


def layout_rows(nodes: Sequence[NodeSite]):
    for n in nodes:
        yield n.id, n.position[0], n.position[1], n.cell_id, n.role.value, n.tx_power


def cell_rows(plan: CellPlan):
    for c in plan.cells:
        yield c.cell_id, c.center[0], c.center[1], c.frequency_channel
