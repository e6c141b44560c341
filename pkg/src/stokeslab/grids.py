"""Regular-grid scalar/vector fields with zero Dirichlet extension.

Nodes are the interior vertices of a uniform partition of the box: with n
nodes per edge the spacing is s = side / (n + 1) and the ghost layer of the
zero extension falls exactly on the box walls.  All norms use the rectangle
rule s^d * sum, which makes Rayleigh quotients ratios of exact quadratic
forms and partition additivity of cell averages exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "Grid",
    "GridField",
    "forward_gradient",
    "forward_divergence",
    "gradient_energy",
    "gradient_sq_density",
    "cell_average",
    "cell_averages",
    "mollify",
    "truncate_eps",
    "truncate_r",
    "support_measure",
    "check_sobolev",
    "check_poincare",
    "save_field",
    "load_field",
]

SUPPORT_RTOL = 1e-14  # |phi|^2 above this fraction of the max counts as nonzero


@dataclass(frozen=True)
class Grid:
    """Uniform grid on a centered box; fields vanish identically outside."""

    dimension: int
    side: float
    n: int  # nodes per edge

    def __post_init__(self):
        if self.dimension < 1 or self.n < 1 or self.side <= 0:
            raise ValueError("grid needs dimension >= 1, n >= 1, side > 0")

    @property
    def spacing(self) -> float:
        return self.side / (self.n + 1)

    @property
    def node_count(self) -> int:
        return self.n**self.dimension

    def axis(self) -> np.ndarray:
        """Node coordinates along one axis (same for all axes)."""
        s = self.spacing
        return s * np.arange(1, self.n + 1) - 0.5 * self.side

    def meshes(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis()] * self.dimension, indexing="ij")

    @classmethod
    def for_cells(cls, dimension: int, cells: int, nodes_per_cell_edge: int,
                  cell_size: float = 1.0) -> "Grid":
        """Grid whose spacing divides a partition into ``cells`` cells per edge."""
        n = cells * nodes_per_cell_edge - 1
        return cls(dimension, cells * cell_size, n)


class GridField:
    """Dense field sampled at grid nodes; components = 1 (scalar) or d."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        expected = (grid.n,) * grid.dimension
        if values.shape == expected:
            values = values[np.newaxis]
        if values.ndim != grid.dimension + 1 or values.shape[1:] != expected:
            raise ValueError(f"values shape {values.shape} does not match grid {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1) -> "GridField":
        return cls(grid, np.zeros((components,) + (grid.n,) * grid.dimension))

    @classmethod
    def sample(cls, grid: Grid, fn, components: int = 1) -> "GridField":
        """Sample ``fn(*coords) -> value`` (or tuple of values) at the nodes."""
        mesh = grid.meshes()
        out = fn(*mesh)
        if components == 1 and not isinstance(out, (tuple, list)):
            return cls(grid, np.asarray(out, dtype=float))
        return cls(grid, np.stack([np.asarray(c, dtype=float) for c in out]))

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())

    def magnitude_sq(self) -> np.ndarray:
        """Pointwise |phi|^2 = sum over components."""
        return np.einsum("c...,c...->...", self.values, self.values)

    def norm_l2(self) -> float:
        s = self.grid.spacing
        return float(np.sqrt(s**self.grid.dimension * np.sum(self.values**2)))

    def norm_lp(self, p: float) -> float:
        s = self.grid.spacing
        mag = np.sqrt(self.magnitude_sq())
        return float((s**self.grid.dimension * np.sum(mag**p)) ** (1.0 / p))

    def dot(self, other: "GridField") -> float:
        s = self.grid.spacing
        return float(s**self.grid.dimension * np.sum(self.values * other.values))

    def __add__(self, other):
        return GridField(self.grid, self.values + other.values)

    def __sub__(self, other):
        return GridField(self.grid, self.values - other.values)

    def __mul__(self, c: float):
        return GridField(self.grid, self.values * c)

    __rmul__ = __mul__


def _shift_down(a: np.ndarray, axis: int) -> np.ndarray:
    """a evaluated one node forward along axis, zero past the wall."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(1, None)
    dst[axis] = slice(None, -1)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _forward_diff(a: np.ndarray, axis: int, s: float) -> np.ndarray:
    return (_shift_down(a, axis) - a) / s


def _backward_diff_t(a: np.ndarray, axis: int, s: float) -> np.ndarray:
    """Adjoint of `_forward_diff`: (g_{i-1} - g_i)/s with zero fill at the start."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(None, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return (out - a) / s


def forward_gradient(f: GridField) -> GridField:
    """Forward-difference gradient of a scalar field, one component per axis."""
    if f.components != 1:
        raise ValueError("forward_gradient expects a scalar field")
    s = f.grid.spacing
    a = f.values[0]
    return GridField(f.grid, np.stack([_forward_diff(a, j, s)
                                       for j in range(f.grid.dimension)]))


def forward_divergence(v: GridField) -> GridField:
    """Sum of forward differences D_j v_j; exact right inverse of the curl."""
    d = v.grid.dimension
    if v.components != d:
        raise ValueError(f"divergence needs {d} components, got {v.components}")
    s = v.grid.spacing
    out = _forward_diff(v.values[0], 0, s)
    for j in range(1, d):
        out += _forward_diff(v.values[j], j, s)
    return GridField(v.grid, out)


def gradient_energy(f: GridField) -> float:
    """Dirichlet energy s^d * sum over all edges, wall jumps on both sides.

    This is the quadratic form of the zero-extended field; it exceeds the
    plain sum over `forward_gradient` values by the jump terms at the low
    walls.
    """
    g = f.grid
    s = g.spacing
    total = 0.0
    for comp in f.values:
        for axis in range(g.dimension):
            total += float(np.sum(np.diff(comp, axis=axis) ** 2))
            # wall jumps: first and last node plane along this axis
            lead = [slice(None)] * g.dimension
            lead[axis] = 0
            tail = [slice(None)] * g.dimension
            tail[axis] = g.n - 1
            total += float(np.sum(comp[tuple(lead)] ** 2))
            total += float(np.sum(comp[tuple(tail)] ** 2))
    return total * s ** (g.dimension - 2)


def gradient_sq_density(f: GridField) -> np.ndarray:
    """Per-node |grad phi|^2 using right-looking differences (zero past walls).

    The low-wall jump is folded onto the first node plane so that
    s^d * sum(density) equals `gradient_energy` exactly.
    """
    g = f.grid
    s = g.spacing
    dens = np.zeros((g.n,) * g.dimension)
    for comp in f.values:
        for axis in range(g.dimension):
            dens += _forward_diff(comp, axis, s) ** 2
            lead = [slice(None)] * g.dimension
            lead[axis] = 0
            dens[tuple(lead)] += (comp[tuple(lead)] / s) ** 2
    return dens


def _cell_blocks(f: np.ndarray, m: int, d: int) -> np.ndarray:
    """Reshape an (n,)*d node array into cell blocks of m^d nodes."""
    n = f.shape[0]
    if (n + 1) % m != 0:
        raise ValueError(f"cells of {m} nodes do not align with n = {n}")
    cells = (n + 1) // m
    pad = np.zeros((n + 1,) * d)
    pad[(slice(0, n),) * d] = f
    shape = [x for _ in range(d) for x in (cells, m)]
    return pad.reshape(shape)


def cell_averages(f: GridField, tau: float) -> np.ndarray:
    """Mean of |phi|^2-style node values over every cell of size tau.

    ``f`` must be scalar (pass a magnitude field for vectors); tau must be an
    integer multiple of the spacing with cells tiling the box.  Nodes on a
    shared cell face belong to the lower cell; the final (wall) plane of the
    padded partition carries the zero extension and contributes no mass, so
    sum(averages) * tau^d == s^d * sum(f) exactly.
    """
    g = f.grid
    m = int(round(tau / g.spacing))
    if abs(m * g.spacing - tau) > 1e-9 * tau or m < 1:
        raise ValueError(f"tau = {tau} is not a multiple of the spacing {g.spacing}")
    # wall plane appended by _cell_blocks carries the zero extension; dividing
    # by the full m^d keeps partition additivity exact
    blocks = _cell_blocks(f.values[0], m, g.dimension)
    return blocks.mean(axis=tuple(range(1, 2 * g.dimension, 2)))


def cell_average(f: GridField, tau: float, z) -> float:
    """Average over the single cell tau * (z + Q), z indexed from the box corner."""
    avg = cell_averages(f, tau)
    return float(avg[tuple(np.asarray(z, dtype=int))])


def _bump_kernel(d: int, radius: int) -> np.ndarray:
    """Discretized (1 - |x|^2)^2 bump on |x| < 1, renormalized to unit sum."""
    ax = np.arange(-radius, radius + 1) / (radius + 1.0)
    mesh = np.meshgrid(*[ax] * d, indexing="ij")
    r2 = sum(m**2 for m in mesh)
    ker = np.where(r2 < 1.0, (1.0 - r2) ** 2, 0.0)
    return ker / ker.sum()


def mollify(f: GridField, delta: float) -> GridField:
    """Convolve with a compactly supported bump of radius delta (unit mass).

    Contracts every L^p norm (convex combination of shifts); support grows by
    at most delta per direction.  delta below the spacing is rejected because
    the discrete kernel would degenerate to identity.
    """
    s = f.grid.spacing
    if delta < s:
        raise ValueError(f"delta = {delta} is below the grid spacing {s}")
    radius = int(delta / s)
    ker = _bump_kernel(f.grid.dimension, radius)
    out = np.stack([ndimage.convolve(c, ker, mode="constant", cval=0.0)
                    for c in f.values])
    return GridField(f.grid, out)


def truncate_eps(f: GridField, eps_sqrt: float) -> GridField:
    """Magnitude clamp min(|phi|, eps_sqrt) used by the small-values split."""
    if eps_sqrt < 0:
        raise ValueError("eps_sqrt must be nonnegative")
    if f.components == 1:
        mag = np.abs(f.values[0])
    else:
        mag = np.sqrt(f.magnitude_sq())
    return GridField(f.grid, np.minimum(mag, eps_sqrt))


def truncate_r(f: GridField, r: float) -> GridField:
    """Componentwise clamp min(|phi_j|, r) * sign(phi_j)."""
    if r <= 0:
        raise ValueError("truncation radius must be positive")
    return GridField(f.grid, np.clip(f.values, -r, r))


def support_measure(f: GridField) -> float:
    """Lebesgue measure of {phi != 0} with the floating-point zero threshold."""
    m2 = f.magnitude_sq()
    peak = m2.max()
    if peak == 0.0:
        return 0.0
    s = f.grid.spacing
    return float(np.count_nonzero(m2 > SUPPORT_RTOL * peak) * s**f.grid.dimension)


@dataclass
class SobolevReport:
    q: float
    lhs: float  # ||phi||_q
    rhs: float  # interpolation bound without its constant
    ratio: float


def check_sobolev(f: GridField, q: float) -> SobolevReport:
    """Evaluate the multiplicative Sobolev inequality and its empirical ratio.

    d = 2 uses ||phi||_q <= C ||phi||_2^(2/q) ||grad phi||_2^(1-2/q) for q > 2;
    d >= 3 fixes q = 2 / (1 - 2/d) and uses C ||grad phi||_2.
    """
    d = f.grid.dimension
    if d == 2:
        if q <= 2:
            raise ValueError("d = 2 requires q > 2")
        rhs = f.norm_l2() ** (2.0 / q) * np.sqrt(gradient_energy(f)) ** (1.0 - 2.0 / q)
    else:
        q_star = 2.0 / (1.0 - 2.0 / d)
        if abs(q - q_star) > 1e-12:
            raise ValueError(f"d = {d} supports only q = {q_star}")
        rhs = np.sqrt(gradient_energy(f))
    lhs = f.norm_lp(q)
    ratio = 0.0 if lhs == 0.0 else lhs / rhs
    return SobolevReport(q=q, lhs=lhs, rhs=float(rhs), ratio=float(ratio))


@dataclass
class PoincareReport:
    lhs: float
    volume_term: float
    grad_term: float  # rho^2 ||grad phi||^2 over Q+ (constant-free)
    required_c: float
    alpha_star: float


def check_poincare(f: GridField, qplus: np.ndarray, q0: np.ndarray,
                   q1: np.ndarray, alpha_star: float) -> PoincareReport:
    """Smallest C with ||phi||^2_{Q1} <= 2 a*^d ||phi||^2_{Q0} + rho^2 C ||grad||^2_{Q+}.

    The three sets are node bitmaps, Q0 and Q1 inside the convex hull window
    Q+, and the volume ratio |Q1| / |Q0| must not exceed alpha_star^d.
    """
    d = f.grid.dimension
    if q0.shape != q1.shape or q0.shape != qplus.shape:
        raise ValueError("set bitmaps must share the grid shape")
    if not (np.all(q0 <= qplus) and np.all(q1 <= qplus)):
        raise ValueError("Q0 and Q1 must lie inside Q+")
    n0, n1 = np.count_nonzero(q0), np.count_nonzero(q1)
    if n0 == 0 or n1 > alpha_star**d * n0:
        raise ValueError("volume ratio |Q1|/|Q0| exceeds alpha_star^d")
    s = f.grid.spacing
    m2 = f.magnitude_sq()
    lhs = s**d * float(m2[q1].sum())
    vol = 2.0 * alpha_star**d * s**d * float(m2[q0].sum())
    # diameter of the bounding box of Q+
    idx = np.argwhere(qplus)
    span = (idx.max(axis=0) - idx.min(axis=0) + 1) * s
    rho2 = float(np.sum(span**2))
    dens = gradient_sq_density(f)
    grad = rho2 * s**d * float(dens[qplus].sum())
    required = 0.0 if lhs <= vol else (lhs - vol) / grad
    return PoincareReport(lhs=lhs, volume_term=vol, grad_term=grad,
                          required_c=float(required), alpha_star=alpha_star)


# -- snapshots ---------------------------------------------------------------

def save_field(f: GridField, path) -> None:
    """One-line JSON header followed by raw little-endian float64 C-order data."""
    header = {"d": f.grid.dimension, "side": f.grid.side, "n": f.grid.n,
              "components": f.components}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_field(path) -> GridField:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        grid = Grid(header["d"], header["side"], header["n"])
        count = header["components"] * grid.node_count
        data = np.frombuffer(fh.read(), dtype="<f8", count=count)
    shape = (header["components"],) + (grid.n,) * grid.dimension
    return GridField(grid, data.reshape(shape).copy())


def field_to_csv(f: GridField, path) -> None:
    """Per-node CSV (coordinates then component values); small grids only."""
    mesh = f.grid.meshes()
    cols = [m.ravel() for m in mesh] + [c.ravel() for c in f.values]
    head = ",".join([f"x{j}" for j in range(f.grid.dimension)]
                    + [f"phi{k}" for k in range(f.components)])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=head, comments="")
