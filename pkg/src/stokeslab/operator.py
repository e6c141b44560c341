"""Discrete quadratic form of the penalized operator and its matrix-free apply.

The operator is defined through its energy (Galerkin style), never by
discretizing a strong form:

    E(phi) = s^d * sum [ |grad phi|^2 + alpha^-1 (div phi)^2
                         + beta_scale * beta * V |phi|^2 ]

with forward differences, zero Dirichlet extension (wall jumps on both
sides), and the divergence summed over interior nodes only, so that exactly
divergence-free stream-function fields have energy independent of alpha.
Scalar fields (components = 1) carry no divergence penalty.

Restriction to a subbox keeps the parent grid and imposes the extra
Dirichlet condition through a node mask (projected form P A P), which also
covers subboxes clipped by the outer walls.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .grids import Grid, GridField, _backward_diff_t, _forward_diff

__all__ = ["EnergyForm", "assemble", "rayleigh_quotient", "restrict_to_subbox"]


@dataclass
class EnergyForm:
    """Symmetric nonnegative form; immutable after assembly, safe to share."""

    grid: Grid
    alpha: float
    beta: float
    potential: np.ndarray  # (n,)*d array with values in {0, 1}
    components: int
    beta_scale: float = 1.0
    mask: np.ndarray | None = None  # optional (n,)*d admissible-node bitmap
    _diag: np.ndarray | None = dc_field(default=None, repr=False)
    _scratch: np.ndarray | None = dc_field(default=None, repr=False)

    @property
    def beta_eff(self) -> float:
        return self.beta * self.beta_scale

    @property
    def ndof(self) -> int:
        return self.components * self.grid.node_count

    def _shape(self):
        return (self.components,) + (self.grid.n,) * self.grid.dimension

    # -- application ---------------------------------------------------------

    def apply(self, values: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """A phi with <A phi, phi> s^d = E(phi); accepts flat or shaped input.

        Inputs are assumed to respect the mask (the solver keeps iterates
        masked); outputs are projected back onto the mask.
        """
        shaped = values.reshape(self._shape())
        if out is None:
            out = np.empty_like(shaped)
        else:
            out = out.reshape(self._shape())
        if self.grid.dimension == 2 and self.components in (1, 2):
            self._apply_2d(shaped, out)
        else:
            self._apply_generic(shaped, out)
        if self.mask is not None:
            out *= self.mask
        return out.reshape(values.shape)

    def _apply_2d(self, u, out):
        from . import _kernels

        s = self.grid.spacing
        if self.components == 1:
            _kernels.apply_scalar_2d(u[0], self.potential, self.beta_eff,
                                     1.0 / s**2, out[0])
        else:
            if self._scratch is None or self._scratch.shape != (u[0].shape[1],):
                self._scratch = np.empty(u[0].shape[1])
            _kernels.apply_vector_2d(u[0], u[1], self.potential, self.beta_eff,
                                     1.0 / self.alpha, 1.0 / s, self._scratch,
                                     out[0], out[1])

    def _apply_generic(self, u, out):
        g = self.grid
        s = g.spacing
        bv = self.beta_eff * self.potential
        for k in range(self.components):
            acc = bv * u[k]
            for axis in range(g.dimension):
                comp = u[k]
                lap = 2.0 * comp
                moved = np.zeros_like(comp)
                src = [slice(None)] * g.dimension
                dst = [slice(None)] * g.dimension
                src[axis], dst[axis] = slice(1, None), slice(None, -1)
                moved[tuple(dst)] = comp[tuple(src)]
                lap = lap - moved
                moved = np.zeros_like(comp)
                src[axis], dst[axis] = slice(None, -1), slice(1, None)
                moved[tuple(dst)] = comp[tuple(src)]
                lap = lap - moved
                acc = acc + lap / s**2
            out[k] = acc
        if self.components == g.dimension:
            div = _forward_diff(u[0], 0, s)
            for j in range(1, g.dimension):
                div += _forward_diff(u[j], j, s)
            for k in range(g.dimension):
                out[k] += _backward_diff_t(div, k, s) / self.alpha

    def diag(self) -> np.ndarray:
        """Diagonal of A (Jacobi preconditioner); 1.0 on masked-out nodes."""
        if self._diag is None:
            g = self.grid
            s = g.spacing
            base = 2.0 * g.dimension / s**2 + self.beta_eff * self.potential
            d = np.broadcast_to(base, self._shape()).copy()
            if self.components == g.dimension:
                for k in range(g.dimension):
                    contrib = np.full((g.n,) * g.dimension, 2.0 / s**2)
                    lead = [slice(None)] * g.dimension
                    lead[k] = 0
                    contrib[tuple(lead)] = 1.0 / s**2
                    d[k] += contrib / self.alpha
            if self.mask is not None:
                d = np.where(self.mask, d, 1.0)
            self._diag = d
        return self._diag

    # -- energies ------------------------------------------------------------

    def project(self, values: np.ndarray) -> np.ndarray:
        if self.mask is None:
            return values
        shaped = values.reshape(self._shape()) * self.mask
        return shaped.reshape(values.shape)

    def energy(self, phi: GridField) -> float:
        """E(P phi); equals <A phi, phi> * s^d for masked phi."""
        self._check(phi)
        v = self.project(phi.values).reshape(-1)
        s = self.grid.spacing
        return float(v @ self.apply(v)) * s**self.grid.dimension

    def energy_density(self, phi: GridField) -> np.ndarray:
        """Pointwise |grad phi|^2 + alpha^-1 (div phi)^2 (no potential term).

        Low-wall jumps are folded onto the first node planes, so the s^d-sum
        over a node set approximates the integral of K_alpha over it.
        """
        self._check(phi)
        g = self.grid
        s = g.spacing
        dens = np.zeros((g.n,) * g.dimension)
        for comp in phi.values:
            for axis in range(g.dimension):
                dens += _forward_diff(comp, axis, s) ** 2
                lead = [slice(None)] * g.dimension
                lead[axis] = 0
                dens[tuple(lead)] += (comp[tuple(lead)] / s) ** 2
        if self.components == g.dimension:
            div = _forward_diff(phi.values[0], 0, s)
            for j in range(1, g.dimension):
                div += _forward_diff(phi.values[j], j, s)
            dens += div**2 / self.alpha
        return dens

    def potential_mass(self, phi: GridField) -> float:
        """||V_t^(1/2) phi||_2^2 without the beta factor."""
        self._check(phi)
        s = self.grid.spacing
        return float(np.sum(self.potential * phi.magnitude_sq())) * s**self.grid.dimension

    def _check(self, phi: GridField):
        if phi.grid.n != self.grid.n or phi.components != self.components:
            raise ValueError("field does not match the assembled form")

    # -- explicit matrices -----------------------------------------------

    def dof_mask(self) -> np.ndarray:
        """Flat boolean of admissible unknowns (all True when unmasked)."""
        if self.mask is None:
            return np.ones(self.ndof, dtype=bool)
        return np.broadcast_to(self.mask, self._shape()).reshape(-1).copy()

    def assemble_sparse(self) -> sp.csr_matrix:
        """Explicit CSR matrix over admissible unknowns (oracle/export only)."""
        g = self.grid
        n, s, d = g.n, g.spacing, g.dimension
        eye = sp.identity(n, format="csr")
        K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                     [-1, 0, 1], format="csr") / s**2
        D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], format="csr") / s

        def kron_chain(mats):
            out = mats[0]
            for m in mats[1:]:
                out = sp.kron(out, m, format="csr")
            return out

        lap = sp.csr_matrix((n**d, n**d))
        for axis in range(d):
            lap = lap + kron_chain([K if j == axis else eye for j in range(d)])
        pot = sp.diags(self.beta_eff * self.potential.ravel())
        block = lap + pot
        if self.components == 1:
            full = block.tocsr()
        else:
            divs = [kron_chain([D if j == axis else eye for j in range(d)])
                    for axis in range(d)]
            rows = []
            for k in range(self.components):
                row = []
                for m in range(self.components):
                    entry = divs[k].T @ divs[m] / self.alpha
                    if k == m:
                        entry = entry + block
                    row.append(entry)
                rows.append(row)
            full = sp.bmat(rows, format="csr")
        keep = np.flatnonzero(self.dof_mask())
        if keep.size == self.ndof:
            return full
        return full[keep][:, keep].tocsr()

    def export_coo(self, path) -> None:
        """Text export: `row col value` triplets, 1-based, header with sizes."""
        coo = self.assemble_sparse().tocoo()
        with open(path, "w") as fh:
            fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r + 1} {c + 1} {v:.17g}\n")


def assemble(grid: Grid, alpha: float, beta: float, potential: GridField,
             components: int | None = None, beta_scale: float = 1.0) -> EnergyForm:
    """Build the penalized form; potential values must be 0/1 node samples."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if potential.grid.n != grid.n or potential.grid.dimension != grid.dimension:
        raise ValueError("potential grid does not match")
    vals = potential.values[0]
    if not np.all((vals == 0) | (vals == 1)):
        raise ValueError("potential must be an indicator field")
    if components is None:
        components = grid.dimension
    return EnergyForm(grid=grid, alpha=float(alpha), beta=float(beta),
                      potential=np.ascontiguousarray(vals),
                      components=components, beta_scale=beta_scale)


def rayleigh_quotient(form: EnergyForm, phi: GridField) -> float:
    """E(phi) / ||phi||_2^2; invariant under rescaling of phi."""
    v = form.project(phi.values)
    s = form.grid.spacing
    nrm2 = float(np.sum(v**2)) * s**form.grid.dimension
    if nrm2 == 0.0:
        raise ValueError("Rayleigh quotient of the zero field")
    return form.energy(phi) / nrm2


def box_mask(grid: Grid, center: np.ndarray, half_side: float) -> np.ndarray:
    """Bitmap of nodes strictly inside the cube center + half_side * (-1, 1)^d."""
    ax = grid.axis()
    mask = np.ones((grid.n,) * grid.dimension, dtype=bool)
    for j in range(grid.dimension):
        inside = np.abs(ax - center[j]) < half_side
        shape = [1] * grid.dimension
        shape[j] = grid.n
        mask &= inside.reshape(shape)
    return mask


def restrict_to_subbox(form: EnergyForm, center, side_cells: int,
                       cell_size: float) -> EnergyForm:
    """Dirichlet restriction to the cube of ``side_cells`` cells at ``center``.

    ``center`` is a lattice index in cell units; the subbox is clipped by the
    parent walls, and the restriction is imposed through the node mask.
    """
    g = form.grid
    center = np.asarray(center, dtype=float) * cell_size
    if center.shape != (g.dimension,):
        raise ValueError("center must be a lattice index")
    half = 0.5 * side_cells * cell_size
    if np.any(np.abs(center) - half >= 0.5 * g.side):
        raise ValueError("subbox lies outside the grid box")
    mask = box_mask(g, center, half)
    if form.mask is not None:
        mask &= form.mask
    if not mask.any():
        raise ValueError("subbox contains no grid nodes")
    return EnergyForm(grid=g, alpha=form.alpha, beta=form.beta,
                      potential=form.potential, components=form.components,
                      beta_scale=form.beta_scale, mask=mask)
