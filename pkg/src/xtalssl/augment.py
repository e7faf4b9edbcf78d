"""Stochastic augmentations: random perturbation, atom masking, edge masking.

Every operation is a deterministic function of (input, rng state).  The
perturbation moves atoms in cartesian space before graph construction;
masking flips mask bits on an already-built graph and never touches
topology or feature values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .featurize import CrystalGraph, GaussianBasis, build_graph, with_edge_mask, with_node_mask
from .geometry import NeighborConfig, build_neighbor_list
from .structure_io import CrystalStructure, wrap_frac


class NoAugmentationEnabled(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    enable_perturb: bool = True
    enable_atom_mask: bool = True
    enable_edge_mask: bool = True
    max_displacement: float = 0.05  # angstrom
    mask_fraction: float = 0.10

    def __post_init__(self):
        if self.max_displacement < 0:
            raise ValueError("max_displacement must be >= 0")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must lie in [0, 1]")

    @property
    def any_enabled(self) -> bool:
        return self.enable_perturb or self.enable_atom_mask or self.enable_edge_mask


def random_perturb(s: CrystalStructure, rng: np.random.Generator, max_disp: float) -> CrystalStructure:
    """Displace every site by r * u, r ~ Uniform[0, max_disp], u uniform on the sphere."""
    if max_disp < 0:
        raise ValueError("max_disp must be >= 0")
    if max_disp == 0:
        return s
    directions = rng.normal(size=(s.n_sites, 3))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms < 1e-300] = 1.0
    directions /= norms
    radii = rng.uniform(0.0, max_disp, size=(s.n_sites, 1))
    cart_disp = radii * directions
    frac_disp = cart_disp @ np.linalg.inv(s.lattice)
    return CrystalStructure(
        lattice=s.lattice,
        atomic_numbers=s.atomic_numbers,
        frac_coords=wrap_frac(s.frac_coords + frac_disp),
    )


def _mask_count(n: int, fraction: float) -> int:
    # at least one item is masked whenever the fraction is positive,
    # otherwise 10% masking would be a no-op on small cells; half-up rounding
    if fraction == 0.0 or n == 0:
        return 0
    return max(1, int(math.floor(fraction * n + 0.5)))


def mask_atoms(g: CrystalGraph, rng: np.random.Generator, fraction: float) -> CrystalGraph:
    """Zero the node_mask of max(1, round(fraction*N)) uniformly chosen nodes."""
    m = _mask_count(g.n_nodes, fraction)
    if m == 0:
        return g
    chosen = rng.choice(g.n_nodes, size=m, replace=False)
    mask = g.node_mask.copy()
    mask[chosen] = 0
    return with_node_mask(g, mask)


def mask_edges(g: CrystalGraph, rng: np.random.Generator, fraction: float) -> CrystalGraph:
    """Zero the edge_mask of max(1, round(fraction*|E|)) uniformly chosen edges."""
    m = _mask_count(g.n_edges, fraction)
    if m == 0:
        return g
    chosen = rng.choice(g.n_edges, size=m, replace=False)
    mask = g.edge_mask.copy()
    mask[chosen] = 0
    return with_edge_mask(g, mask)


def augment_once(
    s: CrystalStructure,
    cfg: AugmentConfig,
    neighbor_cfg: NeighborConfig,
    basis: GaussianBasis,
    rng: np.random.Generator,
) -> CrystalGraph:
    """One augmented view: perturb (pre-graph), then mask (post-graph)."""
    if cfg.enable_perturb:
        s = random_perturb(s, rng, cfg.max_displacement)
    g = build_graph(s, build_neighbor_list(s, neighbor_cfg), basis)
    if cfg.enable_atom_mask:
        g = mask_atoms(g, rng, cfg.mask_fraction)
    if cfg.enable_edge_mask:
        g = mask_edges(g, rng, cfg.mask_fraction)
    return g


def make_views(
    s: CrystalStructure,
    cfg: AugmentConfig,
    neighbor_cfg: NeighborConfig,
    basis: GaussianBasis,
    rng: np.random.Generator,
) -> tuple[CrystalGraph, CrystalGraph]:
    """Two independently augmented graphs of the same structure."""
    if not cfg.any_enabled:
        raise NoAugmentationEnabled("at least one augmentation must be enabled")
    view_a = augment_once(s, cfg, neighbor_cfg, basis, rng)
    view_b = augment_once(s, cfg, neighbor_cfg, basis, rng)
    return view_a, view_b
