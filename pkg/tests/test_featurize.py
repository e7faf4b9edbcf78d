import numpy as np
import numpy.testing as npt
import pytest

from xtalssl.featurize import (
    CrystalGraph,
    GaussianBasis,
    build_graph,
    gaussian_expand,
    graph_from_json,
    graph_to_json,
    merge_graphs,
    with_edge_mask,
    with_node_mask,
)
from xtalssl.geometry import NeighborConfig, build_neighbor_list
from xtalssl.structure_io import CrystalStructure


class TestGaussianBasis:
    def test_default_has_41_centers(self):
        basis = GaussianBasis()
        assert basis.n_centers == 41
        npt.assert_allclose(basis.centers, np.arange(0.0, 8.0 + 1e-9, 0.2), atol=1e-12)

    def test_center_count_rounding(self):
        assert GaussianBasis(d_min=0.0, d_max=1.0, step=0.5).n_centers == 3
        assert GaussianBasis(d_min=0.0, d_max=1.1, step=0.5).n_centers == 3

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianBasis(d_min=2.0, d_max=1.0)
        with pytest.raises(ValueError):
            GaussianBasis(step=0.0)
        with pytest.raises(ValueError):
            GaussianBasis(var=-1.0)


class TestGaussianExpand:
    def test_peak_and_width(self):
        basis = GaussianBasis(d_min=0.0, d_max=2.0, step=1.0, var=0.04)
        f = gaussian_expand(1.0, basis)
        assert f.shape == (3,)
        assert f[1] == pytest.approx(1.0)
        # one sigma away the value is exp(-1)
        f2 = gaussian_expand(1.0 + np.sqrt(0.04), basis)
        assert f2[1] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_explicit_values(self):
        basis = GaussianBasis(d_min=0.0, d_max=8.0, step=0.2, var=0.04)
        f = gaussian_expand(2.5, basis)
        expected = np.exp(-((2.5 - basis.centers) ** 2) / 0.04)
        npt.assert_allclose(f, expected, rtol=1e-14)

    def test_lipschitz_smoothness(self):
        # |df/dd| for one gaussian is at most sqrt(2/var) * exp(-1/2)
        basis = GaussianBasis()
        bound = np.sqrt(2.0 / basis.var) * np.exp(-0.5)
        d = np.linspace(0.0, 8.0, 2000)
        feats = np.stack([gaussian_expand(x, basis) for x in d])
        deriv = np.abs(np.diff(feats, axis=0) / np.diff(d)[:, None])
        assert deriv.max() <= bound + 1e-6


def rock_salt(a=5.64):
    fr = [[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5],
          [0.5, 0.5, 0.5], [0, 0, 0.5], [0, 0.5, 0], [0.5, 0, 0]]
    z = [11, 11, 11, 11, 17, 17, 17, 17]
    return CrystalStructure(lattice=a * np.eye(3), atomic_numbers=z, frac_coords=fr)


class TestBuildGraph:
    def test_rock_salt_first_shell(self):
        s = rock_salt()
        nl = build_neighbor_list(s, NeighborConfig(cutoff=3.0, max_neighbors=6))
        g = build_graph(s, nl)
        assert g.n_nodes == 8
        assert g.n_edges == 48
        # every edge joins unlike elements at a/2
        za = g.node_elem[g.edges[:, 0]]
        zb = g.node_elem[g.edges[:, 1]]
        assert np.all(za != zb)
        peak = gaussian_expand(5.64 / 2, GaussianBasis())
        for row in g.edge_feat:
            npt.assert_allclose(row, peak, atol=1e-12)

    def test_masks_default_active(self):
        s = rock_salt()
        nl = build_neighbor_list(s, NeighborConfig(cutoff=3.0, max_neighbors=6))
        g = build_graph(s, nl)
        npt.assert_array_equal(g.node_mask, np.ones(8, dtype=np.int8))
        npt.assert_array_equal(g.edge_mask, np.ones(48, dtype=np.int8))

    def test_permutation_relabels_consistently(self):
        s = rock_salt()
        cfg = NeighborConfig(cutoff=3.0, max_neighbors=6)
        perm = np.array([3, 7, 0, 5, 2, 6, 1, 4])
        s2 = CrystalStructure(lattice=s.lattice,
                              atomic_numbers=s.atomic_numbers[perm],
                              frac_coords=s.frac_coords[perm])
        g1 = build_graph(s, build_neighbor_list(s, cfg))
        g2 = build_graph(s2, build_neighbor_list(s2, cfg))
        # multiset of (z_src, z_dst, rounded feature) must agree
        def sig(g):
            return sorted(
                (int(g.node_elem[a]), int(g.node_elem[b]), tuple(np.round(f, 9)))
                for (a, b), f in zip(g.edges, g.edge_feat)
            )
        assert sig(g1) == sig(g2)

    def test_zero_edge_graph(self):
        s = CrystalStructure(lattice=5.0 * np.eye(3), atomic_numbers=[14],
                             frac_coords=[[0.2, 0.2, 0.2]])
        nl = build_neighbor_list(s, NeighborConfig(cutoff=1.0, max_neighbors=4))
        g = build_graph(s, nl)
        assert g.n_nodes == 1
        assert g.n_edges == 0
        assert g.edge_feat.shape == (0, 41)


class TestMasks:
    def g(self):
        s = rock_salt()
        nl = build_neighbor_list(s, NeighborConfig(cutoff=3.0, max_neighbors=6))
        return build_graph(s, nl)

    def test_with_node_mask(self):
        g = self.g()
        mask = np.ones(8, dtype=np.int8)
        mask[2] = 0
        g2 = with_node_mask(g, mask)
        npt.assert_array_equal(g2.node_mask, mask)
        npt.assert_array_equal(g.node_mask, np.ones(8, dtype=np.int8))
        assert g2.edge_feat is g.edge_feat

    def test_with_edge_mask(self):
        g = self.g()
        mask = np.ones(48, dtype=np.int8)
        mask[[0, 5]] = 0
        g2 = with_edge_mask(g, mask)
        npt.assert_array_equal(g2.edge_mask, mask)
        npt.assert_array_equal(g.edge_mask, np.ones(48, dtype=np.int8))

    def test_mask_validation(self):
        g = self.g()
        with pytest.raises(ValueError):
            with_node_mask(g, np.full(8, 2, dtype=np.int8))
        with pytest.raises(ValueError):
            with_edge_mask(g, np.ones(5, dtype=np.int8))


class TestMergeGraphs:
    def test_offsets_and_segments(self):
        s = rock_salt()
        nl = build_neighbor_list(s, NeighborConfig(cutoff=3.0, max_neighbors=6))
        g = build_graph(s, nl)
        merged, seg = merge_graphs([g, g, g])
        assert merged.n_nodes == 24
        assert merged.n_edges == 144
        npt.assert_array_equal(seg, np.repeat([0, 1, 2], 8))
        npt.assert_array_equal(merged.edges[48:96], g.edges + 8)
        npt.assert_array_equal(merged.edges[96:], g.edges + 16)
        npt.assert_array_equal(merged.node_elem, np.tile(g.node_elem, 3))
        npt.assert_allclose(merged.edge_feat, np.tile(g.edge_feat, (3, 1)))

    def test_merge_zero_edge_member(self):
        s1 = CrystalStructure(lattice=5.0 * np.eye(3), atomic_numbers=[14],
                              frac_coords=[[0, 0, 0]])
        g1 = build_graph(s1, build_neighbor_list(s1, NeighborConfig(cutoff=1.0, max_neighbors=4)))
        s2 = rock_salt()
        g2 = build_graph(s2, build_neighbor_list(s2, NeighborConfig(cutoff=3.0, max_neighbors=6)))
        merged, seg = merge_graphs([g1, g2])
        assert merged.n_nodes == 9
        assert merged.n_edges == 48
        npt.assert_array_equal(merged.edges, g2.edges + 1)
        npt.assert_array_equal(seg, np.array([0] + [1] * 8))

    def test_merge_empty_list(self):
        with pytest.raises(ValueError):
            merge_graphs([])


class TestGraphJson:
    def test_round_trip(self):
        s = rock_salt()
        nl = build_neighbor_list(s, NeighborConfig(cutoff=3.0, max_neighbors=6))
        g = build_graph(s, nl)
        mask = np.ones(8, dtype=np.int8)
        mask[0] = 0
        g = with_node_mask(g, mask)
        g2, gid = graph_from_json(graph_to_json(g, id="nacl"))
        assert gid == "nacl"
        npt.assert_array_equal(g2.node_elem, g.node_elem)
        npt.assert_array_equal(g2.node_mask, g.node_mask)
        npt.assert_array_equal(g2.edges, g.edges)
        npt.assert_array_equal(g2.edge_mask, g.edge_mask)
        npt.assert_allclose(g2.edge_feat, g.edge_feat, rtol=0, atol=0)

    def test_round_trip_zero_edges(self):
        g = CrystalGraph(node_elem=np.array([14], dtype=np.int64),
                         node_mask=np.ones(1, dtype=np.int8),
                         edges=np.zeros((0, 2), dtype=np.int64),
                         edge_feat=np.zeros((0, 41)),
                         edge_mask=np.zeros(0, dtype=np.int8))
        g2, gid = graph_from_json(graph_to_json(g))
        assert gid is None
        assert g2.n_edges == 0
        assert g2.edge_feat.shape == (0, 41)

    def test_graph_validation(self):
        with pytest.raises(ValueError):
            CrystalGraph(node_elem=np.array([14], dtype=np.int64),
                         node_mask=np.ones(1, dtype=np.int8),
                         edges=np.array([[0, 1]], dtype=np.int64),
                         edge_feat=np.zeros((1, 41)),
                         edge_mask=np.ones(1, dtype=np.int8))
