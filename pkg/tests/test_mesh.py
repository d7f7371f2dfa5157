import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porowg.mesh import build_structured_mesh, dump_mesh, mesh_stats, read_mesh, refine_family


@pytest.mark.parametrize("dim,n,N,N_f,n_bd", [(2, 1, 2, 5, 4), (2, 2, 8, 16, 8), (3, 1, 6, 18, 12)])
def test_small_counts(dim, n, N, N_f, n_bd):
    stats = mesh_stats(build_structured_mesh(dim, n))
    assert (stats["N"], stats["N_f"], stats["n_boundary_facets"]) == (N, N_f, n_bd)


def test_unit_cube_volume():
    m = build_structured_mesh(3, 1)
    assert m.vertices.shape[0] == 8
    assert m.volumes.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(m.volumes > 0)


def test_refine_family_sizes():
    assert [m.n_elements for m in refine_family(2, 3)] == [512, 2048, 8192]
    assert [m.n_elements for m in refine_family(3, 2)] == [3072, 24576]
    one = refine_family(2, 1, start_n=3)[0]
    ref = build_structured_mesh(2, 3)
    assert np.array_equal(one.elements, ref.elements) and np.array_equal(one.vertices, ref.vertices)


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_structured_mesh(4, 2)
    with pytest.raises(ValueError):
        build_structured_mesh(2, 0)
    with pytest.raises(ValueError):
        refine_family(2, 0)


@settings(max_examples=12, deadline=None)
@given(dim=st.sampled_from([2, 3]), n=st.integers(1, 4))
def test_facets_are_distinct_vertex_subsets(dim, n):
    m = build_structured_mesh(dim, n)
    subsets = {tuple(sorted(c)) for e in m.elements for c in itertools.combinations(e, dim)}
    assert m.n_facets == len(subsets)
    assert {tuple(f) for f in np.sort(m.facets, axis=1)} == subsets


@settings(max_examples=12, deadline=None)
@given(dim=st.sampled_from([2, 3]), n=st.integers(1, 4))
def test_interior_facet_orientation(dim, n):
    m = build_structured_mesh(dim, n)
    signs = {}
    for k, (fids, sg) in enumerate(zip(m.element_facets, m.element_facet_signs)):
        for f, s in zip(fids, sg):
            signs.setdefault(f, []).append(s)
    for f in m.interior_facets:
        assert sorted(signs[f]) == [-1, 1]
    for f in m.boundary_facets:
        assert signs[f] == [1]
    # outward normals of each element close up
    for k in range(m.n_elements):
        fids = m.element_facets[k]
        flux = (m.facet_normals[fids] * (m.element_facet_signs[k] * m.facet_measures[fids])[:, None]).sum(axis=0)
        assert np.allclose(flux, 0.0, atol=1e-14)


@given(n=st.integers(1, 12))
def test_euler_characteristic_2d(n):
    m = build_structured_mesh(2, n)
    assert m.vertices.shape[0] - m.n_facets + m.n_elements == 1


def test_mesh_roundtrip(tmp_path):
    m = build_structured_mesh(3, 2)
    dump_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.elements, m.elements)
    assert np.array_equal(back.facets, m.facets)
    assert np.allclose(back.volumes, m.volumes)


def test_read_mesh_rejects_mismatched_facets(tmp_path):
    m = build_structured_mesh(2, 1)
    dump_mesh(m, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    lines[-1] = "0 3"
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        read_mesh(tmp_path / "bad.txt")
