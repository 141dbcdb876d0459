"""Atomic measures, moments, simplex projection, dictionaries."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mesomag import (
    AtomicYoungMeasure,
    Grid,
    atom_dictionary,
    dirac,
    measure_to_text,
    project_simplex,
    uniform_dictionary_measure,
)


def _grid1(n=4):
    return Grid((n,), (1.0 / n,))


# -- dirac embedding ----------------------------------------------------------


def test_dirac_reproduces_field_moments():
    g = _grid1(5)
    m = np.linspace(-0.5, 0.5, 5)[:, None]
    nu = dirac(g, m)
    mp = nu.moments()
    assert np.allclose(mp.m, m)
    assert np.allclose(mp.Lnu[:, :-1], m)
    assert np.allclose(mp.Lnu[:, -1], (m ** 2).sum(axis=1))
    # a single atom carries no spread
    assert np.allclose(mp.jensen_gap(), 0.0)


def test_dirac_rejects_atoms_outside_ball():
    g = _grid1(2)
    with pytest.raises(ValueError):
        dirac(g, np.array([[0.5], [3.0]]), r_max=1.0)


# -- moments and the two-atom example -----------------------------------------


def test_two_atom_measure_moments():
    g = _grid1(3)
    atoms = np.array([[-1.0], [1.0]])
    w = np.array([[0.5, 0.5], [0.25, 0.75], [1.0, 0.0]])
    nu = AtomicYoungMeasure(g, atoms, w)
    mp = nu.moments()
    assert np.allclose(mp.m[:, 0], [0.0, 0.5, -1.0])
    assert np.allclose(mp.Lnu[:, 1], 1.0)
    # gap = second moment - |mean|^2
    assert np.allclose(mp.jensen_gap(), [1.0, 0.75, 0.0])
    assert np.all(mp.jensen_gap() >= -1e-12)


def test_pth_moment_matches_second_moment_slot():
    rng = np.random.default_rng(0)
    g = _grid1(6)
    atoms = rng.normal(size=(7, 2))
    w = project_simplex(rng.random((6, 7)))
    nu = AtomicYoungMeasure(Grid((6,), (1.0 / 6,)), atoms, w)
    assert np.allclose(nu.pth_moment(2.0), nu.moments().Lnu[:, -1], atol=1e-14)
    assert np.all(nu.pth_moment(6.0) >= 0.0)


def test_per_cell_atoms_supported():
    g = _grid1(2)
    atoms = np.array([[[0.0], [1.0]], [[2.0], [3.0]]])
    w = np.array([[0.5, 0.5], [0.0, 1.0]])
    nu = AtomicYoungMeasure(g, atoms, w)
    assert not nu.shared_atoms
    assert np.allclose(nu.moments().m[:, 0], [0.5, 3.0])


def test_constructor_rejects_bad_weights():
    g = _grid1(2)
    atoms = np.zeros((2, 1))
    with pytest.raises(ValueError):
        AtomicYoungMeasure(g, atoms, np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        AtomicYoungMeasure(g, atoms, np.array([[1.1, -0.1], [0.5, 0.5]]))


# -- simplex projection --------------------------------------------------------


def test_project_simplex_known_points():
    assert np.allclose(project_simplex(np.array([[1.0, 1.0]])), [[0.5, 0.5]])
    assert np.allclose(project_simplex(np.array([[2.0, 0.0]])), [[1.0, 0.0]])
    assert np.allclose(
        project_simplex(np.array([[0.3, 0.3, 0.4]])), [[0.3, 0.3, 0.4]]
    )


@settings(derandomize=True, max_examples=200)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(1, 5), st.integers(1, 8)),
        elements=st.floats(-10, 10, allow_nan=False),
    )
)
def test_project_simplex_properties(x):
    w = project_simplex(x)
    assert np.all(w >= 0.0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    # idempotence on the result
    assert np.allclose(project_simplex(w), w, atol=1e-12)


# -- pruning and serialization --------------------------------------------------


def test_prune_drops_tiny_weights_and_renormalizes():
    g = _grid1(1)
    atoms = np.array([[-1.0], [0.0], [1.0]])
    w = np.array([[0.6, 1e-16, 0.4 - 1e-16]])
    nu = AtomicYoungMeasure(g, atoms, w).prune()
    assert np.count_nonzero(nu.weights) == 2
    assert np.allclose(nu.weights.sum(axis=1), 1.0)
    assert abs(nu.moments().m[0, 0] - (-0.2)) < 1e-12


def test_measure_to_text_roundtrip_values():
    g = _grid1(2)
    atoms = np.array([[-1.0, 0.0], [0.25, 0.5]])
    w = np.array([[0.75, 0.25], [0.0, 1.0]])
    nu = AtomicYoungMeasure(Grid((2,), (0.5,)), atoms, w)
    text = measure_to_text(nu)
    lines = [ln for ln in text.strip().splitlines() if not ln.startswith("#")]
    # zero-weight rows are omitted: two atoms in cell 0, one in cell 1
    assert len(lines) == 3
    first = lines[0].split()
    assert int(first[0]) == 0
    assert float(first[1]) == -1.0 and float(first[3]) == 0.75
    assert int(lines[2].split()[0]) == 1 and float(lines[2].split()[3]) == 1.0


# -- dictionaries ---------------------------------------------------------------


def test_atom_dictionary_1d():
    d = atom_dictionary(1, 2.0)
    assert d.shape == (33, 1)
    assert d.min() == -2.0 and d.max() == 2.0
    assert np.any(d == 0.0)
    # symmetric about the origin
    assert np.allclose(np.sort(d[:, 0]), np.sort(-d[:, 0]))


def test_atom_dictionary_2d():
    d = atom_dictionary(2, 1.5)
    assert d.shape == (109, 2)
    r = np.linalg.norm(d, axis=1)
    assert r.max() == pytest.approx(1.5)
    assert np.count_nonzero(r < 1e-15) == 1
    # no duplicate atoms
    assert len(np.unique(np.round(d, 12), axis=0)) == len(d)


def test_uniform_dictionary_measure():
    g = _grid1(3)
    d = atom_dictionary(1, 1.0)
    nu = uniform_dictionary_measure(g, d)
    assert nu.weights.shape == (3, 33)
    assert np.allclose(nu.weights, 1.0 / 33)
    # symmetric dictionary with uniform weights has zero mean
    assert np.allclose(nu.moments().m, 0.0)
