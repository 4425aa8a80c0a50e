import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmposterior.comparison import Rope, compare, gap_distribution
from cmposterior.core import CMError, ConfigError, JointSampleMatrix


def jsm(columns, x):
    return JointSampleMatrix(tuple(columns), np.asarray(x, dtype=float))


def brute_force(x, eps):
    """Row-by-row classification with plain Python comparisons."""
    counts = {"rope": 0}
    for row in x:
        if all(abs(v) <= e for v, e in zip(row, eps)):
            counts["rope"] += 1
            continue
        key = "".join("+" if v > 0 else "-" if v < 0 else "0" for v in row)
        counts[key] = counts.get(key, 0) + 1
    return {k: v / len(x) for k, v in counts.items()}


def test_rope_parse():
    assert Rope.parse("0.01, 0.02", 2).eps.tolist() == [0.01, 0.02]
    with pytest.raises(ConfigError):
        Rope.parse("0.01", 2)
    with pytest.raises(ConfigError):
        Rope.parse("a,b", 2)
    with pytest.raises(ConfigError):
        Rope((0.0,))
    assert Rope.square(3).eps.tolist() == [0.01] * 3


def test_boundary_counts_as_inside():
    gap = jsm(["a", "b"], [[0.5, -0.5], [0.5000001, 0.0], [-0.5, 0.5]])
    rep = compare(gap, Rope((0.5, 0.5)))
    assert rep.p_equivalent == pytest.approx(2 / 3)
    assert rep.orthant_probs["+0"] == pytest.approx(1 / 3)
    assert rep.band_probs["+0"] == pytest.approx(1 / 3)


def test_matches_brute_force():
    rng = np.random.default_rng(3)
    x = rng.normal(0.01, 0.02, size=(5000, 2))
    x[:50, 1] = 0.0
    eps = (0.01, 0.015)
    rep = compare(jsm(["a", "b"], x), Rope(eps))
    oracle = brute_force(x, eps)
    assert rep.p_equivalent == pytest.approx(oracle.pop("rope"), abs=1e-15)
    for key, p in oracle.items():
        assert rep.orthant_probs[key] == pytest.approx(p, abs=1e-15)
    assert rep.p_a_outperforms == pytest.approx(oracle["++"])
    assert rep.p_b_outperforms == pytest.approx(oracle["--"])
    assert len(rep.band_probs) == 8


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 300), st.integers(1, 3)),
           elements=st.floats(-0.1, 0.1, allow_nan=False)),
    st.floats(1e-4, 0.05),
)
def test_partitions_sum_to_one_and_swap_is_antisymmetric(x, eps):
    d = x.shape[1]
    rope = Rope.square(d, eps)
    rep = compare(jsm([f"m{i}" for i in range(d)], x), rope)
    assert rep.p_equivalent + sum(rep.orthant_probs.values()) == pytest.approx(1.0, abs=1e-9)
    assert rep.p_equivalent + sum(rep.band_probs.values()) == pytest.approx(1.0, abs=1e-9)
    flip = compare(jsm([f"m{i}" for i in range(d)], -x), rope)
    assert flip.p_equivalent == rep.p_equivalent
    assert flip.p_a_outperforms == rep.p_b_outperforms
    assert flip.p_b_outperforms == rep.p_a_outperforms
    swap = {"+": "-", "-": "+", "0": "0"}
    for key, p in rep.orthant_probs.items():
        mirrored = "".join(swap[c] for c in key)
        assert flip.orthant_probs.get(mirrored, 0.0) == p


def test_gap_orientation():
    cols = ("accuracy", "fpr", "eop", "ar")
    a = jsm(cols, [[0.9, 0.1, 0.05, 0.4]])
    b = jsm(cols, [[0.8, 0.2, -0.14, 0.3]])
    g = gap_distribution(a, b).samples[0]
    assert g == pytest.approx([0.1, 0.1, 0.09, 0.1])
    raw = gap_distribution(a, b, mode="raw").samples[0]
    assert raw == pytest.approx([0.1, -0.1, 0.19, 0.1])
    custom = gap_distribution(a, b, orientation={"accuracy": "lower"}).samples[0]
    assert custom[0] == pytest.approx(-0.1)


def test_swap_of_methods_negates_gap():
    rng = np.random.default_rng(0)
    cols = ("accuracy", "eop")
    a = jsm(cols, rng.normal(size=(100, 2)))
    b = jsm(cols, rng.normal(size=(100, 2)))
    for mode in ("oriented", "raw"):
        np.testing.assert_array_equal(gap_distribution(a, b, mode=mode).samples,
                                      -gap_distribution(b, a, mode=mode).samples)


def test_flagged_rows_excluded():
    a = jsm(["tpr"], [[0.9], [np.nan], [0.5]])
    b = jsm(["tpr"], [[0.5], [0.5], [0.5]])
    rep = compare(gap_distribution(a, b), Rope((0.01,)))
    assert rep.n_used == 2 and rep.n_flagged == 1
    assert rep.p_equivalent == 0.5 and rep.p_a_outperforms == 0.5


def test_errors():
    a = jsm(["accuracy"], [[0.5]])
    with pytest.raises(ConfigError):
        gap_distribution(a, jsm(["tpr"], [[0.5]]))
    with pytest.raises(ConfigError):
        gap_distribution(a, jsm(["accuracy"], [[0.5], [0.4]]))
    with pytest.raises(ConfigError):
        gap_distribution(a, a, mode="sideways")
    with pytest.raises(ConfigError):
        gap_distribution(a, a, orientation={"tpr": "higher"})
    with pytest.raises(ConfigError):
        compare(gap_distribution(a, a), Rope((0.1, 0.1)))
    with pytest.raises(CMError):
        compare(jsm(["x"], [[np.nan]]), Rope((0.1,)))
