import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_components, tree_components, variation_oracle
from scenetext.component_tree import (DARK_ON_LIGHT, LIGHT_ON_DARK, MserParams, RegularizationParams,
                                      build_er_tree, compute_variation, format_tree, mser_candidates,
                                      regularize, regularize_array, select_msers, to_grayscale)

small_images = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                      elements=st.integers(0, 7))


def assert_matches_oracle(img):
    tree = build_er_tree(img)
    ref = brute_force_components(img)
    got = tree_components(tree)
    assert set(got) == set(ref)
    for key, r in ref.items():
        g = got[key]
        assert g["level"] == r["level"]
        assert g["area"] == g["stored_area"] == r["area"]
        assert g["bbox"] == g["stored_bbox"] == r["bbox"]
        assert g["parent"] == r["parent"]


# -- grayscale -------------------------------------------------------------

@pytest.mark.parametrize("rgb,expected", [((255, 255, 255), 255), ((0, 0, 0), 0), ((255, 0, 0), 76),
                                          ((0, 255, 0), 150), ((0, 0, 255), 29)])
def test_luma_examples(rgb, expected):
    img = np.array([[rgb]], dtype=np.uint8)
    assert to_grayscale(img)[0, 0] == expected


def test_luma_matches_rounded_formula_on_random_pixels():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (40, 40, 3)).astype(np.uint8)
    r, g, b = (img[..., i].astype(float) for i in range(3))
    expected = np.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)
    assert np.array_equal(to_grayscale(img), expected.astype(np.uint8))


def test_zero_dimension_image_rejected():
    with pytest.raises(ValueError):
        to_grayscale(np.zeros((0, 4, 3), np.uint8))
    with pytest.raises(ValueError):
        build_er_tree(np.zeros((3, 0), np.uint8))


# -- tree construction -----------------------------------------------------

def test_constant_image_single_node():
    tree = build_er_tree(np.full((5, 7), 42, np.uint8))
    assert tree.n_nodes == 1
    assert tree.area[tree.root] == 35
    assert tree.parent[tree.root] == -1


def test_dark_square_on_white():
    img = np.full((20, 30), 255, np.uint8)
    img[4:10, 7:15] = 0
    tree = build_er_tree(img)
    assert tree.n_nodes == 2
    kids = tree.children(tree.root)
    assert len(kids) == 1
    assert tree.xywh(kids[0]) == (7, 4, 8, 6)
    assert tree.area[kids[0]] == 48


def test_random_8x8_matches_labeling_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert_matches_oracle(rng.integers(0, 256, (8, 8)).astype(np.uint8))


@settings(max_examples=150, deadline=None)
@given(small_images)
def test_tree_matches_labeling_oracle(img):
    assert_matches_oracle(img)


@settings(max_examples=100, deadline=None)
@given(small_images)
def test_area_conservation_and_nesting(img):
    tree = build_er_tree(img)
    own = np.bincount(tree.node_of.ravel(), minlength=tree.n_nodes)
    child_sum = np.zeros(tree.n_nodes, np.int64)
    np.add.at(child_sum, tree.parent[tree.parent >= 0], tree.area[tree.parent >= 0])
    assert np.array_equal(tree.area, own + child_sum)
    assert tree.area[tree.root] == img.size
    for i in range(tree.n_nodes - 1):
        p = tree.parent[i]
        assert p > i
        assert tree.level[p] > tree.level[i]
        b, pb = tree.bbox[i], tree.bbox[p]
        assert pb[0] <= b[0] and pb[1] <= b[1] and pb[2] >= b[2] and pb[3] >= b[3]


@settings(max_examples=60, deadline=None)
@given(small_images)
def test_children_disjoint_and_inside_parent(img):
    tree = build_er_tree(img)
    for i in range(tree.n_nodes):
        x0, y0, _, _ = tree.bbox[i]
        full = np.zeros(img.shape, bool)
        m = tree.mask(i)
        full[y0:y0 + m.shape[0], x0:x0 + m.shape[1]] = m
        assert full.sum() == tree.area[i]
        seen = np.zeros(img.shape, bool)
        for c in tree.children(i):
            cx0, cy0, _, _ = tree.bbox[c]
            cm = tree.mask(c)
            child = np.zeros(img.shape, bool)
            child[cy0:cy0 + cm.shape[0], cx0:cx0 + cm.shape[1]] = cm
            assert not (child & seen).any()
            assert not (child & ~full).any()
            seen |= child


@settings(max_examples=60, deadline=None)
@given(small_images)
def test_polarity_duality(img):
    a = build_er_tree(img, DARK_ON_LIGHT)
    b = build_er_tree(255 - img, LIGHT_ON_DARK)
    pairs_a = sorted((int(s), tuple(bb)) for s, bb in zip(a.area, a.bbox.tolist()))
    pairs_b = sorted((int(s), tuple(bb)) for s, bb in zip(b.area, b.bbox.tolist()))
    assert pairs_a == pairs_b


def test_color_sums_accumulate_region_pixels():
    rng = np.random.default_rng(5)
    gray = rng.integers(0, 6, (12, 12)).astype(np.uint8)
    color = rng.integers(0, 256, (12, 12, 3)).astype(np.uint8)
    tree = build_er_tree(gray, color=color)
    for i in range(tree.n_nodes):
        x0, y0, _, _ = tree.bbox[i]
        m = tree.mask(i)
        crop = color[y0:y0 + m.shape[0], x0:x0 + m.shape[1]].astype(float)
        assert np.allclose(tree.color_sum[i], crop[m].sum(axis=0))


def test_large_image_builds_quickly():
    import time

    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (480, 640)).astype(np.uint8)
    build_er_tree(img[:8, :8])  # compile
    t = time.perf_counter()
    tree = build_er_tree(img)
    assert time.perf_counter() - t < 2.0
    assert tree.area[tree.root] == img.size


# -- variation ---------------------------------------------------------------

def ramp(h=8, w=40, step=3):
    return np.tile((np.arange(w) * step).astype(np.uint8), (h, 1))


def valley(h=10, w=41):
    x = np.arange(w)
    row = np.minimum(np.abs(x - 10), np.abs(x - 30)) * 6
    img = np.tile(row.astype(np.uint8), (h, 1))
    img[:, 20] = 200
    return img


@pytest.mark.parametrize("img", [ramp(), ramp(step=1), valley()], ids=["ramp3", "ramp1", "valley"])
@pytest.mark.parametrize("delta", [1, 2, 5, 17])
def test_variation_matches_per_level_area_table(img, delta):
    tree = compute_variation(build_er_tree(img), delta)
    ref = variation_oracle(img, delta)
    got = tree_components(tree)
    assert set(ref) == set(got)
    for key, v in ref.items():
        assert tree.variation[got[key]["node"]] == v


@settings(max_examples=60, deadline=None)
@given(small_images, st.integers(1, 4))
def test_variation_matches_oracle_on_random_images(img, delta):
    tree = compute_variation(build_er_tree(img), delta)
    ref = variation_oracle(img, delta)
    got = tree_components(tree)
    for key, v in ref.items():
        assert tree.variation[got[key]["node"]] == v
    assert np.all(tree.variation >= 0)


def test_variation_substitution_examples():
    # 10x10 dark square (level 0) inside a 10x12 region at level 1
    img = np.full((30, 30), 255, np.uint8)
    img[5:15, 5:17] = 1
    img[5:15, 5:15] = 0
    tree = compute_variation(build_er_tree(img), 1)
    sq = int(np.argmin(tree.level))
    assert tree.area[sq] == 100
    assert tree.variation[sq] == pytest.approx(0.2)
    img2 = np.full((30, 30), 255, np.uint8)
    img2[5:15, 5:15] = 0
    tree2 = compute_variation(build_er_tree(img2), 1)
    # no pixels at levels 1..254: the square is unchanged one level up
    assert tree2.variation[int(np.argmin(tree2.level))] == 0.0
    tree3 = compute_variation(build_er_tree(img2), 255)
    assert tree3.variation[int(np.argmin(tree3.level))] == pytest.approx((900 - 100) / 100)


def test_delta_must_be_positive():
    with pytest.raises(ValueError):
        compute_variation(build_er_tree(ramp()), 0)
    with pytest.raises(ValueError):
        MserParams(delta=0)


# -- regularization -----------------------------------------------------------

def test_regularization_examples():
    p = RegularizationParams()
    assert regularize(0.3, 1.0, p) == 0.3
    assert abs(regularize(0.3, 1.4, p) - 0.306) <= 1e-12
    assert abs(regularize(0.3, 0.5, p) - 0.316) <= 1e-12


def test_regularization_sign_switch():
    p = RegularizationParams(penalty_sign=-1.0)
    assert abs(regularize(0.3, 1.4, p) - 0.294) <= 1e-12
    assert abs(regularize(0.3, 0.5, p) - 0.284) <= 1e-12


@given(st.floats(0, 5), st.floats(0.7, 1.2))
def test_regularization_identity_inside_band(v, a):
    assert regularize(v, a) == v


@given(st.floats(0, 5), st.floats(0.01, 10))
def test_regularization_array_matches_scalar(v, a):
    assert regularize_array(np.array([v]), np.array([a]))[0] == pytest.approx(regularize(v, a), abs=1e-15)


def test_regularization_continuous_at_band_edges():
    for edge in (0.7, 1.2):
        for eps in (1e-9, 1e-12):
            assert abs(regularize(0.3, edge + eps) - regularize(0.3, edge)) < 1e-8
            assert abs(regularize(0.3, edge - eps) - regularize(0.3, edge)) < 1e-8


def test_regularization_rejects_bad_input():
    with pytest.raises(ValueError):
        regularize(0.3, 0.0)
    with pytest.raises(ValueError):
        RegularizationParams(theta1=-1)
    with pytest.raises(ValueError):
        RegularizationParams(a_min=2.0, a_max=1.0)


# -- MSER selection -------------------------------------------------------------

def chain_image(levels):
    """Nested centered squares; ``levels`` from the innermost outwards."""
    n = len(levels)
    size = 4 * n + 6
    img = np.full((size, size), 255, np.uint8)
    for k in reversed(range(n)):
        lo = 3 + 2 * (n - 1 - k)
        img[lo:size - lo, lo:size - lo] = levels[k]
    return img


def oracle_selection(tree, params):
    """Each rule applied independently per node by direct scans."""
    var = tree.variation
    n = tree.n_nodes
    stable = [False] * n
    for i in range(n):
        p = tree.parent[i]
        if p < 0:
            continue  # the whole image is never a region of interest
        parent_ok = p == tree.root or var[i] < var[p]
        child_ok = all(var[i] <= var[c] for c in range(n) if tree.parent[c] == i)
        stable[i] = parent_ok and child_ok and var[i] <= params.max_variation and tree.area[i] >= params.min_area
    keep = list(stable)
    for i in range(n):
        if not stable[i]:
            continue
        a = tree.parent[i]
        while a >= 0 and not stable[a]:
            a = tree.parent[a]
        if a < 0:
            continue
        if (tree.area[a] - tree.area[i]) / tree.area[a] < params.min_diversity:
            if var[i] >= var[a]:
                keep[i] = False
            else:
                keep[a] = False
    return [i for i in range(n) if keep[i]]


def test_strict_local_minimum_selected():
    img = np.full((40, 40), 255, np.uint8)
    img[10:30, 10:30] = 100
    img[12:28, 12:28] = 50
    img[14:26, 14:26] = 0
    tree = compute_variation(build_er_tree(img), 1)
    tree = tree.__class__(**{**tree.__dict__, "variation": np.array([0.8, 0.2, 0.9, 1.0])})
    sel = select_msers(tree, MserParams(max_variation=0.5, min_diversity=0.0))
    assert sel.ids.tolist() == [1]


def test_all_unstable_gives_empty_selection():
    tree = compute_variation(build_er_tree(chain_image([0, 40, 80])), 1)
    sel = select_msers(tree, MserParams(max_variation=float(tree.variation.min()) / 2 + 1e-12))
    assert len(sel) == 0 or tree.variation.min() == 0


@pytest.mark.parametrize("seed", range(8))
def test_selection_matches_rule_scan_on_nested_squares(seed):
    rng = np.random.default_rng(seed)
    levels = np.sort(rng.choice(np.arange(0, 250, 5), size=int(rng.integers(3, 8)), replace=False))
    img = chain_image(levels.astype(np.uint8))
    other = chain_image(np.sort(rng.choice(np.arange(0, 250, 7), 4, replace=False)).astype(np.uint8))
    pad = np.full((img.shape[0], other.shape[1]), 255, np.uint8)
    pad[:other.shape[0]] = other
    img = np.hstack([img, pad])
    tree = compute_variation(build_er_tree(img), int(rng.integers(1, 4)))
    params = MserParams(max_variation=float(rng.uniform(0.2, 3)), min_diversity=float(rng.uniform(0, 0.6)))
    sel = select_msers(tree, params)
    assert sel.ids.tolist() == oracle_selection(tree, params)


@settings(max_examples=80, deadline=None)
@given(small_images, st.floats(0.05, 3.0), st.floats(0.0, 0.9), st.integers(1, 3))
def test_selection_matches_rule_scan_on_random_images(img, vmax, dmin, delta):
    tree = compute_variation(build_er_tree(img), delta)
    params = MserParams(delta=delta, max_variation=vmax, min_diversity=dmin)
    sel = select_msers(tree, params)
    assert sel.ids.tolist() == oracle_selection(tree, params)
    # the induced parent is the nearest selected ancestor
    chosen = set(sel.ids.tolist())
    for k, node in enumerate(sel.ids):
        a = tree.parent[node]
        while a >= 0 and a not in chosen:
            a = tree.parent[a]
        assert (sel.parent[k] < 0 and a < 0) or sel.ids[sel.parent[k]] == a


@settings(max_examples=60, deadline=None)
@given(small_images, st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0, 0.9), st.floats(0, 0.9))
def test_selection_size_monotone_in_parameters(img, v1, v2, d1, d2):
    tree = compute_variation(build_er_tree(img), 1)
    vlo, vhi = sorted((v1, v2))
    dlo, dhi = sorted((d1, d2))
    size = lambda v, d: len(select_msers(tree, MserParams(max_variation=v, min_diversity=d)))
    assert size(vlo, dlo) <= size(vhi, dlo)
    assert size(vlo, dhi) <= size(vlo, dlo)


def test_min_area_filter():
    img = np.full((30, 30), 255, np.uint8)
    img[2:4, 2:4] = 0
    img[10:20, 10:20] = 0
    tree = build_er_tree(img)
    tree = tree.__class__(**{**tree.__dict__, "variation": np.where(tree.parent >= 0, 0.1, 0.5)})
    areas = sorted(tree.area[select_msers(tree, MserParams(min_diversity=0)).ids].tolist())
    assert areas == [4, 100]
    big = select_msers(tree, MserParams(min_diversity=0, min_area=20))
    assert 4 not in tree.area[big.ids].tolist()
    with pytest.raises(ValueError):
        MserParams(min_area=0)


def test_candidates_require_variation():
    with pytest.raises(ValueError):
        mser_candidates(build_er_tree(ramp()), 0.5)


def test_format_tree_outline():
    img = chain_image([0, 60, 120])
    tree = compute_variation(build_er_tree(img), 1)
    text = format_tree(tree)
    lines = text.splitlines()
    assert len(lines) == tree.n_nodes
    assert lines[0].startswith("level=")
    assert lines[1].startswith("  ")
    assert "var=" in lines[0]
