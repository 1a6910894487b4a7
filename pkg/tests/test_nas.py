import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import stats

from planeloc.nas import (CNN_OPS, RNN_KIND, RNN_OPS, ArchitectureParams, Calibrator, Cell, CellBackbone,
                          EmptyHistoryError, Genotype, ShapeMismatchError, build_qnetwork, cnn_edges,
                          darts_mix, derive_genotype, gdas_sample, load_alpha, op_execution_counts,
                          reset_op_counts, rnn_edges, save_alpha, select_architecture)

torch.set_num_threads(1)


def softmax(a):
    z = np.exp(a - a.max(-1, keepdims=True))
    return z / z.sum(-1, keepdims=True)


# -- samplers --------------------------------------------------------------

def test_gdas_no_noise_is_argmax():
    a = torch.tensor([[0.1, 2.0, -1.0, 0.5], [3.0, 0.0, 0.0, 0.0]])
    for tau in (10.0, 1.0, 0.01):
        hard, idx, _ = gdas_sample(a, tau, noise=False)
        assert idx.tolist() == [1, 0]
        np.testing.assert_allclose(hard.detach().numpy(), [[0, 1, 0, 0], [1, 0, 0, 0]], atol=1e-7)


def test_gdas_rejects_bad_tau():
    with pytest.raises(ValueError):
        gdas_sample(torch.zeros(3), 0.0)


def test_gdas_frequencies_match_softmax():
    logits = torch.tensor([0.3, -1.0, 1.2, 0.0, 0.7], dtype=torch.float64)
    g = torch.Generator().manual_seed(0)
    _, idx, _ = gdas_sample(logits.expand(100_000, 5), 1.0, generator=g)
    counts = np.bincount(idx.numpy(), minlength=5)
    expected = softmax(logits.numpy()) * 100_000
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_gdas_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for tau in (1.0, 0.5, 3.0):
        a0 = rng.normal(size=10)
        c = torch.tensor(rng.normal(size=10))
        noise = torch.tensor(-np.log(-np.log(rng.uniform(size=10))))
        a = torch.tensor(a0, requires_grad=True)
        hard, _, _ = gdas_sample(a, tau, noise=noise)
        (hard * c).sum().backward()
        grad = a.grad.numpy()

        def surrogate(x):
            return float((softmax((x + noise.numpy()) / tau) * c.numpy()).sum())

        h = 1e-6
        fd = np.array([(surrogate(a0 + h * e) - surrogate(a0 - h * e)) / (2 * h) for e in np.eye(10)])
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-10)


def test_temperature_annealing():
    rng = np.random.default_rng(1)
    a = torch.tensor(rng.normal(size=(14, 10)))
    noise = torch.tensor(-np.log(-np.log(rng.uniform(size=(14, 10)))))
    z = np.sort((a + noise).numpy(), axis=-1)
    margin = z[:, -1] - z[:, -2]
    gaps = []
    for tau in (1.0, 0.1, 0.01):
        hard, _, soft = gdas_sample(a, tau, noise=noise)
        diff = (soft - hard).abs().max(-1).values.numpy()
        # the gap to one-hot is bounded by (K - 1) exp(-margin / tau) per edge
        assert np.all(diff <= 9 * np.exp(-margin / tau) + 1e-12)
        gaps.append(diff)
    assert np.all(gaps[0] > gaps[1]) and np.all(gaps[1] >= gaps[2])
    assert np.median(gaps[2]) < 1e-3


def test_darts_mix():
    np.testing.assert_allclose(darts_mix(torch.zeros(10)).numpy(), 0.1)
    np.testing.assert_allclose(darts_mix(torch.zeros(5)).numpy(), 0.2)
    w = darts_mix(torch.tensor([50.0, 0, 0, 0, 0], dtype=torch.float64))
    assert abs(float(w[0]) - 1) < 1e-9
    r = darts_mix(torch.randn(6, 10, dtype=torch.float64))
    np.testing.assert_allclose(r.sum(-1).numpy(), 1, atol=1e-12)


def test_resolve_modes():
    ap = ArchitectureParams({"k": (3, 4)}, generator=torch.Generator().manual_seed(0))
    for mode in ("gdas", "argmax"):
        for w, idx in ap.resolve(mode, 1.0, torch.Generator().manual_seed(1))["k"]:
            assert idx is not None and float(w[idx].detach()) == pytest.approx(1.0)
    for w, idx in ap.resolve("darts")["k"]:
        assert idx is None and float(w.sum().detach()) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ap.resolve("other")


# -- networks --------------------------------------------------------------

@pytest.fixture(scope="module")
def small_net():
    return build_qnetwork("searched", "searched", channels=2, shared_layout="NR", unique_layout="NR",
                          stem_stride=2, seed=0)


def test_output_shape_various_sizes(small_net):
    for s in (16, 24, 33):
        qc, q = small_net(torch.randn(2, 3, 3, s, s), mode="gdas", generator=torch.Generator().manual_seed(0))
        assert qc.shape == q.shape == (2, 3, 8)


def test_shape_mismatch(small_net):
    with pytest.raises(ShapeMismatchError):
        small_net(torch.randn(1, 2, 3, 16, 16))
    with pytest.raises(ShapeMismatchError):
        small_net(torch.randn(3, 3, 16, 16))


def test_channel_bookkeeping():
    # full layout at S = 64: every reduction halves spatial size and doubles channels
    bb = CellBackbone(channels=2)
    alpha = ArchitectureParams(bb.alpha_shapes())
    weights = alpha.resolve("argmax")
    shapes = []
    hooks = [c.register_forward_hook(lambda m, i, o: shapes.append((m.reduction, tuple(o.shape))))
             for c in list(bb.shared) + list(bb.unique[0])]
    with torch.no_grad():
        bb(torch.randn(1, 3, 3, 64, 64), weights)
    for h in hooks:
        h.remove()
    prev_c = prev_s = None
    first = True
    for red, shp in shapes:
        _, ch, hh, ww = shp
        assert hh == ww and hh > 0
        if first:
            prev_c, prev_s, first = ch, hh, False
            continue
        if red:
            assert (ch, hh) == (2 * prev_c, prev_s // 2)
        else:
            assert (ch, hh) == (prev_c, prev_s)
        prev_c, prev_s = ch, hh
    assert shapes[-1][1][2] == 64 // 8 // 2


def test_op_counters_gdas_vs_darts(small_net):
    obs = torch.randn(1, 3, 3, 16, 16)
    n_edges = sum(14 for _ in small_net.alpha.kinds() if _ != RNN_KIND)
    cells_per_kind = 1  # layouts "NR" hold one cell per kind
    reset_op_counts(small_net)
    with torch.no_grad():
        small_net(obs, mode="gdas", generator=torch.Generator().manual_seed(3))
    assert sum(op_execution_counts(small_net)) == n_edges * cells_per_kind
    reset_op_counts(small_net)
    with torch.no_grad():
        small_net(obs, mode="darts")
    counts = op_execution_counts(small_net)
    assert counts == [n_edges * cells_per_kind] * len(CNN_OPS)


def _genotype_for(kinds, rng):
    cells = {}
    for kind in kinds:
        nodes = []
        for i in range(4):
            preds = sorted(rng.choice(2 + i, 2, replace=False).tolist())
            nodes.append([(p, CNN_OPS[rng.integers(1, len(CNN_OPS))]) for p in preds])
        cells[kind] = nodes
    rnn = [(int(rng.integers(0, i)), RNN_OPS[rng.integers(1, len(RNN_OPS))]) for i in range(1, 4)]
    return Genotype(cells, rnn)


def test_fixed_genotype_matches_coinciding_gdas():
    rng = np.random.default_rng(0)
    kw = dict(channels=2, shared_layout="NR", unique_layout="NR", stem_stride=2)
    sup = build_qnetwork("searched", "searched", seed=1, **kw).double()
    geno = _genotype_for([k for k in sup.alpha.kinds() if k != RNN_KIND], rng)
    fix = build_qnetwork("searched", "searched", genotype=geno, seed=2, **kw).double()

    # copy supernet weights into the fixed net: retained edges pick the chosen op's module
    src = sup.state_dict()
    new = {}
    for key in fix.state_dict():
        if ".edges." in key and key.startswith("backbone."):
            head, rest = key.split(".edges.", 1)
            edge, tail = rest.split(".", 1)
            cell_kind = _cell_kind(fix, head)
            i, j = map(int, edge.split("_"))
            op = dict(geno.cells[cell_kind][i])[j]
            new[key] = src[f"{head}.edges.{edge}.ops.{CNN_OPS.index(op)}.{tail}"]
        else:
            new[key] = src[key]
    fix.load_state_dict(new)

    # gdas one-hots (noise suppressed) coinciding with the genotype; other edges zeroed
    weights = {}
    for kind in sup.alpha.kinds():
        rows = []
        if kind == RNN_KIND:
            for e, (i, j) in enumerate(rnn_edges()):
                p, op = geno.rnn[i - 1]
                logits = torch.zeros(len(RNN_OPS), dtype=torch.float64)
                logits[RNN_OPS.index(op)] = 5.0
                hard, idx, _ = gdas_sample(logits, 1.0, noise=False)
                rows.append((hard if j == p else hard * 0, int(idx)))
        else:
            for i, j in cnn_edges():
                kept = dict(geno.cells[kind][i])
                logits = torch.zeros(len(CNN_OPS), dtype=torch.float64)
                logits[CNN_OPS.index(kept.get(j, "conv_3x3"))] = 5.0
                hard, idx, _ = gdas_sample(logits, 1.0, noise=False)
                rows.append((hard if j in kept else hard * 0, int(idx)))
        weights[kind] = rows
    obs = torch.randn(2, 3, 3, 16, 16, dtype=torch.float64)
    with torch.no_grad():
        a, ra = sup(obs, weights=weights)
        b, rb = fix(obs)
    np.testing.assert_allclose(ra.numpy(), rb.numpy(), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.numpy(), b.numpy(), rtol=1e-9, atol=1e-12)


def _cell_kind(net, head):
    # head like "backbone.shared.1" or "backbone.unique.2.0"
    parts = head.split(".")
    bb = net.backbone
    if parts[1] == "shared":
        ch = bb.shared_layout[int(parts[2])]
        prefix = "shared"
    else:
        ch = bb.unique_layout[int(parts[3])]
        prefix = f"agent{parts[2]}"
    return f"{prefix}_{'reduce' if ch == 'R' else 'normal'}"


def test_agent_specialization(small_net):
    frame = torch.randn(1, 1, 3, 16, 16)
    obs = frame.expand(1, 3, 3, 16, 16).contiguous()
    with torch.no_grad():
        _, q = small_net(obs, mode="argmax")
    for i in range(3):
        for j in range(i + 1, 3):
            assert not torch.allclose(q[0, i], q[0, j])


def test_plain_and_lstm_variants():
    net = build_qnetwork("fixed", "fixed", channels=2, stem_stride=2)
    assert not net.searchable
    qc, q = net(torch.randn(2, 3, 3, 32, 32))
    assert qc.shape == (2, 3, 8)
    with pytest.raises(ValueError):
        build_qnetwork("other", "none")


def test_calibrator_is_bidirectional():
    torch.manual_seed(0)
    cal = Calibrator("searched", 8, nodes=[(0, "tanh"), (1, "relu"), (0, "identity")])
    q = torch.randn(1, 3, 8)
    base = cal(q)
    for t in range(3):
        bumped = q.clone()
        bumped[0, t] += 1.0
        out = cal(bumped)
        for s in range(3):
            assert not torch.allclose(out[0, s], base[0, s])


def test_build_deterministic():
    a = build_qnetwork("searched", "searched", channels=2, shared_layout="N", unique_layout="R", seed=5)
    b = build_qnetwork("searched", "searched", channels=2, shared_layout="N", unique_layout="R", seed=5)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_weight_and_arch_parameters_disjoint(small_net):
    w = {id(p) for p in small_net.weight_parameters()}
    a = {id(p) for p in small_net.arch_parameters()}
    assert a and not (w & a)
    assert len(w) + len(a) == len(list(small_net.parameters()))


def test_cell_with_genotype_has_only_retained_edges():
    nodes = [[(0, "conv_3x3"), (1, "skip_connect")]] * 1 + [[(0, "avg_pool_3x3"), (2, "sep_conv_3x3")],
                                                            [(1, "dil_conv_5x5"), (3, "max_pool_3x3")],
                                                            [(2, "conv_5x5"), (4, "dil_conv_3x3")]]
    c = Cell(4, 4, 2, False, False, nodes)
    assert len(c.edges) == 8
    assert c(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)).shape == (1, 8, 8, 8)


# -- genotype derivation ---------------------------------------------------

def oracle_cnn(logits):
    """Brute force: the pair of (edge, non-none op) candidates on distinct edges with the largest total weight."""
    w = softmax(logits)
    out, e = [], 0
    for i in range(4):
        cand = [(j, k, w[e + j, k]) for j in range(2 + i) for k in range(1, len(CNN_OPS))]
        best = max((c for c in itertools.combinations(cand, 2) if c[0][0] != c[1][0]),
                   key=lambda c: c[0][2] + c[1][2])
        out.append(sorted((j, CNN_OPS[k]) for j, k, _ in best))
        e += 2 + i
    return out


def oracle_rnn(logits):
    w = softmax(logits)
    out, e = [], 0
    for i in range(1, 4):
        cand = [(w[e + j, k], j, k) for j in range(i) for k in range(1, len(RNN_OPS))]
        _, j, k = max(cand)
        out.append((j, RNN_OPS[k]))
        e += i
    return out


def test_derive_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        alpha = {"shared_normal": rng.normal(size=(14, 10)), RNN_KIND: rng.normal(size=(6, 5))}
        g = derive_genotype(alpha)
        assert g.cells["shared_normal"] == oracle_cnn(alpha["shared_normal"])
        assert g.rnn == oracle_rnn(alpha[RNN_KIND])
        g.validate()


def test_derive_constructed_winners():
    alpha = np.zeros((14, 10))
    want = [[(0, "conv_5x5"), (1, "skip_connect")], [(0, "sep_conv_3x3"), (2, "max_pool_3x3")],
            [(1, "avg_pool_3x3"), (3, "dil_conv_3x3")], [(2, "conv_3x3"), (4, "sep_conv_5x5")]]
    offsets = [0, 2, 5, 9]
    for i, pairs in enumerate(want):
        for j, op in pairs:
            alpha[offsets[i] + j, CNN_OPS.index(op)] = 4.0
    assert derive_genotype({"k": alpha}).cells["k"] == want


def test_none_is_skipped():
    alpha = np.zeros((6, 5))
    alpha[0] = [9.0, 0.0, 3.0, 0.0, 0.0]  # none highest, tanh second
    g = derive_genotype({RNN_KIND: alpha})
    assert g.rnn[0] == (0, "tanh")
    cnn = np.zeros((14, 10))
    cnn[:, 0] = 20.0
    cnn[0, 2] = 1.0
    cnn[1, 8] = 2.0
    g = derive_genotype({"k": cnn})
    assert g.cells["k"][0] == [(0, "conv_5x5"), (1, "avg_pool_3x3")]
    assert all(op != "none" for node in g.cells["k"] for _, op in node)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-100, 100))
def test_derive_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    alpha = {"k": rng.normal(size=(14, 10)), RNN_KIND: rng.normal(size=(6, 5))}
    rows = rng.normal(size=(14, 1)) * shift
    shifted = {"k": alpha["k"] + rows, RNN_KIND: alpha[RNN_KIND] + shift}
    assert derive_genotype(alpha) == derive_genotype(shifted)
    assert derive_genotype(alpha) == derive_genotype({k: v.copy() for k, v in alpha.items()})


def test_genotype_text_roundtrip(tmp_path):
    g = _genotype_for(["shared_normal", "shared_reduce", "agent0_normal"], np.random.default_rng(3))
    g.save(tmp_path / "g.txt")
    assert Genotype.load(tmp_path / "g.txt") == g
    line = (tmp_path / "g.txt").read_text().splitlines()[0].split()
    assert line[0] == "shared_normal" and len(line) == 6


def test_genotype_validation():
    with pytest.raises(ValueError):
        Genotype.from_text("k 0 0 none 1 conv_3x3\nk 1 0 conv_3x3 1 conv_3x3\n"
                           "k 2 0 conv_3x3 1 conv_3x3\nk 3 0 conv_3x3 1 conv_3x3\n")
    with pytest.raises(ValueError):
        Genotype.from_text("k 0 0 conv_3x3 2 conv_3x3\nk 1 0 conv_3x3 1 conv_3x3\n"
                           "k 2 0 conv_3x3 1 conv_3x3\nk 3 0 conv_3x3 1 conv_3x3\n")


# -- selection and checkpoints ---------------------------------------------

def test_select_examples():
    assert select_architecture([1, 5, 3], ["a", "b", "c"]) == ("b", 2)
    assert select_architecture([4, 4], ["a", "b"]) == ("a", 1)
    with pytest.raises(EmptyHistoryError):
        select_architecture([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=40))
def test_select_matches_scan(history):
    best, where = None, None
    for e, r in enumerate(history, start=1):
        if best is None or r > best:
            best, where = r, e
    snaps = list(range(len(history)))
    assert select_architecture(history, snaps) == (where - 1, where)


def test_alpha_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    alpha = {"shared_normal": rng.normal(size=(14, 10)), RNN_KIND: rng.normal(size=(6, 5))}
    save_alpha(tmp_path / "a", alpha, epoch=7)
    back, epoch = load_alpha(tmp_path / "a")
    assert epoch == 7
    for k in alpha:
        np.testing.assert_array_equal(back[k], alpha[k])
    manifest = (tmp_path / "a" / "alpha.manifest").read_text()
    assert manifest.startswith("format planeloc-alpha\nversion 1\n")
    (tmp_path / "a" / "alpha.manifest").write_text(manifest.replace("version 1", "version 9"))
    with pytest.raises(ValueError):
        load_alpha(tmp_path / "a")


def test_arch_params_numpy_roundtrip():
    ap = ArchitectureParams({"a": (14, 10), "b": (6, 5)})
    arr = {k: np.full(v.shape, 0.5) for k, v in ap.as_numpy().items()}
    ap.load_numpy(arr)
    for k, v in ap.as_numpy().items():
        np.testing.assert_allclose(v, 0.5)
