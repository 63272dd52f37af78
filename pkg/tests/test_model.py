import numpy as np
import pytest

from pointr import geom
from pointr import numerics as nx
from pointr.model import (
    ConfigError,
    EncoderBlock,
    GeometryBranch,
    ModelConfig,
    PoinTr,
    completion_loss,
    decoder_forward,
    desk_config,
    edge_conv,
    encoder_forward,
    extract_proxies,
    generate_queries,
    model_forward,
    pcn_config,
    shapenet55_config,
)
from pointr.model.pointr import ProxySet, QuerySet

from conftest import distinct_cloud, tiny_config


def _zero_all(model):
    for p in model.parameters():
        p.data[...] = 0


def test_config_invariants():
    cfg = shapenet55_config()
    assert (cfg.n_proxies, cfg.n_queries, cfg.embed_dim, cfg.n_heads) == (128, 96, 384, 6)
    assert (cfg.enc_depth, cfg.dec_depth, cfg.k_dgcnn, cfg.k_geo) == (6, 8, 16, 8)
    assert cfg.fold_points == 64 and cfg.n_missing == 6144 and cfg.n_complete == 8192
    assert cfg.stage_sizes == (2048, 512, 512, 128)
    assert pcn_config().n_missing == 14336
    with pytest.raises(ConfigError):
        ModelConfig(embed_dim=100, n_heads=6)
    with pytest.raises(ConfigError):
        ModelConfig(geometry_block_placement="middle")
    with pytest.raises(ConfigError, match="bogus"):
        ModelConfig.from_dict({"bogus": 1})


def test_edge_conv_hand_oracle():
    coords = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0], [6, 0, 0]], dtype=np.float64)
    feats = nx.Tensor([[1.0], [2.0], [4.0], [8.0]], dtype=np.float64)

    class Lin:
        def __call__(self, x):
            return nx.linear(x, nx.Tensor([[-1.0], [2.0]], dtype=np.float64), nx.Tensor([0.0], dtype=np.float64))

    # neighbours (k=2, self included): {0,1}, {1,0}, {2,1}, {3,2}
    # e(i,j) = lrelu(-f_i + 2 (f_j - f_i)), max over j
    out = edge_conv(feats, coords, np.arange(4), 2, Lin())
    np.testing.assert_allclose(out.data, [[1.0], [-0.4], [-0.8], [-1.6]], atol=1e-12)


def test_edge_conv_self_neighbour_and_constant_field():
    rng = np.random.default_rng(0)
    coords = rng.normal(size=(6, 3))
    feats = nx.Tensor(rng.normal(size=(6, 3)))
    seen = {}

    def spy(x):
        seen["edge"] = x.data
        return nx.Tensor(np.zeros(x.shape[:-1] + (1,)))

    edge_conv(feats, coords, np.arange(6), 1, spy)
    np.testing.assert_array_equal(seen["edge"][..., 3:], 0)
    np.testing.assert_array_equal(seen["edge"][:, 0, :3], feats.data)
    const = nx.Tensor(np.ones((6, 3)))
    edge_conv(const, coords, np.arange(6), 4, spy)
    np.testing.assert_array_equal(seen["edge"][..., 3:], 0)
    with pytest.raises(geom.SizeError):
        edge_conv(const, coords, np.arange(6), 7, spy)


def test_extract_proxies_paper_shapes(rng):
    model = PoinTr(shapenet55_config(enc_depth=0, dec_depth=0))
    proxies = extract_proxies(model, distinct_cloud(rng, 2048))
    assert proxies.centers.shape == (128, 3)
    assert proxies.features.shape == (128, 384)
    with pytest.raises(geom.SizeError):
        extract_proxies(model, distinct_cloud(rng, 100))


def test_extract_proxies_permutation_invariant(rng):
    model = PoinTr(tiny_config(), seed=1)
    x = distinct_cloud(rng, 64)
    perm = rng.permutation(64)
    a, b = extract_proxies(model, x), extract_proxies(model, x[perm])
    order_a = np.lexsort(a.centers.T)
    order_b = np.lexsort(b.centers.T)
    np.testing.assert_array_equal(a.centers[order_a], b.centers[order_b])
    np.testing.assert_allclose(a.features.data[order_a], b.features.data[order_b], atol=1e-5)


def test_extract_proxies_zero_network():
    model = PoinTr(tiny_config())
    _zero_all(model)
    proxies = extract_proxies(model, distinct_cloud(np.random.default_rng(0), 64))
    np.testing.assert_array_equal(proxies.features.data, 0)


def _copy_block(src, dst):
    for (name, p), (_, q) in zip(src.named_parameters(), dst.named_parameters()):
        q.data = p.data.copy()


def test_geometry_block_reduces_to_vanilla_when_branch_ablated(rng):
    d = 24
    geo_block = EncoderBlock(d, 4, 48, np.random.default_rng(0), geometry_k=3)
    plain = EncoderBlock(d, 4, 48, np.random.default_rng(0))
    for part in ("norm1", "attn", "norm2", "ffn"):
        _copy_block(getattr(geo_block, part), getattr(plain, part))
    geo_block.geo.edge.weight.data[...] = 0
    geo_block.geo.edge.bias.data[...] = 0
    geo_block.geo.merge.weight.data[...] = np.vstack([np.eye(d), np.zeros((d, d))])
    geo_block.geo.merge.bias.data[...] = 0
    x = nx.Tensor(rng.normal(size=(5, d)))
    coords = distinct_cloud(rng, 5)
    np.testing.assert_allclose(geo_block(x, coords).data, plain(x, coords).data, atol=1e-6)


def test_geometry_block_permutation_equivariant(rng):
    block = EncoderBlock(384, 6, 768, np.random.default_rng(2), geometry_k=3)
    x = rng.normal(size=(4, 384))
    coords = distinct_cloud(rng, 4)
    perm = rng.permutation(4)
    out = block(nx.Tensor(x), coords).data
    assert out.shape == (4, 384)
    np.testing.assert_allclose(block(nx.Tensor(x[perm]), coords[perm]).data, out[perm], atol=1e-5)


def test_geometry_branch_dimension_error(rng):
    branch = GeometryBranch(8, 2, rng)
    with pytest.raises(nx.DimensionError):
        branch(nx.Tensor(np.ones((3, 8))), nx.Tensor(np.ones((3, 8))), np.eye(3), nx.Tensor(np.ones((3, 5))), np.eye(3))


def test_encoder_shapes_equivariance_and_depth_zero(rng):
    model = PoinTr(tiny_config(geometry_block_placement="all"), seed=3)
    feats = rng.normal(size=(8, 24)).astype(np.float32)
    coords = distinct_cloud(rng, 8)
    out = encoder_forward(model, ProxySet(coords, nx.Tensor(feats))).data
    assert out.shape == (8, 24)
    perm = rng.permutation(8)
    permuted = encoder_forward(model, ProxySet(coords[perm], nx.Tensor(feats[perm]))).data
    np.testing.assert_allclose(permuted, out[perm], atol=1e-5)
    shallow = PoinTr(tiny_config(enc_depth=0))
    np.testing.assert_array_equal(encoder_forward(shallow, ProxySet(coords, nx.Tensor(feats))).data, feats)


def test_query_generator(rng):
    model = PoinTr(tiny_config(), seed=4)
    memory = rng.normal(size=(8, 24)).astype(np.float32)
    q = generate_queries(model, nx.Tensor(memory))
    assert q.coords.shape == (6, 3) and q.embeddings.shape == (6, 24)
    q2 = generate_queries(model, nx.Tensor(memory[rng.permutation(8)]))
    np.testing.assert_allclose(q2.coords.data, q.coords.data, atol=1e-6)
    np.testing.assert_allclose(q2.embeddings.data, q.embeddings.data, atol=1e-6)
    zeroed = generate_queries(model, nx.Tensor(np.zeros((8, 24))))
    np.testing.assert_array_equal(zeroed.coords.data, 0)


def test_query_generator_paper_shapes(rng):
    model = PoinTr(shapenet55_config(enc_depth=0, dec_depth=0))
    q = generate_queries(model, nx.Tensor(rng.normal(size=(128, 384))))
    assert q.coords.shape == (96, 3) and q.embeddings.shape == (96, 384)


def test_decoder_shapes_equivariance_and_depth_zero(rng):
    model = PoinTr(tiny_config(geometry_block_placement="all"), seed=5)
    memory = nx.Tensor(rng.normal(size=(8, 24)))
    centres = distinct_cloud(rng, 8)
    qc = distinct_cloud(rng, 6)
    emb = rng.normal(size=(6, 24)).astype(np.float32)
    out = decoder_forward(model, QuerySet(nx.Tensor(qc), nx.Tensor(emb)), memory, centres).data
    assert out.shape == (6, 24)
    perm = rng.permutation(6)
    permuted = decoder_forward(model, QuerySet(nx.Tensor(qc[perm]), nx.Tensor(emb[perm])), memory, centres).data
    np.testing.assert_allclose(permuted, out[perm], atol=1e-5)
    shallow = PoinTr(tiny_config(dec_depth=0))
    res = decoder_forward(shallow, QuerySet(nx.Tensor(qc), nx.Tensor(emb)), memory, centres)
    np.testing.assert_array_equal(res.data, emb)


def test_fold_zero_weights_and_translation(rng):
    model = PoinTr(shapenet55_config(enc_depth=0, dec_depth=0))
    head = model.folding
    h = nx.Tensor(rng.normal(size=(2, 384)))
    c = rng.normal(size=(2, 3)).astype(np.float32)
    pts = head(h, nx.Tensor(c)).data
    assert pts.shape == (2, 64, 3)
    t = np.array([0.25, -0.5, 1.0], dtype=np.float32)
    np.testing.assert_allclose(head(h, nx.Tensor(c + t)).data, pts + t, atol=1e-6)
    for layer in head.fold1 + head.fold2:
        layer.weight.data[...] = 0
        layer.bias.data[...] = 0
    np.testing.assert_array_equal(head(h, nx.Tensor(c)).data, np.repeat(c[:, None, :], 64, axis=1))


def test_model_forward_cardinality_and_verbatim_input(rng):
    cfg = tiny_config()
    model = PoinTr(cfg)
    x = distinct_cloud(rng, 64)
    res = model_forward(model, x)
    assert res.missing_points.shape == (cfg.n_missing, 3)
    assert res.complete.shape == (64 + cfg.n_missing, 3)
    assert res.coarse_centers.shape == (cfg.n_queries + cfg.n_proxies, 3)
    np.testing.assert_array_equal(res.complete.data[:64], x)
    assert geom.fidelity(x, res.complete.data) == 0.0


def test_zero_model_collapses_onto_centres(rng):
    model = PoinTr(tiny_config())
    _zero_all(model)
    res = model_forward(model, distinct_cloud(rng, 64))
    np.testing.assert_array_equal(res.missing_points.data, 0)
    np.testing.assert_array_equal(res.queries.coords.data, 0)


def test_attention_rows_sum_to_one(rng):
    model = PoinTr(tiny_config(geometry_block_placement="all"))
    model_forward(model, distinct_cloud(rng, 64))
    attns = [m.last_attention for m in model.modules() if hasattr(m, "last_attention")]
    assert len(attns) == 2 + 2 * 2
    for a in attns:
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)


def test_parameter_census_first_vs_all():
    for cfg_fn in (tiny_config, desk_config):
        first = PoinTr(cfg_fn(geometry_block_placement="first")).num_parameters()
        every = PoinTr(cfg_fn(geometry_block_placement="all")).num_parameters()
        cfg = cfg_fn()
        d = cfg.embed_dim
        branch = 2 * (2 * d * d + d)
        assert every - first == (cfg.enc_depth + cfg.dec_depth - 2) * branch


def test_parameter_names_are_hierarchical():
    names = [n for n, _ in PoinTr(tiny_config()).named_parameters()]
    assert "encoder.block0.attn.wq.weight" in names
    assert "decoder.block1.cross_attn.wo.bias" in names
    assert "folding.fold10.weight" in names
    assert len(names) == len(set(names))


def test_loss_properties(rng):
    model = PoinTr(tiny_config())
    x = distinct_cloud(rng, 64)
    res = model_forward(model, x)
    gt = np.concatenate([x, distinct_cloud(rng, 100)])
    j, j0, j1 = completion_loss(res, gt)
    assert float(j.data) >= 0 and float(j0.data) >= 0 and float(j1.data) >= 0
    assert float(j.data) == pytest.approx(float(j0.data) + float(j1.data), abs=1e-6)
    # a prediction that reproduces gt exactly
    res.complete = nx.Tensor(gt)
    res.coarse_centers = nx.Tensor(gt[::3])
    _, j0, j1 = completion_loss(res, gt)
    assert float(j1.data) == 0.0
    assert float(geom.chamfer(res.coarse_centers.data, gt, "L2SQ")) == pytest.approx(float(j0.data), rel=1e-6)
    with pytest.raises(geom.SizeError):
        completion_loss(res, np.zeros((0, 3)))


def test_folding_head_gradient_matches_finite_differences(rng):
    with nx.default_dtype(np.float64):
        model = PoinTr(tiny_config(n_input=32, dropout=0.0), seed=7)
        x = distinct_cloud(rng, 32).astype(np.float64)
        gt = np.concatenate([x, distinct_cloud(rng, 24)]).astype(np.float64)
        params = [p for n, p in model.named_parameters() if n.startswith("folding.")]
        results = nx.probe_gradients(lambda: completion_loss(model_forward(model, x), gt)[0], params, 1e-6, 3, rng)
    for analytic, numeric in results:
        assert nx.relative_error(analytic, numeric, floor=1e-8) < 1e-2
