"""Building blocks: edge convolution, attention, geometry-aware blocks, folding head."""

from __future__ import annotations

import numpy as np

from .. import geom
from .. import numerics as nx
from ..numerics import Linear, LayerNorm, Module


def _repeat_rows(x, n_rows: int, reps: int):
    """(n, c) -> (n, reps, c) by row gathering."""
    idx = np.repeat(np.arange(n_rows)[:, None], reps, axis=1)
    return nx.gather_rows(x, idx)


class EdgeConv(Module):
    """DGCNN edge convolution: [f_i, f_j - f_i] -> shared linear -> activation -> max over k."""

    def __init__(self, c_in: int, c_out: int, rng):
        self.lin = Linear(2 * c_in, c_out, rng)

    def __call__(self, features, coords, out_centers, k: int, key_features=None, key_coords=None):
        return edge_conv(features, coords, out_centers, k, self.lin,
                         key_features=key_features, key_coords=key_coords)


def edge_conv(features, coords, out_centers, k, lin, key_features=None, key_coords=None, slope=0.2):
    """Aggregate over the k nearest keys of each selected centre.

    ``features``/``coords`` describe the points the centres are drawn from; neighbours
    come from ``key_features``/``key_coords`` when given, otherwise from the same set.
    """
    features = nx.as_tensor(features)
    coords = np.asarray(coords)
    key_features = features if key_features is None else nx.as_tensor(key_features)
    key_coords = coords if key_coords is None else np.asarray(key_coords)
    if k > len(key_coords):
        raise geom.SizeError(f"k={k} exceeds {len(key_coords)} candidate neighbours")
    idx = np.asarray(out_centers, dtype=np.int64)
    nbr = geom.knn(coords[idx], key_coords, k)
    centre = nx.gather_rows(features, np.repeat(idx[:, None], k, axis=1))
    neighbour = nx.gather_rows(key_features, nbr)
    edge = nx.concat([centre, nx.sub(neighbour, centre)], axis=-1)
    act = nx.leaky_relu(lin(edge), slope)
    out, _ = nx.max_over_axis(act, axis=1)
    return out


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng):
        if d % n_heads:
            raise nx.DimensionError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.wq = Linear(d, d, rng, bias=False)
        self.wk = Linear(d, d, rng, bias=False)
        self.wv = Linear(d, d, rng, bias=False)
        self.wo = Linear(d, d, rng)
        self.last_attention = None

    def _split(self, x):
        n, d = x.shape
        h = self.n_heads
        return nx.transpose(nx.reshape(x, (n, h, d // h)), (1, 0, 2))

    def __call__(self, queries, keys):
        n, d = queries.shape
        if keys.shape[-1] != d:
            raise nx.DimensionError(f"query width {d} vs key width {keys.shape[-1]}")
        q = self._split(self.wq(queries))
        k = self._split(self.wk(keys))
        v = self._split(self.wv(keys))
        scale = 1.0 / np.sqrt(d // self.n_heads)
        scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 2, 1))), scale)
        attn = nx.softmax(scores, axis=-1)
        self.last_attention = attn.data
        heads = nx.matmul(attn, v)
        merged = nx.reshape(nx.transpose(heads, (1, 0, 2)), (n, d))
        return self.wo(merged)


class GeometryBranch(Module):
    """kNN edge features on coordinates, concatenated with the attention output and projected back to d."""

    def __init__(self, d: int, k: int, rng):
        self.k = k
        self.edge = Linear(2 * d, d, rng)
        self.merge = Linear(2 * d, d, rng)

    def __call__(self, semantic, features, coords, key_features, key_coords):
        coords = np.asarray(coords)
        geo = edge_conv(features, coords, np.arange(len(coords)), self.k, self.edge,
                        key_features=key_features, key_coords=key_coords)
        return self.merge(nx.concat([semantic, geo], axis=-1))


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x, p: float, training: bool, rng):
        h = nx.dropout(nx.relu(self.fc1(x)), p, training, rng)
        return self.fc2(h)


class EncoderBlock(Module):
    def __init__(self, d: int, n_heads: int, ffn_hidden: int, rng, geometry_k: int | None = None):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.geo = GeometryBranch(d, geometry_k, rng) if geometry_k else None
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_hidden, rng)

    def __call__(self, x, coords, p=0.0, rng=None):
        h = self.norm1(x)
        a = self.attn(h, h)
        if self.geo is not None:
            a = self.geo(a, h, coords, h, coords)
        x = nx.add(x, nx.dropout(a, p, self.training, rng))
        f = self.ffn(self.norm2(x), p, self.training, rng)
        return nx.add(x, nx.dropout(f, p, self.training, rng))


class DecoderBlock(Module):
    """Self-attention over queries, cross-attention to memory, FFN; all pre-norm.

    A geometry-aware block has one geometry branch, used by both attention
    sublayers: query coords against themselves, then against the proxy centres.
    """

    def __init__(self, d: int, n_heads: int, ffn_hidden: int, rng, geometry_k: int | None = None):
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.norm_mem = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.geo = GeometryBranch(d, geometry_k, rng) if geometry_k else None
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_hidden, rng)

    def __call__(self, x, query_coords, memory, memory_coords, p=0.0, rng=None):
        h = self.norm1(x)
        a = self.self_attn(h, h)
        if self.geo is not None:
            a = self.geo(a, h, query_coords, h, query_coords)
        x = nx.add(x, nx.dropout(a, p, self.training, rng))
        h = self.norm2(x)
        m = self.norm_mem(memory)
        a = self.cross_attn(h, m)
        if self.geo is not None:
            a = self.geo(a, h, query_coords, m, memory_coords)
        x = nx.add(x, nx.dropout(a, p, self.training, rng))
        f = self.ffn(self.norm3(x), p, self.training, rng)
        return nx.add(x, nx.dropout(f, p, self.training, rng))


def folding_grid(side: int, extent: float) -> np.ndarray:
    ticks = np.linspace(-extent, extent, side)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


class FoldingHead(Module):
    """Two folding stages turning a fixed 2-D grid into a local patch around each centre."""

    def __init__(self, d: int, side: int, extent: float, hidden: int, rng):
        self.grid = folding_grid(side, extent)
        half = max(hidden // 2, 1)
        self.fold1 = [Linear(d + 2, hidden, rng), Linear(hidden, half, rng), Linear(half, 3, rng)]
        self.fold2 = [Linear(d + 3, hidden, rng), Linear(hidden, half, rng), Linear(half, 3, rng)]

    @staticmethod
    def _mlp(layers, x):
        for i, layer in enumerate(layers):
            x = layer(x)
            if i < len(layers) - 1:
                x = nx.relu(x)
        return x

    def __call__(self, proxies, centres):
        """(M, d) proxy features and (M, 3) centres -> (M, s, 3) points."""
        m = proxies.shape[0]
        s = len(self.grid)
        feat = _repeat_rows(proxies, m, s)
        grid = np.broadcast_to(self.grid, (m, s, 2)).astype(feat.data.dtype)
        first = self._mlp(self.fold1, nx.concat([feat, grid], axis=-1))
        offsets = self._mlp(self.fold2, nx.concat([feat, first], axis=-1))
        return nx.add(offsets, _repeat_rows(centres, m, s))
