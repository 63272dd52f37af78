"""The completion network and its training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geom
from .. import numerics as nx
from ..numerics import Linear, Module
from .config import ModelConfig
from .layers import DecoderBlock, EdgeConv, EncoderBlock, FoldingHead


@dataclass
class ProxySet:
    centers: np.ndarray  # (N, 3)
    features: nx.Tensor  # (N, d)


@dataclass
class QuerySet:
    coords: nx.Tensor  # (M, 3)
    embeddings: nx.Tensor  # (M, d)


@dataclass
class CompletionResult:
    coarse_centers: nx.Tensor  # (M + N, 3)
    missing_points: nx.Tensor  # (M * s, 3)
    complete: nx.Tensor  # (n_input + M * s, 3)
    proxies: ProxySet
    queries: QuerySet


def _geometry_flags(depth: int, placement: str) -> list[bool]:
    if placement == "all":
        return [True] * depth
    if placement == "first":
        return [i == 0 for i in range(depth)]
    return [False] * depth


class ProxyExtractor(Module):
    """Linear(3->8) then four DGCNN stages with FPS downsampling, plus position embedding."""

    def __init__(self, cfg: ModelConfig, rng):
        ch = cfg.extractor_channels
        self.k = cfg.k_dgcnn
        self.sizes = cfg.stage_sizes
        self.input_proj = Linear(3, ch[0], rng)
        self.stage = [EdgeConv(ch[i], ch[i + 1], rng) for i in range(4)]
        self.out_proj = Linear(ch[4], cfg.embed_dim, rng)
        self.pos1 = Linear(3, cfg.pos_hidden, rng)
        self.pos2 = Linear(cfg.pos_hidden, cfg.embed_dim, rng)

    def __call__(self, partial) -> ProxySet:
        coords = geom.as_cloud(partial, "partial")
        if len(coords) < self.sizes[-1]:
            raise geom.SizeError(f"input has {len(coords)} points, need at least {self.sizes[-1]}")
        if len(coords) < self.k:
            raise geom.SizeError(f"input has {len(coords)} points, fewer than k={self.k}")
        feats = self.input_proj(nx.Tensor(coords))
        for stage, n_out in zip(self.stage, self.sizes):
            n_out = min(n_out, len(coords))
            if n_out == len(coords):
                centers = np.arange(len(coords))
            else:
                centers = geom.fps(coords, n_out, geom.fps_start(coords))
            feats = stage(feats, coords, centers, self.k)
            coords = coords[centers]
        pos = self.pos2(nx.relu(self.pos1(nx.Tensor(coords))))
        return ProxySet(centers=coords, features=nx.add(self.out_proj(feats), pos))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        hidden = int(cfg.embed_dim * cfg.ffn_ratio)
        flags = _geometry_flags(cfg.enc_depth, cfg.geometry_block_placement)
        self.block = [
            EncoderBlock(cfg.embed_dim, cfg.n_heads, hidden, rng, cfg.k_geo if g else None) for g in flags
        ]
        self.p = cfg.dropout

    def __call__(self, features, coords, rng=None):
        x = features
        for blk in self.block:
            x = blk(x, coords, self.p, rng)
        return x


class QueryGenerator(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.m = cfg.n_queries
        self.summary = Linear(cfg.embed_dim, cfg.query_hidden, rng)
        self.coord_head = Linear(cfg.query_hidden, 3 * cfg.n_queries, rng)
        self.embed1 = Linear(cfg.query_hidden + 3, cfg.embed_dim, rng)
        self.embed2 = Linear(cfg.embed_dim, cfg.embed_dim, rng)

    def __call__(self, memory) -> QuerySet:
        g, _ = nx.max_over_axis(self.summary(memory), axis=0)
        coords = nx.reshape(self.coord_head(g), (self.m, 3))
        g_rows = nx.gather_rows(nx.reshape(g, (1, -1)), np.zeros(self.m, dtype=np.int64))
        emb = self.embed2(nx.relu(self.embed1(nx.concat([g_rows, coords], axis=-1))))
        return QuerySet(coords=coords, embeddings=emb)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        hidden = int(cfg.embed_dim * cfg.ffn_ratio)
        flags = _geometry_flags(cfg.dec_depth, cfg.geometry_block_placement)
        self.block = [
            DecoderBlock(cfg.embed_dim, cfg.n_heads, hidden, rng, cfg.k_geo if g else None) for g in flags
        ]
        self.p = cfg.dropout

    def __call__(self, queries: QuerySet, memory, memory_coords, rng=None):
        x = queries.embeddings
        qc = queries.coords.data
        for blk in self.block:
            x = blk(x, qc, memory, memory_coords, self.p, rng)
        return x


class PoinTr(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.extractor = ProxyExtractor(cfg, rng)
        self.encoder = Encoder(cfg, rng)
        self.query = QueryGenerator(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.folding = FoldingHead(cfg.embed_dim, cfg.fold_grid, cfg.fold_extent, cfg.fold_hidden, rng)
        self.assign_names()

    def __call__(self, partial, rng=None) -> CompletionResult:
        return model_forward(self, partial, rng)


def extract_proxies(model: PoinTr, partial) -> ProxySet:
    return model.extractor(partial)


def encoder_forward(model: PoinTr, proxies: ProxySet, rng=None):
    return model.encoder(proxies.features, proxies.centers, rng)


def generate_queries(model: PoinTr, memory) -> QuerySet:
    return model.query(memory)


def decoder_forward(model: PoinTr, queries: QuerySet, memory, proxy_centers, rng=None):
    return model.decoder(queries, memory, proxy_centers, rng)


def model_forward(model: PoinTr, partial, rng=None) -> CompletionResult:
    partial = geom.as_cloud(partial, "partial")
    proxies = extract_proxies(model, partial)
    memory = encoder_forward(model, proxies, rng)
    queries = generate_queries(model, memory)
    h = decoder_forward(model, queries, memory, proxies.centers, rng)
    patches = model.folding(h, queries.coords)
    missing = nx.reshape(patches, (-1, 3))
    dtype = missing.data.dtype
    coarse = nx.concat([queries.coords, nx.Tensor(proxies.centers.astype(dtype))], axis=0)
    complete = nx.concat([nx.Tensor(partial.astype(dtype)), missing], axis=0)
    return CompletionResult(coarse, missing, complete, proxies, queries)


def completion_loss(result: CompletionResult, gt, norm: str = "L2SQ"):
    """Return (J, J0, J1): chamfer on the coarse centres plus chamfer on the dense cloud."""
    gt = geom.as_cloud(gt, "gt")
    g = nx.Tensor(gt.astype(result.complete.data.dtype))
    j0 = geom.chamfer(result.coarse_centers, g, norm)
    j1 = geom.chamfer(result.complete, g, norm)
    return nx.add(j0, j1), j0, j1
