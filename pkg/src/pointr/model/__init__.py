from .config import PLACEMENTS, PRESETS, ConfigError, ModelConfig, desk_config, pcn_config, shapenet55_config
from .layers import (
    DecoderBlock,
    EdgeConv,
    EncoderBlock,
    FoldingHead,
    GeometryBranch,
    MultiHeadAttention,
    edge_conv,
    folding_grid,
)
from .pointr import (
    CompletionResult,
    PoinTr,
    ProxySet,
    QuerySet,
    completion_loss,
    decoder_forward,
    encoder_forward,
    extract_proxies,
    generate_queries,
    model_forward,
)
