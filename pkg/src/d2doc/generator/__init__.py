"""Neural data-to-document generators: record encoder, copy decoders, reconstruction losses."""
from .model import (
    COPY_MODES,
    CopySupervision,
    EncodedDB,
    GenConfig,
    GenModel,
    GenVocab,
    ReconConfig,
    copy_supervision,
    decode_step,
    encode_records,
    game_arrays,
    initial_state,
    next_token_distribution,
    recon_loss,
    tvd_term,
)
from .train import (
    beam_search,
    make_example,
    perplexity,
    reconstruction_loss,
    train_generator,
)

__all__ = [
    "COPY_MODES", "CopySupervision", "EncodedDB", "GenConfig", "GenModel", "GenVocab", "ReconConfig",
    "beam_search", "copy_supervision", "decode_step", "encode_records", "game_arrays", "initial_state",
    "make_example", "next_token_distribution", "perplexity", "recon_loss", "reconstruction_loss", "train_generator", "tvd_term",
]
