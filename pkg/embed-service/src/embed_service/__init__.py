"""Batch document embedding for the corpus-filtering pipeline.

Encodes line-delimited document files with a pretrained multilingual
transformer (XLM-RoBERTa base by default), truncating each document to
its first 512 subword tokens and mean-pooling the final hidden layer over
non-padding positions, and writes the vectors as binary .embx shards.
"""

from .encoder import DocumentEncoder, EncoderConfig, ItemError
from .embx import read_embx, write_embx

__version__ = "0.1.0"
