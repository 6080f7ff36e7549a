"""Session fixtures: a tiny seeded encoder with the production architecture
(768-wide hidden states, one layer) and a word-level tokenizer, saved to a
temp directory so the service loads it exactly like a published checkpoint.
The model hub is not reachable from CI, so everything is built locally."""

import pytest
import torch
from tokenizers import Tokenizer, models, pre_tokenizers, processors
from transformers import PreTrainedTokenizerFast, XLMRobertaConfig, XLMRobertaModel

WORDS = [
    "the", "of", "and", "to", "in", "is", "was", "for", "on", "with",
    "question", "answer", "knowledge", "science", "history", "theorem",
    "proof", "explain", "because", "therefore", "document", "corpus",
    "filter", "quality", "model", "token", "vector", "space", "language",
    "word", "alpha", "beta", "gamma", "delta", "epsilon", "zeta",
]


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-encoder")

    vocab = {"<s>": 0, "<pad>": 1, "</s>": 2, "<unk>": 3, "<mask>": 4}
    for w in WORDS:
        vocab[w] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    tok.post_processor = processors.TemplateProcessing(
        single="<s> $A </s>",
        pair="<s> $A </s> </s> $B </s>",
        special_tokens=[("<s>", 0), ("</s>", 2)],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        bos_token="<s>", eos_token="</s>", unk_token="<unk>",
        pad_token="<pad>", cls_token="<s>", sep_token="</s>",
        mask_token="<mask>", model_max_length=512,
    )
    fast.save_pretrained(path)

    config = XLMRobertaConfig(
        vocab_size=len(vocab),
        hidden_size=768,
        num_hidden_layers=1,
        num_attention_heads=4,
        intermediate_size=128,
        max_position_embeddings=514,
        pad_token_id=1, bos_token_id=0, eos_token_id=2,
    )
    torch.manual_seed(20240614)
    model = XLMRobertaModel(config)
    model.eval()
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def encoder(model_dir):
    from embed_service.encoder import DocumentEncoder, EncoderConfig

    return DocumentEncoder(EncoderConfig(model_name=model_dir, batch_size=8))


def reference_forward(model, input_ids, attention_mask):
    """Independent re-derivation of the encoder forward pass from raw
    weights: embeddings with offset position ids, one self-attention block,
    the feed-forward block, and their layer norms. Used as the oracle for
    the service's pooled vectors."""
    cfg = model.config
    eps = cfg.layer_norm_eps

    def layer_norm(x, module):
        mu = x.mean(-1, keepdim=True)
        var = x.var(-1, unbiased=False, keepdim=True)
        return (x - mu) / torch.sqrt(var + eps) * module.weight + module.bias

    emb = model.embeddings
    mask = attention_mask.to(torch.long)
    position_ids = torch.cumsum(mask, dim=1) * mask + cfg.pad_token_id
    x = (emb.word_embeddings.weight[input_ids]
         + emb.position_embeddings.weight[position_ids]
         + emb.token_type_embeddings.weight[0])
    x = layer_norm(x, emb.LayerNorm)

    layer = model.encoder.layer[0]
    attn = layer.attention
    B, T, H = x.shape
    heads = cfg.num_attention_heads
    head_dim = H // heads

    def split(t):
        return t.view(B, T, heads, head_dim).transpose(1, 2)

    q = split(x @ attn.self.query.weight.T + attn.self.query.bias)
    k = split(x @ attn.self.key.weight.T + attn.self.key.bias)
    v = split(x @ attn.self.value.weight.T + attn.self.value.bias)
    scores = q @ k.transpose(-1, -2) / head_dim**0.5
    neg = torch.finfo(scores.dtype).min
    scores = scores + (1.0 - attention_mask[:, None, None, :].to(scores.dtype)) * neg
    probs = torch.softmax(scores, dim=-1)
    ctx = (probs @ v).transpose(1, 2).reshape(B, T, H)
    attn_out = ctx @ attn.output.dense.weight.T + attn.output.dense.bias
    x = layer_norm(attn_out + x, attn.output.LayerNorm)

    inter = torch.nn.functional.gelu(
        x @ layer.intermediate.dense.weight.T + layer.intermediate.dense.bias
    )
    ffn_out = inter @ layer.output.dense.weight.T + layer.output.dense.bias
    x = layer_norm(ffn_out + x, layer.output.LayerNorm)
    return x
