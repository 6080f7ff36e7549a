import json
import random

import numpy as np
import pytest
import torch

from embed_service.embx import read_embx
from embed_service.encoder import TRUNCATION_RULE

from tests.conftest import WORDS, reference_forward


def sentence(n_words, seed=0):
    rng = random.Random(seed)
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


class TestEncodeTexts:
    def test_dimension_is_768(self, encoder):
        vecs = encoder.encode_texts(["knowledge is the answer"])
        assert vecs.shape == (1, 768)
        assert vecs.dtype == np.float32

    def test_identical_texts_identical_vectors(self, encoder):
        text = sentence(20, seed=1)
        vecs = encoder.encode_texts([text, text])
        assert np.array_equal(vecs[0], vecs[1])

    def test_deterministic_across_calls(self, encoder):
        text = sentence(30, seed=2)
        a = encoder.encode_texts([text])
        b = encoder.encode_texts([text])
        assert np.array_equal(a, b)

    def test_truncation_equivalence(self, encoder):
        """A long document and its 510-word prefix produce the same vector
        (512 subword tokens including the two boundary specials)."""
        long_words = [random.Random(3).choice(WORDS) for _ in range(700)]
        full = " ".join(long_words)
        prefix = " ".join(long_words[:510])
        v_full = encoder.encode_texts([full])[0]
        v_prefix = encoder.encode_texts([prefix])[0]
        assert np.array_equal(v_full, v_prefix)
        # a shorter prefix does change the vector
        v_shorter = encoder.encode_texts([" ".join(long_words[:400])])[0]
        assert not np.allclose(v_full, v_shorter, atol=1e-5)

    def test_padding_invariance(self, encoder):
        """Batching a short text with long companions (forcing right
        padding) moves its vector by at most 1e-5."""
        short = sentence(5, seed=4)
        alone = encoder.encode_texts([short])[0]
        padded = encoder.encode_texts([short, sentence(200, seed=5),
                                       sentence(300, seed=6)])[0]
        assert np.abs(alone - padded).max() <= 1e-5

    def test_batch_composition_invariance(self, encoder):
        texts = [sentence(10 + i, seed=i) for i in range(6)]
        whole = encoder.encode_texts(texts)
        split = np.concatenate([encoder.encode_texts(texts[:2]),
                                encoder.encode_texts(texts[2:3]),
                                encoder.encode_texts(texts[3:])])
        assert np.abs(whole - split).max() <= 1e-5

    def test_matches_reference_forward(self, encoder):
        """Service vectors vs an independent raw-weight forward pass."""
        texts = [sentence(12, seed=7), sentence(80, seed=8), sentence(3, seed=9)]
        service = encoder.encode_texts(texts)
        enc = encoder.tokenizer(texts, max_length=512, truncation=True,
                                padding=True, return_tensors="pt")
        with torch.no_grad():
            hidden = reference_forward(encoder.model, enc["input_ids"],
                                       enc["attention_mask"])
        mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        pooled = ((hidden * mask).sum(1) / mask.sum(1)).numpy()
        for ours, ref in zip(service, pooled):
            cos = float(np.dot(ours, ref)
                        / (np.linalg.norm(ours) * np.linalg.norm(ref)))
            assert 1.0 - cos <= 1e-4
        assert np.abs(service - pooled).max() <= 1e-3

    def test_pooling_excludes_padding(self, encoder):
        """Pooled vectors differ from a naive all-positions mean whenever
        padding is present, and match it when there is none."""
        texts = [sentence(4, seed=10), sentence(50, seed=11)]
        enc = encoder.tokenizer(texts, max_length=512, truncation=True,
                                padding=True, return_tensors="pt")
        with torch.no_grad():
            hidden = encoder.model(**enc).last_hidden_state
        naive = hidden.mean(dim=1).numpy()  # averages padding rows too
        service = encoder.encode_texts(texts)
        assert not np.allclose(service[0], naive[0], atol=1e-4)


class TestEmbedBatch:
    def test_order_preserved_and_errors_collected(self, encoder):
        items = [
            ("a", sentence(6, seed=12)),
            ("empty", "   "),
            ("b", sentence(9, seed=13)),
        ]
        rows, errors = encoder.embed_batch(items)
        assert [r[0] for r in rows] == ["a", "b"]
        assert [e.doc_id for e in errors] == ["empty"]
        assert errors[0].reason == "empty_text"

    def test_duplicate_ids_rejected(self, encoder):
        with pytest.raises(ValueError, match="duplicate"):
            encoder.embed_batch([("x", "the"), ("x", "of")])


class TestEmbedCorpus:
    def write_docs(self, path, docs):
        with open(path, "w", encoding="utf-8") as fh:
            for doc_id, text in docs:
                fh.write(json.dumps({"id": doc_id, "lang": "xx", "text": text}) + "\n")

    def test_shard_roundtrip_and_alignment(self, encoder, tmp_path):
        docs = [(f"d{i}", sentence(8 + i, seed=20 + i)) for i in range(10)]
        docs_path = tmp_path / "c.docs.jsonl"
        self.write_docs(docs_path, docs)
        out = tmp_path / "c.embx"
        summary = encoder.embed_corpus(docs_path, out, batch_size=3)
        assert summary.embedded == 10
        ids, vectors, meta = read_embx(out)
        assert ids == [d[0] for d in docs]
        assert vectors.shape == (10, 768)
        assert meta["truncation"] == TRUNCATION_RULE
        assert meta["deterministic"] == "true"
        assert meta["model"]

    def test_rerun_byte_identical(self, encoder, tmp_path):
        docs = [(f"d{i}", sentence(10, seed=40 + i)) for i in range(6)]
        docs_path = tmp_path / "c.docs.jsonl"
        self.write_docs(docs_path, docs)
        out1 = tmp_path / "one.embx"
        out2 = tmp_path / "two.embx"
        encoder.embed_corpus(docs_path, out1, batch_size=4)
        encoder.embed_corpus(docs_path, out2, batch_size=4)
        assert out1.read_bytes() == out2.read_bytes()

    def test_empty_text_among_ten(self, encoder, tmp_path):
        docs = [(f"d{i}", "" if i == 4 else sentence(7, seed=60 + i))
                for i in range(10)]
        docs_path = tmp_path / "c.docs.jsonl"
        self.write_docs(docs_path, docs)
        out = tmp_path / "c.embx"
        summary = encoder.embed_corpus(docs_path, out, batch_size=4)
        assert summary.embedded == 9
        assert [e.doc_id for e in summary.errors] == ["d4"]
        ids, vectors, _ = read_embx(out)
        assert "d4" not in ids
        assert len(ids) == 9
