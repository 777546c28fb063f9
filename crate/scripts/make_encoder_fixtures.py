#!/usr/bin/env python3
"""Regenerate the tiny encoder checkpoints used by the Rust parity tests.

Each fixture directory holds a randomly initialised Hugging Face model
(config.json + model.safetensors), a matching tokenizer.json, and
expected.json with reference token ids and final hidden states computed by
the `transformers` implementation. The Rust encoders must reproduce them.

Usage: python3 scripts/make_encoder_fixtures.py [OUT_DIR]
"""

import json
import os
import sys

import torch
from tokenizers import Tokenizer, decoders, models, normalizers, pre_tokenizers, processors, trainers
from transformers import (
    BertConfig,
    BertForSequenceClassification,
    DistilBertConfig,
    DistilBertModel,
    RobertaConfig,
    RobertaForSequenceClassification,
    XLNetConfig,
    XLNetModel,
)

CORPUS = [
    "With this 2 years of unemployment, I want to quit my life.",
    "My boss fired me and I cannot find another job anywhere.",
    "The new medication makes me feel numb and tired all day.",
    "My girlfriend left me and I feel completely alone now.",
    "Nobody at school talks to me, I am always left out.",
    "I was bullied and abused for years by my own family.",
    "I just feel sad today and I do not know why.",
    "Therapy and pills have not helped my depression at all.",
    "Work stress is crushing me, my career is going nowhere.",
    "I miss my friends, everyone drifted away from me.",
]

SENTENCES = [
    "I lost my job and my girlfriend left me.",
    "Pills make me tired.",
]

HIDDEN = 32
LAYERS = 2
HEADS = 4
INNER = 64


def wordpiece_tokenizer():
    tok = Tokenizer(models.WordPiece(unk_token="[UNK]"))
    tok.normalizer = normalizers.BertNormalizer(lowercase=True)
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    trainer = trainers.WordPieceTrainer(
        vocab_size=150, special_tokens=["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    )
    tok.train_from_iterator(CORPUS, trainer)
    cls, sep = tok.token_to_id("[CLS]"), tok.token_to_id("[SEP]")
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", cls), ("[SEP]", sep)],
    )
    tok.decoder = decoders.WordPiece()
    return tok


def bytelevel_tokenizer():
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    trainer = trainers.BpeTrainer(
        vocab_size=300,
        special_tokens=["<s>", "<pad>", "</s>", "<unk>", "<mask>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tok.train_from_iterator(CORPUS, trainer)
    tok.post_processor = processors.RobertaProcessing(("</s>", 2), ("<s>", 0))
    tok.decoder = decoders.ByteLevel()
    return tok


def unigram_tokenizer():
    tok = Tokenizer(models.Unigram())
    tok.normalizer = normalizers.Sequence([normalizers.Replace("``", '"'), normalizers.Replace("''", '"')])
    tok.pre_tokenizer = pre_tokenizers.Metaspace()
    trainer = trainers.UnigramTrainer(
        vocab_size=120,
        special_tokens=["<unk>", "<s>", "</s>", "<cls>", "<sep>", "<pad>", "<mask>"],
        unk_token="<unk>",
    )
    tok.train_from_iterator(CORPUS, trainer)
    sep, cls = tok.token_to_id("<sep>"), tok.token_to_id("<cls>")
    tok.post_processor = processors.TemplateProcessing(
        single="$A:0 <sep>:0 <cls>:2",
        pair="$A:0 <sep>:0 $B:1 <sep>:1 <cls>:2",
        special_tokens=[("<sep>", sep), ("<cls>", cls)],
    )
    tok.decoder = decoders.Metaspace()
    return tok


def perturb(model, seed):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=gen))


def batch(tok, pad_id):
    encs = [tok.encode(s) for s in SENTENCES]
    width = max(len(e.ids) for e in encs)
    ids, mask, types = [], [], []
    for e in encs:
        pad = width - len(e.ids)
        ids.append(e.ids + [pad_id] * pad)
        mask.append([1] * len(e.ids) + [0] * pad)
        types.append(e.type_ids + [0] * pad)
    return width, ids, mask, types


def write(out, name, model, tok, pad_id, token_type=True):
    path = os.path.join(out, name)
    os.makedirs(path, exist_ok=True)
    model.eval()
    model.save_pretrained(path, safe_serialization=True)
    tok.save(os.path.join(path, "tokenizer.json"))
    width, ids, mask, types = batch(tok, pad_id)
    kwargs = dict(input_ids=torch.tensor(ids), attention_mask=torch.tensor(mask))
    if token_type:
        kwargs["token_type_ids"] = torch.tensor(types)
    with torch.no_grad():
        inner = getattr(model, model.base_model_prefix, model)
        hidden = inner(**kwargs).last_hidden_state
    ten_pieces = None
    for sentence in CORPUS:
        words = sentence.split()
        for k in range(1, len(words) + 1):
            prefix = " ".join(words[:k])
            if len(tok.encode(prefix, add_special_tokens=False).ids) == 10:
                ten_pieces = prefix
                break
        if ten_pieces:
            break
    expected = {
        "sentences": SENTENCES,
        "width": width,
        "input_ids": ids,
        "attention_mask": mask,
        "token_type_ids": types,
        "last_hidden_state": hidden.tolist(),
        "num_special_tokens": tok.post_processor.num_special_tokens_to_add(False),
        "ten_piece_text": ten_pieces,
    }
    with open(os.path.join(path, "expected.json"), "w") as f:
        json.dump(expected, f)
    # keep only what the Rust loader consumes
    for extra in os.listdir(path):
        if extra not in ("config.json", "model.safetensors", "tokenizer.json", "expected.json"):
            os.remove(os.path.join(path, extra))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/encoders"
    torch.manual_seed(0)

    wp = wordpiece_tokenizer()
    bert = BertForSequenceClassification(BertConfig(
        vocab_size=wp.get_vocab_size(), hidden_size=HIDDEN, num_hidden_layers=LAYERS,
        num_attention_heads=HEADS, intermediate_size=INNER, max_position_embeddings=64,
        pad_token_id=0, num_labels=6,
    ))
    perturb(bert, 1)
    write(out, "bert", bert, wp, 0)

    distil = DistilBertModel(DistilBertConfig(
        vocab_size=wp.get_vocab_size(), dim=HIDDEN, n_layers=LAYERS, n_heads=HEADS,
        hidden_dim=INNER, max_position_embeddings=64, pad_token_id=0,
    ))
    perturb(distil, 2)
    write(out, "distilbert", distil, wp, 0, token_type=False)

    bl = bytelevel_tokenizer()
    roberta = RobertaForSequenceClassification(RobertaConfig(
        vocab_size=bl.get_vocab_size(), hidden_size=HIDDEN, num_hidden_layers=LAYERS,
        num_attention_heads=HEADS, intermediate_size=INNER, max_position_embeddings=66,
        type_vocab_size=1, pad_token_id=1, bos_token_id=0, eos_token_id=2, num_labels=6,
    ))
    perturb(roberta, 3)
    write(out, "roberta", roberta, bl, 1)

    ug = unigram_tokenizer()
    xlnet = XLNetModel(XLNetConfig(
        vocab_size=ug.get_vocab_size(), d_model=HIDDEN, n_layer=LAYERS, n_head=HEADS,
        d_inner=INNER, pad_token_id=ug.token_to_id("<pad>"),
    ))
    perturb(xlnet, 4)
    write(out, "xlnet", xlnet, ug, ug.token_to_id("<pad>"))


if __name__ == "__main__":
    main()
