"""Builds a tiny word-level causal LM, trained in-process, for service tests.

No network: the tokenizer is constructed from the test corpus vocabulary and
the model is a 2-layer GPT-2 trained for a few hundred steps on the exact
scoring strings the tests replay. That gives real, strongly ordered
probabilities (memorized continuations score far above shuffled ones) while
keeping the whole suite CPU-only and hermetic.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest
import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

from scorer_service.prompts import build_prompt

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

FIXTURES_DIR = Path(__file__).resolve().parents[2] / "tests" / "fixtures"

CONTEXT_SENTENCES = [
    "the harbor line opens in march after years of planning .",
    "a regional sales tax funds the harbor line project .",
    "the oversight board publishes quarterly ridership reports .",
    "forty thousand riders are projected for the first year .",
    "groceries and medicine are exempt from the sales tax .",
    "construction crews begin work at the university station .",
]
QUERY = "how is the harbor line funded ?"


def context_payload() -> list[dict]:
    return [{"id": i, "text": t} for i, t in enumerate(CONTEXT_SENTENCES)]


def training_lines() -> list[str]:
    lines = []
    for target in CONTEXT_SENTENCES:
        lines.append(build_prompt(context_payload(), QUERY, "") + target)
    lines.extend(CONTEXT_SENTENCES)
    return lines


def _build_tokenizer(lines: list[str]) -> PreTrainedTokenizerFast:
    vocab = {"<unk>": 0, "<bos>": 1, "<eos>": 2, "<pad>": 3}
    for line in lines:
        for token in line.split():
            vocab.setdefault(token, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    return PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="<unk>", bos_token="<bos>",
        eos_token="<eos>", pad_token="<pad>")


def _train(tokenizer: PreTrainedTokenizerFast, lines: list[str]) -> GPT2LMHeadModel:
    torch.manual_seed(0)
    config = GPT2Config(
        vocab_size=len(tokenizer), n_positions=256, n_embd=64,
        n_layer=2, n_head=2,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id)
    model = GPT2LMHeadModel(config)
    encoded = [
        [tokenizer.bos_token_id]
        + tokenizer.encode(line, add_special_tokens=False)
        + [tokenizer.eos_token_id]
        for line in lines
    ]
    width = max(len(e) for e in encoded)
    pad = tokenizer.pad_token_id
    input_ids = torch.tensor([e + [pad] * (width - len(e)) for e in encoded])
    attention = (input_ids != pad).long()
    labels = input_ids.masked_fill(input_ids == pad, -100)

    optimizer = torch.optim.AdamW(model.parameters(), lr=5e-3)
    model.train()
    final_loss = float("inf")
    for _ in range(250):
        optimizer.zero_grad()
        loss = model(input_ids=input_ids, attention_mask=attention,
                     labels=labels).loss
        loss.backward()
        optimizer.step()
        final_loss = float(loss.detach())
    assert final_loss < 0.5, f"undertrained: loss={final_loss:.3f}"
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("tiny-lm")
    lines = training_lines()
    tokenizer = _build_tokenizer(lines)
    model = _train(tokenizer, lines)
    tokenizer.save_pretrained(path)
    model.save_pretrained(path)
    return str(path)
