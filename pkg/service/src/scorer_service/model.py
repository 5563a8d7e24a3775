"""Causal-LM backend: log p(target | prompt) as a sum of token log-probs.

Stateless per request (no KV reuse across requests) and deterministic: the
model runs in eval mode under no_grad, and forward passes are serialized
behind a lock, so identical requests always return identical values.

Tokenization alignment: the prompt and prompt+target are encoded separately
and the target's tokens are taken after the longest common prefix of the
two id sequences. When the tokenizer merges the boundary (a target glued to
a non-whitespace prompt ending), the merged token is scored as part of the
target — the standard suffix approximation for subword vocabularies.
"""

from __future__ import annotations

import logging
import threading

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

logger = logging.getLogger(__name__)


class PromptTooLongError(Exception):
    """Encoded request exceeds the model's context budget."""


class EmptyTargetError(Exception):
    """Target contributed no tokens after the prompt."""


class CausalLMBackend:
    def __init__(self, model_path: str, *, device: str = "cpu",
                 max_context_tokens: int = 4096):
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForCausalLM.from_pretrained(model_path)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.max_context_tokens = max_context_tokens
        self._lock = threading.Lock()

    def logprob(self, prompt: str, target: str) -> float:
        prompt_ids = self.tokenizer.encode(prompt, add_special_tokens=False)
        full_ids = self.tokenizer.encode(prompt + target, add_special_tokens=False)

        common = 0
        limit = min(len(prompt_ids), len(full_ids))
        while common < limit and prompt_ids[common] == full_ids[common]:
            common += 1
        if len(full_ids) - common <= 0:
            raise EmptyTargetError("target produced no tokens to score")

        bos = self.tokenizer.bos_token_id
        if bos is not None:
            ids = [bos] + full_ids
            first_target_pos = common + 1
        else:
            if common == 0:
                raise EmptyTargetError(
                    "cannot condition: empty prompt and no BOS token")
            ids = full_ids
            first_target_pos = common
        if len(ids) > self.max_context_tokens:
            raise PromptTooLongError(
                f"request holds {len(ids)} tokens > limit {self.max_context_tokens}")

        input_ids = torch.tensor([ids], dtype=torch.long, device=self.device)
        with self._lock, torch.no_grad():
            logits = self.model(input_ids).logits[0]
        logprobs = torch.log_softmax(logits.float(), dim=-1)
        total = 0.0
        for pos in range(first_target_pos, len(ids)):
            total += float(logprobs[pos - 1, ids[pos]])
        return total
