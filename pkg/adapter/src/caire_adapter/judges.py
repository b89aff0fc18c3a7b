"""Judge models served behind /v1/score.

A judge answers two questions: a probability distribution over the five
score tokens for a prompt (renormalized over exactly those tokens, which is
what constrained decoding amounts to at the answer position), and the
negative log-likelihood of a completion given a prompt. DeterministicJudge
answers both from content digests and needs no weights; HFJudge wraps a
causal language model from transformers, optionally generating a short
reasoning trace before the constrained readout (the chain-of-thought serving
option). The judge never sees wire concerns; the server owns those.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

SCORE_TOKENS = ("1", "2", "3", "4", "5")

SYSTEM_PREAMBLE = "You are an expert in evaluating the cultural relevance of images."


class JudgeModel(Protocol):
    identifier: str
    supports_images: bool

    def score_distribution(self, prompt: str, image: bytes | None) -> tuple[float, ...]: ...

    def completion_nll(self, prompt: str, completion: str, image: bytes | None) -> float: ...


class DeterministicJudge:
    """Digest-driven reference judge: fully deterministic, always protocol-valid."""

    def __init__(self, seed: int = 0, supports_images: bool = True):
        self.seed = int(seed)
        self.supports_images = bool(supports_images)
        self.identifier = f"deterministic:{self.seed}"

    def _digest(self, *parts: bytes) -> bytes:
        h = hashlib.sha256(str(self.seed).encode())
        for part in parts:
            h.update(b"\x00" + part)
        return h.digest()

    def score_distribution(self, prompt: str, image: bytes | None) -> tuple[float, ...]:
        digest = self._digest(b"dist", prompt.encode("utf-8"), image or b"")
        raw = [int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(5)]
        weights = [(r / 2**32) + 0.05 for r in raw]
        total = sum(weights)
        return tuple(w / total for w in weights)

    def completion_nll(self, prompt: str, completion: str, image: bytes | None) -> float:
        digest = self._digest(
            b"nll", prompt.encode("utf-8"), completion.encode("utf-8"), image or b""
        )
        u = int.from_bytes(digest[:8], "little") / 2**64
        return 0.5 + 9.5 * u


class HFJudge:
    """Causal-LM judge via transformers (text-only models).

    The distribution readout takes the next-token logits after the prompt,
    keeps the logits of the five digit tokens, and softmaxes over just those:
    the model's output space restricted to valid score tokens. With
    ``cot=True`` the model first generates a greedy reasoning trace, and the
    readout happens after it. Images are not forwarded; a multimodal serving
    path should subclass and implement its own preprocessing (the model's own
    processor defines resolution and cropping).
    """

    def __init__(self, model_id: str, cot: bool = False, max_reasoning_tokens: int = 256,
                 device: str = "cpu"):
        self.identifier = f"hf:{model_id}" + ("+cot" if cot else "")
        self.model_id = model_id
        self.cot = cot
        self.max_reasoning_tokens = max_reasoning_tokens
        self.device = device
        self.supports_images = False
        self._model = None
        self._tokenizer = None
        self._score_token_ids = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError("HFJudge needs the [models] extra (torch, transformers)") from exc
        self._tokenizer = AutoTokenizer.from_pretrained(self.model_id)
        self._model = AutoModelForCausalLM.from_pretrained(self.model_id).to(self.device).eval()
        ids = []
        for token in SCORE_TOKENS:
            encoded = self._tokenizer.encode(token, add_special_tokens=False)
            if len(encoded) != 1:
                raise RuntimeError(
                    f"tokenizer splits score token {token!r} into {len(encoded)} pieces"
                )
            ids.append(encoded[0])
        self._score_token_ids = ids

    def _chat_text(self, prompt: str) -> str:
        tok = self._tokenizer
        if getattr(tok, "chat_template", None):
            return tok.apply_chat_template(
                [
                    {"role": "system", "content": SYSTEM_PREAMBLE},
                    {"role": "user", "content": prompt},
                ],
                tokenize=False,
                add_generation_prompt=True,
            )
        return f"{SYSTEM_PREAMBLE}\n\n{prompt}\n"

    def score_distribution(self, prompt: str, image: bytes | None) -> tuple[float, ...]:
        self._load()
        import torch

        text = self._chat_text(prompt)
        inputs = self._tokenizer(text, return_tensors="pt").to(self.device)
        with torch.no_grad():
            if self.cot:
                generated = self._model.generate(
                    **inputs,
                    max_new_tokens=self.max_reasoning_tokens,
                    do_sample=False,
                    pad_token_id=self._tokenizer.eos_token_id,
                )
                inputs = {"input_ids": generated, "attention_mask": torch.ones_like(generated)}
            logits = self._model(**inputs).logits[0, -1]
            restricted = logits[self._score_token_ids]
            probs = torch.softmax(restricted.double(), dim=-1)
        return tuple(float(p) for p in probs)

    def completion_nll(self, prompt: str, completion: str, image: bytes | None) -> float:
        self._load()
        import torch

        prompt_ids = self._tokenizer(self._chat_text(prompt), return_tensors="pt").input_ids
        full_ids = self._tokenizer(
            self._chat_text(prompt) + completion, return_tensors="pt"
        ).input_ids
        with torch.no_grad():
            logits = self._model(full_ids.to(self.device)).logits[0]
        log_probs = torch.log_softmax(logits.double(), dim=-1)
        total = 0.0
        for pos in range(prompt_ids.shape[1], full_ids.shape[1]):
            token = int(full_ids[0, pos])
            total -= float(log_probs[pos - 1, token])
        return total


def judge_from_spec(spec: str) -> JudgeModel:
    """``deterministic[:seed]`` or ``hf:<model_id>[+cot]``."""
    if spec.startswith("deterministic"):
        parts = spec.split(":")
        seed = int(parts[1]) if len(parts) > 1 else 0
        return DeterministicJudge(seed)
    if spec.startswith("hf:"):
        model = spec[3:]
        cot = model.endswith("+cot")
        if cot:
            model = model[: -len("+cot")]
        return HFJudge(model, cot=cot)
    raise ValueError(f"unknown judge spec {spec!r}; use deterministic[:seed] or hf:<model>")
