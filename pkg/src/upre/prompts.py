"""Learnable domain prompts.

A prompt assembly is a matrix of token-embedding rows: a learnable
context block (pseudo-tokens) followed by frozen word-embedding rows for
the static text.  Three views share the machinery:

* image view  -- context ``u`` + "a photo taken in a <domain>"
* positive view -- context ``v`` + "a <domain> photo of a <category>"
* negative view -- context ``w`` + "a <domain> photo of an unknown class"

The image view reuses one ``u`` for every domain, so source/target
assemblies alias the same context tensor.  Prompt modes mirror the
ablation grid: ``static_*`` drop the context block entirely,
``learnable_keyword`` keeps only the keyword suffix, and
``learnable_shared`` aliases u = v = w.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EncoderStub, tokenize
from .errors import ConfigError, InputError
from .rng import Rng, derive_seed
from .templates import NEGATIVE_TEMPLATE, POSITIVE_TEMPLATE, TemplateBank

PROMPT_MODES = (
    "static_keyword",
    "static_complete",
    "learnable_keyword",
    "learnable_shared",
    "learnable_complete",
)

CONTEXT_INIT_STD = 0.02


def _display(name: str) -> str:
    return name.replace("_", " ").strip()


@dataclass
class PromptParams:
    """Context matrices for the three prompt views (possibly aliased)."""

    u: Tensor
    v: Tensor
    w: Tensor
    length: int
    d_tok: int
    mode: str
    seed: int

    @property
    def shared(self) -> bool:
        return self.u is self.v and self.v is self.w

    @property
    def learnable(self) -> bool:
        return self.mode.startswith("learnable")

    def unique_tensors(self) -> list[Tensor]:
        return [self.u] if self.shared else [self.u, self.v, self.w]

    def params_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for t in self.unique_tensors():
            h.update(t.values.tobytes())
        return h.hexdigest()


def init_prompt_params(length: int, d_tok: int, seed: int, mode: str = "learnable_complete") -> PromptParams:
    """Gaussian(0, 0.02) context init from the deterministic generator."""
    if length < 1:
        raise ConfigError("context length must be at least 1")
    if mode not in PROMPT_MODES:
        raise ConfigError(f"unknown prompt mode {mode!r}")
    rng = Rng(derive_seed(seed, "prompt_context"))
    if mode == "learnable_shared":
        shared = ad.parameter(rng.normal((length, d_tok)) * CONTEXT_INIT_STD)
        return PromptParams(shared, shared, shared, length, d_tok, mode, seed)
    u = ad.parameter(rng.normal((length, d_tok)) * CONTEXT_INIT_STD)
    v = ad.parameter(rng.normal((length, d_tok)) * CONTEXT_INIT_STD)
    w = ad.parameter(rng.normal((length, d_tok)) * CONTEXT_INIT_STD)
    return PromptParams(u, v, w, length, d_tok, mode, seed)


@dataclass
class PromptAssembly:
    """Context rows (live view onto the params) plus frozen suffix rows."""

    kind: str
    domain: str
    category: str | None
    context: Tensor | None
    static_rows: Tensor
    text: str

    def rows(self) -> Tensor:
        if self.context is None:
            return self.static_rows
        return ad.concat_rows([self.context, self.static_rows])

    @property
    def length(self) -> int:
        ctx = 0 if self.context is None else self.context.shape[0]
        return ctx + self.static_rows.shape[0]


def _resolve(stub: EncoderStub, text: str, what: str) -> Tensor:
    toks = tokenize(text) if text.strip() else []
    if not toks:
        raise InputError(f"{what} resolves to no tokens: {text!r}")
    return ad.constant(stub.token_rows(text))


def _suffix_text(mode: str, complete: str, keyword: str) -> str:
    return keyword if mode.endswith("keyword") else complete


def assemble_image_prompt(
    params: PromptParams,
    stub: EncoderStub,
    domain: str,
    bank: TemplateBank | None = None,
) -> PromptAssembly:
    bank = bank or TemplateBank.default()
    text = _suffix_text(params.mode, bank.fill(0, _display(domain)), _display(domain))
    suffix = _resolve(stub, text, "domain")
    ctx = params.u if params.learnable else None
    return PromptAssembly("image", domain, None, ctx, suffix, text)


def assemble_positive_prompt(
    params: PromptParams,
    stub: EncoderStub,
    domain: str,
    category: str,
    known_categories=None,
) -> PromptAssembly:
    if known_categories is not None and category not in known_categories:
        raise InputError(f"unknown category {category!r}")
    complete = POSITIVE_TEMPLATE.replace("[domain]", _display(domain)).replace("[class]", _display(category))
    text = _suffix_text(params.mode, complete, _display(category))
    suffix = _resolve(stub, text, "category")
    ctx = params.v if params.learnable else None
    return PromptAssembly("positive", domain, category, ctx, suffix, text)


def assemble_negative_prompt(
    params: PromptParams,
    stub: EncoderStub,
    domain: str,
) -> PromptAssembly:
    complete = NEGATIVE_TEMPLATE.replace("[domain]", _display(domain))
    text = _suffix_text(params.mode, complete, "unknown class")
    suffix = _resolve(stub, text, "domain")
    ctx = params.w if params.learnable else None
    return PromptAssembly("negative", domain, None, ctx, suffix, text)


def encode_prompt(stub: EncoderStub, assembly: PromptAssembly) -> Tensor:
    """Unit embedding; gradients reach only the context rows."""
    return stub.text_encode(assembly.rows())


def params_to_arrays(params: PromptParams) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "length": params.length,
        "d_tok": params.d_tok,
        "mode": params.mode,
        "seed": params.seed,
        "shared": params.shared,
    }
    if params.shared:
        return meta, {"prompt_u": params.u.values.copy()}
    return meta, {
        "prompt_u": params.u.values.copy(),
        "prompt_v": params.v.values.copy(),
        "prompt_w": params.w.values.copy(),
    }


def params_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> PromptParams:
    mode = meta["mode"]
    if meta.get("shared"):
        shared = ad.parameter(arrays["prompt_u"].copy())
        return PromptParams(shared, shared, shared, meta["length"], meta["d_tok"], mode, meta["seed"])
    return PromptParams(
        ad.parameter(arrays["prompt_u"].copy()),
        ad.parameter(arrays["prompt_v"].copy()),
        ad.parameter(arrays["prompt_w"].copy()),
        meta["length"],
        meta["d_tok"],
        mode,
        meta["seed"],
    )
