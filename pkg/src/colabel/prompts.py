"""Node classification prompt templates and label parsing for text-predictor answers."""

from __future__ import annotations

import re
import string
import warnings
from dataclasses import dataclass

from .graph import LabelSpace
from .labeling import UNPARSED

_HEAD = "Given a node-centered graph with centric node description: {raw_text}, "
_TAIL = "please tell me which class the center node belongs to?"

TEMPLATES = {
    "cora": _HEAD + "each node represents a paper, we need to classify the center node into "
                    "{n_classes} classes: {labels}, " + _TAIL,
    "citeseer": _HEAD + "each node represents a paper, we need to classify the center node into "
                        "{n_classes} classes: {labels}, " + _TAIL,
    "pubmed": _HEAD + "each node represents a paper about Diabetes, we need to classify the center node into "
                      "{n_classes} classes: {labels}, " + _TAIL,
    "arxiv": _HEAD + "we need to classify the center node into {n_classes} arXiv CS sub-categories: "
                     "{labels}, " + _TAIL,
    "products": _HEAD + "each node represents a product, we need to classify the center node into "
                        "{n_classes} classes: {labels}, " + _TAIL,
    "generic": _HEAD + "we need to classify the center node into {n_classes} classes: {labels}, " + _TAIL,
}

_FIELDS = {"raw_text", "labels", "n_classes"}


class EmptyTextWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    name: str = "custom"

    def __post_init__(self):
        unknown = {f for _, f, _, _ in string.Formatter().parse(self.text) if f is not None} - _FIELDS
        if unknown:
            raise ValueError(f"unresolvable placeholder(s) {sorted(unknown)} in template {self.name!r}")

    @classmethod
    def named(cls, name: str) -> "PromptTemplate":
        try:
            return cls(TEMPLATES[name], name)
        except KeyError:
            raise KeyError(f"no template named {name!r}; choose from {sorted(TEMPLATES)}") from None

    def render(self, text: str, label_space: LabelSpace) -> str:
        if not text.strip():
            warnings.warn("rendering a prompt with an empty node description", EmptyTextWarning, stacklevel=3)
        return self.text.format(raw_text=text, labels=", ".join(label_space.class_names),
                                n_classes=len(label_space))


def render_prompt(template: PromptTemplate, text: str, label_space: LabelSpace) -> str:
    return template.render(text, label_space)


_STRIP = string.whitespace + string.punctuation.replace("_", "")


def _norm(s: str) -> str:
    return " ".join(s.strip(_STRIP).lower().split())


def parse_llm_label(raw: str, label_space: LabelSpace) -> int:
    """Map a free-text answer to a class index, or ``UNPARSED``.

    An answer equal to a class name (ignoring case and surrounding punctuation)
    wins outright. Otherwise exactly one class name must occur in the answer as
    a whole-word match; a name nested inside a longer matched name does not count.
    """
    if not isinstance(raw, str):
        return UNPARSED
    answer = _norm(raw)
    if not answer:
        return UNPARSED
    names = [_norm(n) for n in label_space.class_names]
    for i, n in enumerate(names):
        if answer == n:
            return i
    spans: dict[int, list[tuple[int, int]]] = {}
    for i, n in enumerate(names):
        if not n:
            continue
        pat = r"(?<![0-9a-z])" + re.escape(n) + r"(?![0-9a-z])"
        found = [m.span() for m in re.finditer(pat, answer)]
        if found:
            spans[i] = found
    hits = []
    for i, sp in spans.items():
        nested = all(any(j != i and a <= s and e <= b and (b - a) > (e - s)
                         for j, other in spans.items() for a, b in other) for s, e in sp)
        if not nested:
            hits.append(i)
    return hits[0] if len(hits) == 1 else UNPARSED
