"""Seeded generator for the synthetic multilingual cart-intent dataset.

Utterances are rendered from per-language template banks with table-driven
product surface forms, then optionally degraded by independent noise injectors
(typos/slang, greetings/emoji/brands, code-switching). The ground-truth record
is fixed before any noise is applied and never changes afterwards.

Everything is a pure function of (spec, seed): one sequential RNG stream per
dataset, so identical specs serialize byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

from . import assets
from .records import Action, IntentRecord

LANGUAGE_NAMES = {"en": "English", "hr": "Croatian", "es": "Spanish"}

_ALLOWED_PLACEHOLDERS = frozenset({"qty", "product", "product_form"})
_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")
_TOKEN_RE = re.compile(r"\w+")

# Basket-size skew: heavy mass on small quantities, thin tail up to 50.
DEFAULT_QUANTITY_WEIGHTS: dict[int, float] = {
    1: 0.40, 2: 0.18, 3: 0.12, 4: 0.08, 5: 0.06, 6: 0.05,
    **{q: 0.08 / 6 for q in range(7, 13)},
    **{q: 0.03 / 38 for q in range(13, 51)},
}

DEFAULT_NOISE_RATES = {"linguistic": 0.25, "contextual": 0.20, "codeswitch": 0.10}


class InvalidSpec(ValueError):
    """Generation spec violates its invariants."""


class InvalidWeights(ValueError):
    """Quantity weight table is not a probability distribution."""


class UnknownPlaceholder(ValueError):
    """Template uses a placeholder other than {qty}/{product}/{product_form}."""


class MissingSurfaceForm(KeyError):
    """Catalog entry lacks the surface form required by the plurality rule."""


class DatasetFormatError(ValueError):
    """A JSONL dataset line does not match the expected schema."""


class NoiseTag(str, Enum):
    TYPO = "typo"
    SLANG = "slang"
    GREETING = "greeting"
    EMOJI = "emoji"
    BRAND = "brand"
    CODESWITCH = "codeswitch"


@dataclass(frozen=True)
class CatalogEntry:
    """A product with its canonical name and per-language counted surface forms."""

    canonical_name: str
    surface_forms: dict  # language -> {"singular": ..., "paucal": ..., "plural": ...}

    def __post_init__(self) -> None:
        if not self.canonical_name.strip():
            raise InvalidSpec("catalog entry needs a canonical name")
        for language, forms in self.surface_forms.items():
            if "singular" not in forms:
                raise InvalidSpec(f"{self.canonical_name}: no singular form for {language!r}")

    def form_for(self, language: str, quantity: int) -> str:
        """Pick the surface form: 1 -> singular, Croatian 2-4 -> paucal, else plural."""
        if quantity == 1:
            key = "singular"
        elif language == "hr" and 2 <= quantity <= 4:
            key = "paucal"
        else:
            key = "plural"
        forms = self.surface_forms.get(language)
        if forms is None or key not in forms:
            raise MissingSurfaceForm(f"{self.canonical_name}: no {key!r} form for {language!r}")
        return forms[key]

    def to_dict(self) -> dict:
        return {"canonical_name": self.canonical_name, "surface_forms": self.surface_forms}

    @classmethod
    def from_dict(cls, raw: dict) -> CatalogEntry:
        return cls(raw["canonical_name"], raw["surface_forms"])


def default_catalog() -> tuple[CatalogEntry, ...]:
    return tuple(CatalogEntry.from_dict(raw) for raw in assets.default_catalog_raw())


def load_catalog(path: str | Path) -> tuple[CatalogEntry, ...]:
    return tuple(CatalogEntry.from_dict(raw) for raw in assets.load_json_file(path))


@dataclass(frozen=True)
class NoiseProfile:
    """Independent injector probabilities plus the per-language text banks."""

    p_linguistic: float = 0.0
    p_contextual: float = 0.0
    p_codeswitch: float = 0.0
    slang: dict = field(default_factory=dict)        # language -> [token, ...]
    greetings: dict = field(default_factory=dict)    # language -> [greeting, ...]
    emoji: dict = field(default_factory=dict)        # language -> [emoji, ...]
    brands: dict = field(default_factory=dict)       # language -> [brand, ...]
    codeswitch: dict = field(default_factory=dict)   # language -> [foreign phrase, ...]

    def __post_init__(self) -> None:
        for name in ("p_linguistic", "p_contextual", "p_codeswitch"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidSpec(f"{name} must be in [0, 1], got {p}")

    @classmethod
    def default(cls) -> NoiseProfile:
        banks = assets.default_noise_banks()
        return cls(
            p_linguistic=DEFAULT_NOISE_RATES["linguistic"],
            p_contextual=DEFAULT_NOISE_RATES["contextual"],
            p_codeswitch=DEFAULT_NOISE_RATES["codeswitch"],
            slang=banks["slang"],
            greetings=banks["greetings"],
            emoji=banks["emoji"],
            brands=banks["brands"],
            codeswitch=banks["codeswitch"],
        )

    @classmethod
    def none(cls) -> NoiseProfile:
        """Profile that never fires; use for noise-free datasets."""
        return cls()

    def to_dict(self) -> dict:
        return {
            "p_linguistic": self.p_linguistic,
            "p_contextual": self.p_contextual,
            "p_codeswitch": self.p_codeswitch,
            "slang": self.slang,
            "greetings": self.greetings,
            "emoji": self.emoji,
            "brands": self.brands,
            "codeswitch": self.codeswitch,
        }


@dataclass(frozen=True)
class GenerationSpec:
    """Everything that determines a generated dataset, seed included."""

    n_examples: int
    seed: int = 0
    languages: tuple[str, ...] = ("en", "hr", "es")
    catalog: tuple[CatalogEntry, ...] = field(default_factory=default_catalog)
    quantity_weights: dict = field(default_factory=lambda: dict(DEFAULT_QUANTITY_WEIGHTS))
    noise_profile: NoiseProfile = field(default_factory=NoiseProfile.default)
    templates: dict = field(default_factory=assets.default_templates)
    quantity_style: str = "digits"  # "digits" | "words"

    def validate(self) -> None:
        if self.n_examples < 0:
            raise InvalidSpec("n_examples must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")
        if not self.languages:
            raise InvalidSpec("languages must be non-empty")
        if not self.catalog:
            raise InvalidSpec("catalog must be non-empty")
        if self.quantity_style not in ("digits", "words"):
            raise InvalidSpec(f"unknown quantity_style {self.quantity_style!r}")
        try:
            _validate_weights(self.quantity_weights)
        except InvalidWeights as exc:
            raise InvalidSpec(str(exc)) from exc
        for language in self.languages:
            bank = self.templates.get(language, {})
            for action in (Action.ADD.value, Action.REMOVE.value):
                if not bank.get(action):
                    raise InvalidSpec(f"no {action!r} templates for language {language!r}")

    def fingerprint(self) -> str:
        """Stable hash over every field that can influence the output."""
        payload = {
            "n_examples": self.n_examples,
            "seed": self.seed,
            "languages": list(self.languages),
            "catalog": [entry.to_dict() for entry in self.catalog],
            "quantity_weights": {str(k): v for k, v in sorted(self.quantity_weights.items())},
            "noise_profile": self.noise_profile.to_dict(),
            "templates": self.templates,
            "quantity_style": self.quantity_style,
        }
        blob = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class Example:
    """One generated utterance with its ground truth and provenance tags."""

    input: str
    output: IntentRecord
    language: str
    noise_tags: tuple[NoiseTag, ...] = ()

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "output": {
                "action": self.output.action.value,
                "product": self.output.product,
                "quantity": self.output.quantity,
            },
            "language": self.language,
            "noise_tags": [tag.value for tag in self.noise_tags],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> Example:
        known = {"input", "output", "language", "noise_tags"}
        extra = set(raw) - known
        if extra:
            raise DatasetFormatError(f"unexpected keys in example: {sorted(extra)}")
        try:
            out = raw["output"]
            record = IntentRecord(Action(out["action"]), out["product"], out["quantity"])
            return cls(
                input=raw["input"],
                output=record,
                language=raw.get("language", "unknown"),
                noise_tags=tuple(NoiseTag(t) for t in raw.get("noise_tags", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"malformed example: {exc}") from exc


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of examples plus the provenance of their generation."""

    examples: tuple[Example, ...]
    seed: int
    spec_fingerprint: str

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, idx: int) -> Example:
        return self.examples[idx]


def _validate_weights(weights: dict) -> None:
    if not weights:
        raise InvalidWeights("empty weight table")
    for q, w in weights.items():
        if not isinstance(q, int) or isinstance(q, bool) or q < 1:
            raise InvalidWeights(f"quantity {q!r} must be an integer >= 1")
        if w < 0:
            raise InvalidWeights(f"negative weight for quantity {q}")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise InvalidWeights(f"weights sum to {total!r}, expected 1.0")


def sample_quantity(rng: random.Random, weights: dict) -> int:
    """Draw a quantity from the weight table by cumulative-bucket inversion."""
    _validate_weights(weights)
    draw = rng.random()
    cumulative = 0.0
    ordered = sorted(weights.items())
    for quantity, weight in ordered:
        cumulative += weight
        if draw < cumulative:
            return quantity
    return ordered[-1][0]  # float residue at the top of the table


def _quantity_token(quantity: int, language: str, style: str) -> str:
    if style == "words":
        words = assets.default_lexicons()["number_words"].get(language, {})
        token = words.get(str(quantity))
        if token:
            return token
    return str(quantity)


def render_utterance(
    template: str,
    action: Action | str,
    entry: CatalogEntry,
    quantity: int,
    language: str,
    *,
    quantity_style: str = "digits",
) -> str:
    """Substitute {qty}/{product}/{product_form} into a template.

    {product} is the canonical name, {product_form} the language- and
    quantity-appropriate surface form. The ground truth never depends on which
    placeholder a template uses.
    """
    del action  # the verb is part of the template text itself
    for name in _PLACEHOLDER_RE.findall(template):
        if name not in _ALLOWED_PLACEHOLDERS:
            raise UnknownPlaceholder(f"unknown placeholder {{{name}}} in template {template!r}")

    substitutions = {
        "qty": _quantity_token(quantity, language, quantity_style),
        "product": entry.canonical_name,
        "product_form": entry.form_for(language, quantity),
    }
    return _PLACEHOLDER_RE.sub(lambda m: substitutions[m.group(1)], template)


def _apply_typo(utterance: str, protected: set[str], rng: random.Random) -> str | None:
    """One character-level typo on a random unprotected alphabetic token."""
    spans = [m for m in _TOKEN_RE.finditer(utterance)
             if m.group().isalpha() and m.group() not in protected and len(m.group()) >= 2]
    if not spans:
        return None
    target = rng.choice(spans)
    token = target.group()
    op = rng.choice(("drop", "swap", "duplicate"))
    if op == "drop":
        pos = rng.randrange(len(token))
        mangled = token[:pos] + token[pos + 1:]
    elif op == "swap":
        pos = rng.randrange(len(token) - 1)
        mangled = token[:pos] + token[pos + 1] + token[pos] + token[pos + 2:]
    else:
        pos = rng.randrange(len(token))
        mangled = token[:pos + 1] + token[pos] + token[pos + 1:]
    return utterance[:target.start()] + mangled + utterance[target.end():]


def inject_noise(
    utterance: str,
    record: IntentRecord,
    profile: NoiseProfile,
    rng: random.Random,
    *,
    language: str,
    protected_tokens: tuple[str, ...] = (),
) -> tuple[str, tuple[NoiseTag, ...]]:
    """Apply each injector independently with its profile probability.

    The record is never altered and the quantity token (digits, or the number
    word when words rendering is on) survives byte-exact: typos only ever touch
    unprotected alphabetic tokens, and the other injectors only prepend/append.
    Empty banks degrade to a no-op with the tag omitted.
    """
    protected = set(protected_tokens) | {str(record.quantity)}
    tags: list[NoiseTag] = []

    if rng.random() < profile.p_linguistic:
        kind = rng.choice(("typo", "slang"))
        if kind == "typo":
            mangled = _apply_typo(utterance, protected, rng)
            if mangled is not None:
                utterance = mangled
                tags.append(NoiseTag.TYPO)
        else:
            bank = profile.slang.get(language) or []
            if bank:
                utterance = f"{utterance} {rng.choice(bank)}"
                tags.append(NoiseTag.SLANG)

    if rng.random() < profile.p_contextual:
        kind = rng.choice(("greeting", "emoji", "brand"))
        if kind == "greeting":
            bank = profile.greetings.get(language) or []
            if bank:
                utterance = f"{rng.choice(bank)} {utterance}"
                tags.append(NoiseTag.GREETING)
        elif kind == "emoji":
            bank = profile.emoji.get(language) or []
            if bank:
                utterance = f"{utterance} {rng.choice(bank)}"
                tags.append(NoiseTag.EMOJI)
        else:
            bank = profile.brands.get(language) or []
            if bank:
                utterance = f"{utterance} {rng.choice(bank)}"
                tags.append(NoiseTag.BRAND)

    if rng.random() < profile.p_codeswitch:
        bank = profile.codeswitch.get(language) or []
        if bank:
            utterance = f"{utterance} {rng.choice(bank)}"
            tags.append(NoiseTag.CODESWITCH)

    return utterance, tuple(tags)


def generate_dataset(spec: GenerationSpec) -> Dataset:
    """Generate the dataset: languages cycle, everything else comes from one RNG stream."""
    try:
        spec.validate()
    except InvalidSpec:
        raise
    rng = random.Random(spec.seed)
    examples = []
    for i in range(spec.n_examples):
        language = spec.languages[i % len(spec.languages)]
        action = rng.choice((Action.ADD, Action.REMOVE))
        entry = rng.choice(spec.catalog)
        quantity = sample_quantity(rng, spec.quantity_weights)
        template = rng.choice(spec.templates[language][action.value])

        record = IntentRecord(action, entry.canonical_name, quantity)
        utterance = render_utterance(
            template, action, entry, quantity, language, quantity_style=spec.quantity_style
        )
        qty_token = _quantity_token(quantity, language, spec.quantity_style)
        utterance, tags = inject_noise(
            utterance, record, spec.noise_profile, rng,
            language=language, protected_tokens=tuple(qty_token.split()),
        )
        examples.append(Example(utterance, record, language, tags))
    return Dataset(tuple(examples), spec.seed, spec.fingerprint())


def split_dataset(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then split at floor(n * fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidSpec("train_fraction must be strictly between 0 and 1")
    order = list(range(len(ds)))
    random.Random(seed).shuffle(order)
    cut = math.floor(len(ds) * train_fraction)
    train = tuple(ds.examples[i] for i in order[:cut])
    val = tuple(ds.examples[i] for i in order[cut:])
    return (
        Dataset(train, ds.seed, ds.spec_fingerprint),
        Dataset(val, ds.seed, ds.spec_fingerprint),
    )


def build_metaprompt(
    language: str,
    action: Action | str,
    entry: CatalogEntry,
    quantity: int,
    style: str = "neutral",
    noise_directives: tuple[str, ...] = (),
) -> str:
    """Generator instruction for LLM-backed data generation.

    Embeds every ground-truth parameter verbatim and demands the canonical JSON
    response schema; callers hand the text to a backends client.
    """
    action_value = action.value if isinstance(action, Action) else str(action)
    language_name = LANGUAGE_NAMES.get(language, language)
    lines = [
        "You are generating one synthetic training example for a shopping-cart assistant.",
        f"Write a single {language_name} user message, in a {style} register, asking to "
        f"{action_value} exactly {quantity} of the product \"{entry.canonical_name}\".",
        "Refer to the product by a natural surface form in that language; "
        "the number must appear in the message.",
    ]
    if noise_directives:
        lines.append("Apply the following noise to the message: " + ", ".join(noise_directives) + ".")
    lines.append(
        "Respond with exactly one JSON object of the form "
        '{"input": "<the user message>", "output": {"action": "' + action_value + '", '
        '"product": "' + entry.canonical_name + '", "quantity": ' + str(quantity) + "}} "
        "and nothing else."
    )
    return "\n".join(lines)


def example_to_json_line(example: Example) -> str:
    """Canonical one-line JSON form used in dataset files."""
    return json.dumps(example.to_dict(), ensure_ascii=False, separators=(",", ":"))


def save_jsonl(ds: Dataset, path: str | Path) -> None:
    text = "".join(example_to_json_line(ex) + "\n" for ex in ds)
    Path(path).write_text(text, encoding="utf-8")


def load_jsonl(path: str | Path) -> Dataset:
    """Load a JSONL dataset; the minimal two-field form gets metadata defaults."""
    raw = Path(path).read_text(encoding="utf-8")
    examples = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise DatasetFormatError(f"{path}:{lineno}: expected an object per line")
        examples.append(Example.from_dict(obj))
    fingerprint = hashlib.sha256(raw.encode("utf-8")).hexdigest()
    return Dataset(tuple(examples), seed=0, spec_fingerprint=fingerprint)
