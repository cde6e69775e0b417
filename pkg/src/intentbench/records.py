"""Cart-intent records: parsing model output, canonical JSON form, exact-match scoring.

The record is the (action, product, quantity) triple every other module consumes.
Scoring is deliberately strict: a prediction counts only if the first JSON object
found in the output carries exactly the three expected keys with the right types
and values. Partial failures are classified, never partially credited.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from enum import Enum


class Action(str, Enum):
    ADD = "add"
    REMOVE = "remove"


class ErrorClass(str, Enum):
    """Why a prediction failed to match (NONE means it matched)."""

    NONE = "none"
    INVALID_JSON = "invalid_json"
    SCHEMA_VIOLATION = "schema_violation"
    WRONG_ACTION = "wrong_action"
    WRONG_PRODUCT = "wrong_product"
    WRONG_QUANTITY = "wrong_quantity"
    MULTIPLE_WRONG = "multiple_wrong"
    BACKEND_ERROR = "backend_error"


# Classes for which no parsed record exists.
_UNPARSED_CLASSES = frozenset(
    {ErrorClass.INVALID_JSON, ErrorClass.SCHEMA_VIOLATION, ErrorClass.BACKEND_ERROR}
)

_RECORD_KEYS = ("action", "product", "quantity")


class NoObjectFound(ValueError):
    """No balanced, valid JSON object anywhere in the text."""


class SchemaViolation(ValueError):
    """A JSON object was found but it does not satisfy the record schema."""


@dataclass(frozen=True)
class IntentRecord:
    """One shopping-cart intent: do `action` on `quantity` units of `product`."""

    action: Action
    product: str
    quantity: int

    def __post_init__(self) -> None:
        if not isinstance(self.action, Action):
            object.__setattr__(self, "action", Action(self.action))
        if not isinstance(self.product, str) or not self.product.strip():
            raise ValueError("product must be non-empty text")
        if isinstance(self.quantity, bool) or not isinstance(self.quantity, int):
            raise ValueError("quantity must be an integer")
        if self.quantity < 1:
            raise ValueError("quantity must be >= 1")


@dataclass(frozen=True)
class MatchOutcome:
    """Result of comparing one prediction against its gold record."""

    matched: bool
    error_class: ErrorClass
    predicted: IntentRecord | None

    def __post_init__(self) -> None:
        if self.matched != (self.error_class is ErrorClass.NONE):
            raise ValueError("matched must hold exactly when error_class is NONE")
        if (self.predicted is None) != (self.error_class in _UNPARSED_CLASSES):
            raise ValueError("predicted must be absent exactly for unparsed outcomes")


def _first_json_object(text: str) -> dict:
    """Return the first balanced ``{...}`` substring that parses as a JSON object."""
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(value, dict):
            return value
        pos = text.find("{", pos + 1)
    raise NoObjectFound("no JSON object found in model output")


def parse_intent_json(text: str) -> IntentRecord:
    """Parse an intent record from arbitrary model output.

    Prose around the object is tolerated; the first balanced JSON object wins.
    The schema is strict: exactly the three keys, `action` one of add/remove,
    `product` non-empty text, `quantity` an integral JSON number >= 1.
    """
    obj = _first_json_object(text)

    extra = set(obj) - set(_RECORD_KEYS)
    if extra:
        raise SchemaViolation(f"unexpected keys: {sorted(extra)}")
    missing = set(_RECORD_KEYS) - set(obj)
    if missing:
        raise SchemaViolation(f"missing keys: {sorted(missing)}")

    action = obj["action"]
    if not isinstance(action, str) or action not in (Action.ADD.value, Action.REMOVE.value):
        raise SchemaViolation(f"unknown action: {action!r}")

    product = obj["product"]
    if not isinstance(product, str) or not product.strip():
        raise SchemaViolation("product must be non-empty text")

    quantity = obj["quantity"]
    if isinstance(quantity, bool):
        raise SchemaViolation("quantity must be a number, not a boolean")
    if isinstance(quantity, float):
        if not quantity.is_integer():
            raise SchemaViolation(f"quantity must be integral, got {quantity}")
        quantity = int(quantity)
    if not isinstance(quantity, int):
        raise SchemaViolation(f"quantity must be a number, got {type(quantity).__name__}")
    if quantity < 1:
        raise SchemaViolation(f"quantity must be >= 1, got {quantity}")

    return IntentRecord(Action(action), product, quantity)


def canonical_serialize(record: IntentRecord) -> str:
    """Serialize to the canonical wire form.

    Fixed key order (action, product, quantity), no whitespace, minimal escaping
    (non-ASCII characters stay literal UTF-8), quantity as a bare integer.
    """
    payload = {
        "action": record.action.value,
        "product": record.product,
        "quantity": record.quantity,
    }
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def exact_match(prediction_text: str, gold: IntentRecord, *, normalize_product: bool = False) -> MatchOutcome:
    """Score one prediction against the gold record.

    Matching requires all three fields to be equal; product comparison is
    case-sensitive and byte-exact after trimming surrounding whitespace.
    `normalize_product` additionally applies Unicode NFC to both sides before
    comparing (off by default: catalog names are canonical).
    """
    try:
        predicted = parse_intent_json(prediction_text)
    except NoObjectFound:
        return MatchOutcome(False, ErrorClass.INVALID_JSON, None)
    except SchemaViolation:
        return MatchOutcome(False, ErrorClass.SCHEMA_VIOLATION, None)

    def norm(product: str) -> str:
        product = product.strip()
        return unicodedata.normalize("NFC", product) if normalize_product else product

    wrong = []
    if predicted.action is not gold.action:
        wrong.append(ErrorClass.WRONG_ACTION)
    if norm(predicted.product) != norm(gold.product):
        wrong.append(ErrorClass.WRONG_PRODUCT)
    if predicted.quantity != gold.quantity:
        wrong.append(ErrorClass.WRONG_QUANTITY)

    if not wrong:
        return MatchOutcome(True, ErrorClass.NONE, predicted)
    if len(wrong) == 1:
        return MatchOutcome(False, wrong[0], predicted)
    return MatchOutcome(False, ErrorClass.MULTIPLE_WRONG, predicted)


def backend_error_outcome() -> MatchOutcome:
    """Outcome recorded when the backend call itself failed after retries."""
    return MatchOutcome(False, ErrorClass.BACKEND_ERROR, None)
