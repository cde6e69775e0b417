"""Uniform inference-backend abstraction plus few-shot prompt construction.

Three backend kinds share one `complete()` call:

* ``http``       - POSTs to an OpenAI-style ``/chat/completions`` endpoint.
* ``subprocess`` - substitutes the prompt into a shell command template and
                   captures standard output (covers any local engine CLI).
* ``oracle``     - a deterministic rule-based solver over the product catalog;
                   used as the harness's self-verification ground truth.

The oracle resolves the action from per-language verb lexicons (tolerating
small typos via edit distance), the product from catalog surface forms, and
the quantity from digit tokens or number words.
"""

from __future__ import annotations

import os
import random
import re
import shlex
import subprocess
import time
from dataclasses import dataclass
from functools import lru_cache

import requests

from . import assets
from .datagen import CatalogEntry, Example, default_catalog, load_catalog
from .records import Action, IntentRecord, canonical_serialize

_TOKEN_RE = re.compile(r"\w+")

# Normalized edit distance above which no catalog entry is claimed.
_MAX_PRODUCT_DISTANCE = 0.34

PROMPT_INSTRUCTION = (
    "You are a shopping cart assistant. Convert the user's request into a JSON "
    'object with exactly three keys: "action" (either "add" or "remove"), '
    '"product" (the canonical product name), and "quantity" (a positive '
    "integer). Respond with the JSON object only."
)


class BackendFailure(Exception):
    """Base for everything that can go wrong while obtaining a completion."""


class Timeout(BackendFailure):
    pass


class TransportError(BackendFailure):
    pass


class NonZeroExit(BackendFailure):
    pass


class MalformedResponse(BackendFailure):
    pass


class NoActionFound(BackendFailure):
    """Oracle could not identify an add/remove verb."""


class NoProductFound(BackendFailure):
    """Oracle could not match any catalog entry."""


class InsufficientShots(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    """How to reach one model variant."""

    kind: str  # "http" | "subprocess" | "oracle"
    endpoint_url: str | None = None
    model_name: str | None = None
    command_template: str | None = None  # shell command with a {prompt} placeholder
    temperature: float = 0.0
    max_tokens: int = 64
    timeout: float = 30.0
    retries: int = 0
    api_key_env: str = "OPENAI_API_KEY"
    catalog_path: str | None = None  # oracle only; None = shipped catalog

    def validate(self) -> None:
        if self.kind not in ("http", "subprocess", "oracle"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint_url and self.model_name):
            raise ValueError("http backend requires endpoint_url and model_name")
        if self.kind == "subprocess":
            if not self.command_template or "{prompt}" not in self.command_template:
                raise ValueError("subprocess backend requires a command_template with {prompt}")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class CompletionResult:
    """One backend response with timing and (possibly estimated) token counts."""

    text: str
    prompt_tokens: int | None
    completion_tokens: int | None
    token_count_exact: bool
    first_byte_latency: float
    total_latency: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.first_byte_latency <= self.total_latency:
            raise ValueError("latencies must satisfy 0 <= first_byte <= total")


def count_tokens_fallback(text: str) -> int:
    """Whitespace token count, used when the backend reports no usage."""
    return len(text.split())


# --------------------------------------------------------------------------
# few-shot prompting
# --------------------------------------------------------------------------

def build_fewshot_prompt(shots: list[Example], query: str, k: int, seed: int = 0) -> str:
    """Instruction + k demonstrations + the query as the final block.

    Demonstration selection is deterministic given the seed and balanced
    across (language, action) groups as far as k allows.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if len(shots) < k:
        raise InsufficientShots(f"need {k} shots, have {len(shots)}")

    chosen: list[Example] = []
    if k:
        groups: dict[tuple[str, str], list[Example]] = {}
        for ex in shots:
            groups.setdefault((ex.language, ex.output.action.value), []).append(ex)
        rng = random.Random(seed)
        queues = []
        for key in sorted(groups):
            bucket = list(groups[key])
            rng.shuffle(bucket)
            queues.append(bucket)
        while len(chosen) < k:
            for bucket in queues:
                if bucket and len(chosen) < k:
                    chosen.append(bucket.pop())

    blocks = [PROMPT_INSTRUCTION, ""]
    for ex in chosen:
        blocks.append(f"Input: {ex.input}")
        blocks.append(f"Output: {canonical_serialize(ex.output)}")
        blocks.append("")
    blocks.append(f"Input: {query}")
    blocks.append("Output:")
    return "\n".join(blocks)


def extract_query(prompt: str) -> str:
    """Pull the final query block out of a few-shot prompt (whole text if bare)."""
    idx = prompt.rfind("Input:")
    if idx == -1:
        return prompt.strip()
    segment = prompt[idx + len("Input:"):]
    end = segment.find("\nOutput:")
    if end != -1:
        segment = segment[:end]
    return segment.strip()


# --------------------------------------------------------------------------
# oracle solver
# --------------------------------------------------------------------------

def _edit_distance(a: str, b: str) -> int:
    """Damerau-Levenshtein distance (adjacent transposition counts as one edit)."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return la or lb
    prev2: list[int] | None = None
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                cur[j] = min(cur[j], prev2[j - 2] + 1)
        prev2, prev = prev, cur
    return prev[lb]


def _fuzzy_cap(token: str, verb: str) -> int:
    # Short words get a tighter budget so e.g. "me" never claims "mete".
    return 1 if min(len(token), len(verb)) <= 4 else 2


class OracleSolver:
    """Deterministic rule-based intent extractor over a fixed catalog."""

    def __init__(self, catalog: tuple[CatalogEntry, ...], lexicons: dict):
        self.catalog = catalog
        self.verbs: list[tuple[str, Action]] = []
        for language_verbs in lexicons["add_verbs"].values():
            self.verbs.extend((v.lower(), Action.ADD) for v in language_verbs)
        for language_verbs in lexicons["remove_verbs"].values():
            self.verbs.extend((v.lower(), Action.REMOVE) for v in language_verbs)
        self.verb_index = {verb: action for verb, action in self.verbs}

        # phrase -> value, all languages merged; compounds keep single spaces
        self.number_words: dict[str, int] = {}
        for table in lexicons["number_words"].values():
            for value, phrase in table.items():
                self.number_words[phrase.lower()] = int(value)
        self.max_number_tokens = max(
            (len(p.split()) for p in self.number_words), default=1
        )

        # exact lookup: normalized form -> (catalog index, form); fuzzy list keeps all
        self.exact_forms: dict[str, tuple[int, str]] = {}
        self.all_forms: list[tuple[int, str, list[str]]] = []
        for idx, entry in enumerate(catalog):
            for forms in entry.surface_forms.values():
                for form in forms.values():
                    normalized = " ".join(_TOKEN_RE.findall(form.lower()))
                    if normalized and normalized not in self.exact_forms:
                        self.exact_forms[normalized] = (idx, normalized)
                    self.all_forms.append((idx, normalized, normalized.split()))
        self.max_form_tokens = max((len(t) for _, _, t in self.all_forms), default=1)

    def parse(self, utterance: str) -> IntentRecord:
        tokens = [t.lower() for t in _TOKEN_RE.findall(utterance)]
        action = self._find_action(tokens)
        entry = self._find_product(tokens)
        quantity = self._find_quantity(tokens)
        return IntentRecord(action, entry.canonical_name, quantity)

    def _find_action(self, tokens: list[str]) -> Action:
        for token in tokens:
            hit = self.verb_index.get(token)
            if hit is not None:
                return hit
        # fuzzy rescue for typos, earliest token wins, then smallest distance
        best: tuple[int, int, int] | None = None
        best_action: Action | None = None
        for pos, token in enumerate(tokens):
            if not token.isalpha():
                continue
            for verb, action in self.verbs:
                cap = _fuzzy_cap(token, verb)
                if abs(len(token) - len(verb)) > cap:
                    continue
                dist = _edit_distance(token, verb)
                if dist > cap:
                    continue
                key = (pos, dist, 0 if action is Action.ADD else 1)
                if best is None or key < best:
                    best, best_action = key, action
            if best is not None and best[0] == pos:
                break  # no later token can beat an earlier hit
        if best_action is None:
            raise NoActionFound("no add/remove verb recognized")
        return best_action

    def _find_product(self, tokens: list[str]) -> CatalogEntry:
        candidates: list[tuple[int, str]] = []
        for size in range(min(self.max_form_tokens, len(tokens)), 0, -1):
            for start in range(len(tokens) - size + 1):
                window = " ".join(tokens[start:start + size])
                hit = self.exact_forms.get(window)
                if hit is not None:
                    candidates.append(hit)
        if candidates:
            idx, _ = min(candidates, key=lambda c: (-len(c[1]), c[0]))
            return self.catalog[idx]

        # fuzzy: normalized edit distance, ties to the longest form then catalog order
        best_key: tuple[float, int, int] | None = None
        best_idx: int | None = None
        for idx, form, form_tokens in self.all_forms:
            size = len(form_tokens)
            if size > len(tokens):
                continue
            for start in range(len(tokens) - size + 1):
                window = " ".join(tokens[start:start + size])
                longest = max(len(window), len(form))
                if abs(len(window) - len(form)) > _MAX_PRODUCT_DISTANCE * longest:
                    continue
                dist = _edit_distance(window, form) / longest
                if dist > _MAX_PRODUCT_DISTANCE:
                    continue
                key = (dist, -len(form), idx)
                if best_key is None or key < best_key:
                    best_key, best_idx = key, idx
        if best_idx is None:
            raise NoProductFound("no catalog entry matched")
        return self.catalog[best_idx]

    def _find_quantity(self, tokens: list[str]) -> int:
        for token in tokens:
            if token.isdigit() and int(token) >= 1:
                return int(token)
        limit = min(self.max_number_tokens, len(tokens))
        for start in range(len(tokens)):
            for size in range(limit, 0, -1):
                if start + size > len(tokens):
                    continue
                value = self.number_words.get(" ".join(tokens[start:start + size]))
                if value is not None:
                    return value
        return 1


@lru_cache(maxsize=8)
def _default_solver(catalog_path: str | None) -> OracleSolver:
    catalog = load_catalog(catalog_path) if catalog_path else default_catalog()
    return OracleSolver(catalog, assets.default_lexicons())


def oracle_parse(
    utterance: str,
    catalog: tuple[CatalogEntry, ...] | None = None,
    lexicons: dict | None = None,
) -> IntentRecord:
    """Rule-based ground-truth extraction; defaults to the shipped catalog/lexicons."""
    if catalog is None and lexicons is None:
        return _default_solver(None).parse(utterance)
    solver = OracleSolver(
        catalog if catalog is not None else default_catalog(),
        lexicons if lexicons is not None else assets.default_lexicons(),
    )
    return solver.parse(utterance)


# --------------------------------------------------------------------------
# completion
# --------------------------------------------------------------------------

def complete(config: BackendConfig, prompt: str) -> CompletionResult:
    """Obtain one completion, retrying failures up to config.retries times."""
    config.validate()
    last: BackendFailure | None = None
    for _ in range(config.retries + 1):
        try:
            return _complete_once(config, prompt)
        except BackendFailure as exc:
            last = exc
    assert last is not None
    raise last


def _complete_once(config: BackendConfig, prompt: str) -> CompletionResult:
    if config.kind == "oracle":
        return _complete_oracle(config, prompt)
    if config.kind == "subprocess":
        return _complete_subprocess(config, prompt)
    return _complete_http(config, prompt)


def _complete_oracle(config: BackendConfig, prompt: str) -> CompletionResult:
    start = time.perf_counter()
    record = _default_solver(config.catalog_path).parse(extract_query(prompt))
    text = canonical_serialize(record)
    elapsed = time.perf_counter() - start
    return CompletionResult(
        text=text,
        prompt_tokens=None,
        completion_tokens=count_tokens_fallback(text),
        token_count_exact=False,
        first_byte_latency=elapsed,
        total_latency=elapsed,
    )


def _complete_subprocess(config: BackendConfig, prompt: str) -> CompletionResult:
    command = config.command_template.replace("{prompt}", shlex.quote(prompt))
    start = time.perf_counter()
    try:
        proc = subprocess.run(
            command, shell=True, capture_output=True, timeout=config.timeout
        )
    except subprocess.TimeoutExpired as exc:
        raise Timeout(f"command exceeded {config.timeout}s") from exc
    elapsed = time.perf_counter() - start
    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        raise NonZeroExit(f"exit {proc.returncode}: {stderr[:200]}")
    text = proc.stdout.decode("utf-8", errors="replace")
    return CompletionResult(
        text=text,
        prompt_tokens=None,
        completion_tokens=count_tokens_fallback(text),
        token_count_exact=False,
        first_byte_latency=elapsed,
        total_latency=elapsed,
    )


def _complete_http(config: BackendConfig, prompt: str) -> CompletionResult:
    url = config.endpoint_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(config.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }

    start = time.perf_counter()
    try:
        response = requests.post(
            url, json=body, headers=headers, timeout=config.timeout, stream=True
        )
        first_byte = time.perf_counter() - start
        raw = response.content  # drains the stream
    except requests.Timeout as exc:
        raise Timeout(f"no response within {config.timeout}s") from exc
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    total = time.perf_counter() - start

    if response.status_code != 200:
        raise TransportError(f"HTTP {response.status_code}: {raw[:200]!r}")
    try:
        data = response.json()
        text = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected response shape: {exc}") from exc
    if not isinstance(text, str):
        raise MalformedResponse("message content is not text")

    usage = data.get("usage") or {}
    completion_tokens = usage.get("completion_tokens")
    prompt_tokens = usage.get("prompt_tokens")
    exact = isinstance(completion_tokens, int)
    if not exact:
        completion_tokens = count_tokens_fallback(text)
    return CompletionResult(
        text=text,
        prompt_tokens=prompt_tokens if isinstance(prompt_tokens, int) else None,
        completion_tokens=completion_tokens,
        token_count_exact=exact,
        first_byte_latency=first_byte,
        total_latency=total,
    )
