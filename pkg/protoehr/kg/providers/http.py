"""OpenAI-compatible HTTP provider for the KG construction roles.

Talks to any server exposing ``/chat/completions`` and ``/embeddings``
(OpenAI, OpenRouter, vLLM, llama.cpp server, ...). Retryable failures
(HTTP 429, 5xx, transport errors, malformed JSON answers) are retried with
exponential backoff; authentication and other client errors propagate.

Examples:
    >>> from protoehr.config import get_settings
    >>> provider = ChatCompletionsProvider.from_settings(get_settings(".env.provider"))
    >>> provider.suggest("Type 2 diabetes", "Metformin")
    'is treated with'

Tests:
    - tests/unit/test_providers.py::TestChatCompletionsProvider
"""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from typing import Any, TypeVar

import httpx
import numpy as np
from pydantic import BaseModel, Field, ValidationError
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from protoehr.config import Settings
from protoehr.core.errors import (
    AuthenticationError,
    ConfigError,
    ProviderError,
    RateLimitError,
)
from protoehr.kg.providers.base import (
    ContradictionSplitter,
    RelationSuggester,
    TextEmbedder,
    TripletJudge,
)
from protoehr.prompts import judge as judge_prompts
from protoehr.prompts import splitter as splitter_prompts
from protoehr.prompts import suggester as suggester_prompts

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BaseModel)

KIND_LABELS = {"D": "Diagnosis", "P": "Procedure", "M": "Medication"}


class RelationAnswer(BaseModel):
    relation: str | None = Field(default=None, description="Relation phrase or null")


class JudgeAnswer(BaseModel):
    valid: bool


class SplitAnswer(BaseModel):
    groups: list[list[str]]


def parse_retry_after(value: str | None, now: datetime | None = None) -> int | None:
    """Seconds to wait from a Retry-After header, in delta-seconds or HTTP-date form.

    Unparseable values give None; dates in the past give 0.
    """
    if value is None or not value.strip():
        return None
    value = value.strip()
    if value.isdigit():
        return int(value)
    try:
        when = parsedate_to_datetime(value)
    except (TypeError, ValueError):
        logger.warning(f"Ignoring malformed Retry-After header: {value!r}")
        return None
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    now = now or datetime.now(timezone.utc)
    return max(0, int((when - now).total_seconds()))


def _is_retryable(exc: BaseException) -> bool:
    return isinstance(exc, ProviderError) and exc.retryable


class ChatCompletionsProvider(RelationSuggester, TripletJudge, TextEmbedder, ContradictionSplitter):
    """One client serving all four pipeline roles.

    Attributes:
        base_url: API base URL
        model: Chat model for suggestion, judging and splitting
        embedding_model: Embedding model for relation clustering
        dim: Embedding width, learned from the first response
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None,
        model: str,
        embedding_model: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
        kinds: dict[str, str] | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        """Initialize the provider.

        Args:
            base_url: API base URL, e.g. ``https://openrouter.ai/api/v1``.
            api_key: Bearer token (None for local servers).
            model: Chat model name.
            embedding_model: Embedding model name.
            timeout: Request timeout in seconds.
            retries: Attempts per request for retryable failures.
            backoff: Base of the exponential wait between attempts, in seconds.
            kinds: Code name -> kind letter, used to label concepts in prompts.
            transport: Optional httpx transport (tests use ``httpx.MockTransport``).
        """
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.embedding_model = embedding_model
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.kinds = kinds or {}
        self.dim = 0
        self._transport = transport
        self._client: httpx.Client | None = None

    @classmethod
    def from_settings(
        cls, settings: Settings, kinds: dict[str, str] | None = None
    ) -> ChatCompletionsProvider:
        """Build from settings.

        Raises:
            ConfigError: If the settings are in offline mode.
        """
        if settings.OFFLINE:
            raise ConfigError("provider requested but PROTOEHR_OFFLINE is true")
        return cls(
            base_url=settings.PROVIDER_URL,
            api_key=settings.PROVIDER_KEY,
            model=settings.PROVIDER_MODEL,
            embedding_model=settings.PROVIDER_EMBEDDING_MODEL,
            timeout=settings.PROVIDER_TIMEOUT,
            retries=settings.PROVIDER_RETRIES,
            kinds=kinds,
        )

    @property
    def client(self) -> httpx.Client:
        """Get httpx client (lazy initialization)."""
        if self._client is None or self._client.is_closed:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            self._client = httpx.Client(
                base_url=self.base_url,
                timeout=self.timeout,
                headers=headers,
                transport=self._transport,
            )
        return self._client

    def close(self) -> None:
        """Close the HTTP client."""
        if self._client is not None and not self._client.is_closed:
            self._client.close()
            self._client = None

    def __enter__(self) -> ChatCompletionsProvider:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _handle_error(self, response: httpx.Response) -> None:
        """Convert HTTP errors to provider errors.

        Raises:
            AuthenticationError: For 401 errors.
            RateLimitError: For 429 errors.
            ProviderError: For other errors (retryable when status >= 500).
        """
        if response.status_code == 401:
            raise AuthenticationError()
        if response.status_code == 429:
            retry_after = parse_retry_after(response.headers.get("Retry-After"))
            raise RateLimitError(retry_after=retry_after)
        try:
            message = response.json().get("error", {}).get("message", response.text)
        except (ValueError, AttributeError):
            message = response.text
        raise ProviderError(
            message=message,
            status_code=response.status_code,
            retryable=response.status_code >= 500,
        )

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            response = self.client.post(path, json=payload)
        except httpx.HTTPError as e:
            logger.error(f"Provider HTTP error: {e}")
            raise ProviderError(message=str(e), retryable=True) from e
        if response.status_code != 200:
            self._handle_error(response)
        data: dict[str, Any] = response.json()
        return data

    def _with_retry(self, fn: Any, *args: Any) -> Any:
        retrying = Retrying(
            stop=stop_after_attempt(self.retries),
            wait=wait_exponential(multiplier=self.backoff, max=30),
            retry=retry_if_exception(_is_retryable),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        return retrying(fn, *args)

    def _parse(self, raw: str, response_model: type[T]) -> T:
        try:
            return response_model.model_validate_json(raw)
        except ValidationError as parse_error:
            # models sometimes wrap the JSON in prose or code fences
            match = re.search(r"\{[\s\S]*\}", raw)
            if match:
                try:
                    return response_model.model_validate_json(match.group())
                except ValidationError as e2:
                    logger.warning(f"JSON extraction failed: {e2}")
            raise ProviderError(
                message=f"Model did not return valid JSON: {raw[:200]}",
                retryable=True,
            ) from parse_error

    def _chat_once(self, system: str, prompt: str, response_model: type[T]) -> T:
        payload = {
            "model": self.model,
            "temperature": 0.0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
        }
        data = self._post("/chat/completions", payload)
        try:
            raw = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError(message="Malformed chat completion response", retryable=True) from e
        return self._parse(raw, response_model)

    def chat(self, system: str, prompt: str, response_model: type[T]) -> T:
        """Structured chat call with retries."""
        result: T = self._with_retry(self._chat_once, system, prompt, response_model)
        return result

    # -- roles ---------------------------------------------------------------

    def suggest(self, head_name: str, tail_name: str) -> str | None:
        prompt = suggester_prompts.get_prompt(
            head_name,
            KIND_LABELS.get(self.kinds.get(head_name, ""), "Medical code"),
            tail_name,
            KIND_LABELS.get(self.kinds.get(tail_name, ""), "Medical code"),
        )
        answer = self.chat(suggester_prompts.SYSTEM_PROMPT, prompt, RelationAnswer)
        if answer.relation is None or not answer.relation.strip():
            return None
        return answer.relation.strip()

    def judge(self, text: str) -> bool:
        answer = self.chat(judge_prompts.SYSTEM_PROMPT, judge_prompts.get_prompt(text), JudgeAnswer)
        return answer.valid

    def split(self, relations: Sequence[str]) -> list[list[str]]:
        if len(relations) < 2:
            return [list(relations)]
        answer = self.chat(
            splitter_prompts.SYSTEM_PROMPT,
            splitter_prompts.get_prompt(list(relations)),
            SplitAnswer,
        )
        # keep only known phrases, each once; anything the model dropped stays together
        wanted = list(dict.fromkeys(relations))
        seen: set[str] = set()
        groups: list[list[str]] = []
        for group in answer.groups:
            members = [r for r in dict.fromkeys(group) if r in wanted and r not in seen]
            seen.update(members)
            if members:
                groups.append(members)
        leftover = [r for r in wanted if r not in seen]
        if leftover:
            groups.append(leftover)
        return groups

    def _embed_once(self, texts: list[str]) -> np.ndarray:
        data = self._post("/embeddings", {"model": self.embedding_model, "input": texts})
        try:
            rows = sorted(data["data"], key=lambda item: item["index"])
            vectors = np.array([row["embedding"] for row in rows], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ProviderError(message="Malformed embeddings response", retryable=True) from e
        if vectors.shape[0] != len(texts):
            raise ProviderError(message="Embeddings response has the wrong length", retryable=True)
        return vectors

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        vectors: np.ndarray = self._with_retry(self._embed_once, list(texts))
        self.dim = vectors.shape[1]
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return vectors / norms

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]
