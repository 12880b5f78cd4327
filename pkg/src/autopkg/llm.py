"""Chat-completion client for the agent and KGD roles."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import requests

from autopkg.errors import BackendFailure, ImageLimitExceeded

logger = logging.getLogger(__name__)

MAX_IMAGES = 10


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int = 20
    max_new_tokens: int = 6400

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class ChatClient:
    """POSTs OpenAI-style chat-completion requests.

    Transport failures and non-2xx replies are retried ``retries`` times with
    exponential backoff; after that :class:`BackendFailure` is raised.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        params: GenerationParams | None = None,
        timeout: float = 120.0,
        retries: int = 1,
        backoff: float = 1.0,
        post: Callable[..., Any] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.params = params or GenerationParams()
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._post = post or requests.post
        self._sleep = sleep

    @classmethod
    def from_env(cls, model: str | None = None, env: dict[str, str] | None = None, **kw: Any) -> ChatClient:
        env = dict(os.environ if env is None else env)
        endpoint = env.get("LLM_ENDPOINT")
        if not endpoint:
            raise BackendFailure("LLM_ENDPOINT is not set")
        return cls(endpoint, env.get("LLM_MODEL") or model or "default", env.get("LLM_API_KEY"), **kw)

    def build_request(self, prompt: str, images: Sequence[str], params: GenerationParams) -> dict[str, Any]:
        content: list[dict[str, Any]] = [{"type": "text", "text": prompt}]
        content += [{"type": "image_url", "image_url": {"url": ref}} for ref in images]
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "top_k": params.top_k,
            "max_tokens": params.max_new_tokens,
        }

    def chat(
        self, prompt: str, images: Sequence[str] = (), params: GenerationParams | None = None
    ) -> str:
        if len(images) > MAX_IMAGES:
            raise ImageLimitExceeded(f"{len(images)} images given, at most {MAX_IMAGES} allowed")
        body = self.build_request(prompt, images, params or self.params)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                logger.warning("chat attempt %d failed: %s", attempt + 1, exc)
        raise BackendFailure(f"chat request failed after {self.retries + 1} attempts: {last}")
