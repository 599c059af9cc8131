"""HTTP adapters for the four model capabilities.

Chat/vision and embeddings speak the OpenAI-compatible JSON POST contract;
image generation/edit use a plain JSON POST (prompt, negative_prompt, seed,
guidance_scale, size, optional base64 base image). Transient failures
(connection errors, timeouts, HTTP 429/5xx) retry with exponential backoff;
other non-2xx statuses and malformed bodies raise ProtocolError immediately.
"""

from __future__ import annotations

import base64
import os
import time
from typing import Any, Callable

import requests

from ..errors import (
    DecodeError,
    EmptyCompletion,
    GenerationRejected,
    ProtocolError,
    TransportError,
)
from ..pngio import read_png_size
from .types import (
    BackendSet,
    ChatRequest,
    EmbeddingVector,
    GenerationParams,
    ImageArtifact,
    ImagePart,
    TextPart,
)

MAX_RETRIES = 3
_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}

ENV_CHAT_URL = "SIDIFF_CHAT_URL"
ENV_EMBED_URL = "SIDIFF_EMBED_URL"
ENV_GEN_URL = "SIDIFF_GEN_URL"
ENV_EDIT_URL = "SIDIFF_EDIT_URL"
ENV_API_KEY = "SIDIFF_API_KEY"


def post_json_with_retry(
    url: str,
    payload: dict[str, Any],
    api_key: str | None = None,
    timeout: float = 120.0,
    max_retries: int = MAX_RETRIES,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, Any]:
    """POST JSON and return the decoded JSON body.

    Retries transient failures up to `max_retries` times with exponential
    backoff starting at `backoff` seconds.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_exc: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_exc = TransportError(f"request to {url} failed: {exc}")
        else:
            if resp.status_code in _RETRYABLE_STATUSES:
                last_exc = TransportError(f"{url} returned HTTP {resp.status_code}")
            elif not 200 <= resp.status_code < 300:
                raise ProtocolError(
                    f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            else:
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise ProtocolError(f"{url} returned a non-JSON body: {exc}")
                if not isinstance(body, dict):
                    raise ProtocolError(f"{url} returned a non-object JSON body")
                return body
        if attempt < max_retries:
            sleep(backoff * (2**attempt))
    assert last_exc is not None
    raise last_exc


def _message_to_wire(message) -> dict[str, Any]:
    parts = []
    for part in message.parts:
        if isinstance(part, TextPart):
            parts.append({"type": "text", "text": part.text})
        elif isinstance(part, ImagePart):
            b64 = base64.b64encode(part.data).decode("ascii")
            parts.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:{part.media_type};base64,{b64}"},
                }
            )
    if len(parts) == 1 and parts[0]["type"] == "text":
        return {"role": message.role, "content": parts[0]["text"]}
    return {"role": message.role, "content": parts}


class HttpChatBackend:
    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = MAX_RETRIES,
        backoff: float = 0.5,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def complete(self, req: ChatRequest) -> str:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [_message_to_wire(m) for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        body = post_json_with_retry(
            f"{self.endpoint}/v1/chat/completions",
            payload,
            api_key=self.api_key,
            timeout=self.timeout,
            max_retries=self.max_retries,
            backoff=self.backoff,
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"chat response missing completion text: {exc}")
        if not isinstance(content, str) or not content.strip():
            raise EmptyCompletion("chat endpoint returned empty assistant text")
        return content


class HttpEmbedBackend:
    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = MAX_RETRIES,
        backoff: float = 0.5,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def embed(self, text: str) -> EmbeddingVector:
        body = post_json_with_retry(
            f"{self.endpoint}/v1/embeddings",
            {"model": self.model, "input": text},
            api_key=self.api_key,
            timeout=self.timeout,
            max_retries=self.max_retries,
            backoff=self.backoff,
        )
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"embedding response missing vector: {exc}")
        if not isinstance(values, list) or not values:
            raise ProtocolError("embedding response vector is empty")
        return EmbeddingVector(values=tuple(float(v) for v in values), dim=len(values))


class HttpImageBackend:
    """Client for the /generate and /edit JSON endpoints."""

    def __init__(
        self,
        gen_endpoint: str,
        edit_endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 300.0,
        max_retries: int = MAX_RETRIES,
        backoff: float = 0.5,
    ):
        self.gen_endpoint = gen_endpoint.rstrip("/")
        self.edit_endpoint = (edit_endpoint or gen_endpoint).rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _call(self, url: str, payload: dict[str, Any]) -> tuple[bytes, int, int]:
        body = post_json_with_retry(
            url,
            payload,
            api_key=self.api_key,
            timeout=self.timeout,
            max_retries=self.max_retries,
            backoff=self.backoff,
        )
        if body.get("error"):
            raise GenerationRejected(str(body["error"]))
        try:
            data = base64.b64decode(body["image_b64"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"image response missing image_b64: {exc}")
        try:
            width, height = read_png_size(data)
        except DecodeError:
            raise
        declared_w = int(body.get("width", width))
        declared_h = int(body.get("height", height))
        if (declared_w, declared_h) != (width, height):
            raise DecodeError(
                f"endpoint declared {declared_w}x{declared_h}, payload is {width}x{height}"
            )
        return data, width, height

    def generate(
        self, pos: str, neg: str, seed: int, cfg: GenerationParams
    ) -> ImageArtifact:
        data, width, height = self._call(
            f"{self.gen_endpoint}/generate",
            {
                "prompt": pos,
                "negative_prompt": neg,
                "seed": seed,
                "guidance_scale": cfg.guidance_scale,
                "width": cfg.width,
                "height": cfg.height,
            },
        )
        return ImageArtifact(
            data=data,
            width=width,
            height=height,
            seed=seed,
            positive_prompt=pos,
            negative_prompt=neg,
            guidance_scale=cfg.guidance_scale,
            parent=None,
        )

    def edit(
        self,
        base: ImageArtifact,
        pos: str,
        neg: str,
        seed: int,
        cfg: GenerationParams,
    ) -> ImageArtifact:
        data, width, height = self._call(
            f"{self.edit_endpoint}/edit",
            {
                "prompt": pos,
                "negative_prompt": neg,
                "seed": seed,
                "guidance_scale": cfg.guidance_scale,
                "width": base.width,
                "height": base.height,
                "image": base64.b64encode(base.data).decode("ascii"),
            },
        )
        return ImageArtifact(
            data=data,
            width=width,
            height=height,
            seed=seed,
            positive_prompt=pos,
            negative_prompt=neg,
            guidance_scale=cfg.guidance_scale,
            parent=base,
        )


def backends_from_env(env: dict[str, str] | None = None) -> BackendSet:
    """Build live backends from SIDIFF_* env vars; all four URLs required."""
    env = env if env is not None else dict(os.environ)
    missing = [
        var
        for var in (ENV_CHAT_URL, ENV_EMBED_URL, ENV_GEN_URL, ENV_EDIT_URL)
        if not env.get(var)
    ]
    if missing:
        raise ValueError(f"missing backend endpoint env vars: {', '.join(missing)}")
    api_key = env.get(ENV_API_KEY) or None
    image = HttpImageBackend(
        gen_endpoint=env[ENV_GEN_URL],
        edit_endpoint=env[ENV_EDIT_URL],
        api_key=api_key,
    )
    return BackendSet(
        chat=HttpChatBackend(env[ENV_CHAT_URL], api_key=api_key),
        embed=HttpEmbedBackend(env[ENV_EMBED_URL], api_key=api_key),
        gen=image,
        edit=image,
        gen_model_name="image-gen",
        edit_model_name="image-edit",
    )
