"""Domain types for the four external model capabilities.

Everything downstream (orchestrator, evaluator, guidance, engine) talks to
backends through the four small interfaces at the bottom of this module, so
HTTP adapters and deterministic mocks are interchangeable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from ..errors import DimensionMismatch
from ..pngio import read_png_size

DEFAULT_GUIDANCE_SCALE = 4.0


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"


Part = TextPart | ImagePart


@dataclass(frozen=True)
class ChatMessage:
    """One chat turn; image parts are only permitted in user messages."""

    role: str  # system | user | assistant
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role: {self.role!r}")
        if not self.parts:
            raise ValueError("message must have at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only permitted in user messages")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role=role, parts=(TextPart(text),))

    def text_content(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 4096
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request must contain at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def text_content(self) -> str:
        """All text parts of the request, joined; used by mocks for routing."""
        return "\n".join(m.text_content() for m in self.messages)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if len(self.values) != self.dim:
            raise DimensionMismatch(
                f"vector has {len(self.values)} values, declared dim {self.dim}"
            )

    @classmethod
    def normalized(cls, values: Sequence[float]) -> "EmbeddingVector":
        norm = math.sqrt(sum(v * v for v in values))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(values=tuple(v / norm for v in values), dim=len(values))

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


@dataclass(frozen=True)
class GenerationParams:
    width: int = 1024
    height: int = 1024
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE

    def __post_init__(self) -> None:
        if self.guidance_scale <= 0:
            raise ValueError("guidance_scale must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class ImageArtifact:
    """A generated or edited image plus full provenance.

    parent is absent iff the artifact came from initial generation; chained
    edits form a parent chain.
    """

    data: bytes
    width: int
    height: int
    seed: int
    positive_prompt: str
    negative_prompt: str
    guidance_scale: float
    parent: "ImageArtifact | None" = None

    def __post_init__(self) -> None:
        w, h = read_png_size(self.data)
        if (w, h) != (self.width, self.height):
            raise ValueError(
                f"PNG is {w}x{h} but artifact declares {self.width}x{self.height}"
            )

    def chain_length(self) -> int:
        """Number of edits between this artifact and its root generation."""
        n, cur = 0, self.parent
        while cur is not None:
            n += 1
            cur = cur.parent
        return n


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class EmbedBackend(Protocol):
    def embed(self, text: str) -> EmbeddingVector: ...


class ImageGenBackend(Protocol):
    def generate(
        self, pos: str, neg: str, seed: int, cfg: GenerationParams
    ) -> ImageArtifact: ...


class ImageEditBackend(Protocol):
    def edit(
        self,
        base: ImageArtifact,
        pos: str,
        neg: str,
        seed: int,
        cfg: GenerationParams,
    ) -> ImageArtifact: ...


@dataclass
class BackendSet:
    """The four capabilities a workflow needs; all must be present to run."""

    chat: ChatBackend
    embed: EmbedBackend
    gen: ImageGenBackend
    edit: ImageEditBackend

    gen_model_name: str = "image-gen"
    edit_model_name: str = "image-edit"

    def __post_init__(self) -> None:
        for name in ("chat", "embed", "gen", "edit"):
            if getattr(self, name) is None:
                raise ValueError(f"backend set is missing the {name} capability")


def chat_complete(backend: ChatBackend, req: ChatRequest) -> str:
    """Validate and dispatch a plain chat completion."""
    return backend.complete(req)


def embed_text(backend: EmbedBackend, text: str) -> EmbeddingVector:
    """Embed text and L2-normalize at the boundary.

    Normalization here makes the store's inner-product ranking equal cosine
    ranking regardless of what the endpoint returns.
    """
    if not text:
        raise ValueError("text must be non-empty")
    vec = backend.embed(text)
    return EmbeddingVector.normalized(vec.values)


def generate_image(
    backend: ImageGenBackend, pos: str, neg: str, seed: int, cfg: GenerationParams
) -> ImageArtifact:
    if not pos:
        raise ValueError("positive prompt must be non-empty")
    return backend.generate(pos, neg, seed, cfg)


def edit_image(
    backend: ImageEditBackend,
    base: ImageArtifact,
    pos: str,
    neg: str,
    seed: int,
    cfg: GenerationParams,
) -> ImageArtifact:
    if base is None:
        from ..errors import MissingBaseImage

        raise MissingBaseImage("edit requires a base image")
    if not pos:
        raise ValueError("edit instruction must be non-empty")
    return backend.edit(base, pos, neg, seed, cfg)
