from .types import (
    BackendSet,
    ChatBackend,
    ChatMessage,
    ChatRequest,
    EmbedBackend,
    EmbeddingVector,
    GenerationParams,
    ImageArtifact,
    ImageEditBackend,
    ImageGenBackend,
    ImagePart,
    TextPart,
    chat_complete,
    edit_image,
    embed_text,
    generate_image,
)
from .http import (
    HttpChatBackend,
    HttpEmbedBackend,
    HttpImageBackend,
    backends_from_env,
    post_json_with_retry,
)
from .mock import (
    DeterministicChatBackend,
    HashEmbedBackend,
    MockImageBackend,
    ScriptedChatBackend,
    mock_backend_set,
)
from .schemas import SCHEMAS, schema_for
from .structured import chat_complete_structured, extract_json, validate_against

__all__ = [
    "BackendSet",
    "ChatBackend",
    "ChatMessage",
    "ChatRequest",
    "DeterministicChatBackend",
    "EmbedBackend",
    "EmbeddingVector",
    "GenerationParams",
    "HashEmbedBackend",
    "HttpChatBackend",
    "HttpEmbedBackend",
    "HttpImageBackend",
    "ImageArtifact",
    "ImageEditBackend",
    "ImageGenBackend",
    "ImagePart",
    "MockImageBackend",
    "SCHEMAS",
    "ScriptedChatBackend",
    "TextPart",
    "backends_from_env",
    "chat_complete",
    "chat_complete_structured",
    "edit_image",
    "embed_text",
    "extract_json",
    "generate_image",
    "mock_backend_set",
    "post_json_with_retry",
    "schema_for",
    "validate_against",
]
