from .base import Backend, BackendRequest, BackendResponse, EndpointConfig, Role, validate_response
from .http import API_KEY_ENV, HttpBackend, PERSONAS
from .synthetic import (
    DEFAULT_DIM,
    DEFAULT_TRAVERSAL_ALPHA,
    HashEmbedder,
    SyntheticBackend,
    soft_path_embedding,
    synthetic_generate_viewpoint,
    tokenize,
)

__all__ = [
    "API_KEY_ENV",
    "Backend",
    "BackendRequest",
    "BackendResponse",
    "DEFAULT_DIM",
    "DEFAULT_TRAVERSAL_ALPHA",
    "EndpointConfig",
    "HashEmbedder",
    "HttpBackend",
    "PERSONAS",
    "Role",
    "SyntheticBackend",
    "soft_path_embedding",
    "synthetic_generate_viewpoint",
    "tokenize",
    "validate_response",
]
