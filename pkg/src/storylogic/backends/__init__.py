from .base import (
    Backend,
    BackendError,
    BackendRequest,
    BackendResponse,
    BackendSet,
    Capability,
    ImageRef,
    NO_RETRY,
    ProviderError,
    RetryPolicy,
    TransportError,
    embed_batch,
)
from .config import ConfigError, build_backends, load_config
from .http import HttpBackend
from .mock import MockBackend, RecordingBackend, write_fixture
from .ratelimit import SlidingWindowRateLimiter

__all__ = [
    "Backend",
    "BackendError",
    "BackendRequest",
    "BackendResponse",
    "BackendSet",
    "Capability",
    "ConfigError",
    "HttpBackend",
    "ImageRef",
    "MockBackend",
    "NO_RETRY",
    "ProviderError",
    "RecordingBackend",
    "RetryPolicy",
    "SlidingWindowRateLimiter",
    "TransportError",
    "build_backends",
    "embed_batch",
    "load_config",
    "write_fixture",
]
