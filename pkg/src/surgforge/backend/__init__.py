"""Wire protocol, client, deterministic mocks, and conformance checks for
the model services the pipeline depends on."""

from surgforge.backend.protocol import (  # noqa: F401
    PROTOCOL_VERSION,
    Kind,
    BackendRequest,
    BackendResponse,
    parse_message,
    serialize_message,
    validate_request,
    validate_response,
)
from surgforge.backend.client import BackendClient, RetryPolicy, make_endpoint  # noqa: F401
from surgforge.backend.mock import MockBackend, mock_embed  # noqa: F401
