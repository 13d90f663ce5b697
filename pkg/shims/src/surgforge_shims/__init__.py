"""Reference servers for the surgforge backend protocol.

Each shim serves exactly one protocol kind over HTTP or stdio, wrapping
either a local engine (voice-activity transcriber, hashed n-gram or pixel
embedder, rule-based text models) or a remote OpenAI-compatible API. Shims
hold no pipeline logic: voting, propagation, and retention decisions all
stay in the engine, so swapping models can never change curation semantics.
"""

__version__ = "0.1.0"
