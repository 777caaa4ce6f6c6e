"""Storage adapters behind a common Tap/Sink interface.

Importing this package registers the ``localfs``, ``mem`` and ``odsp``
schemes.
"""
from .base import (Capabilities, Credential, DataSlice, ResourceURI, Session, Sink, Stat, Tap,
                   TranslationPlan, adapter_for, canonical_path, chunked, connect, copy, crc32c,
                   list_tree, schemes, sink, stripes, tap, translate_capabilities)
from . import localfs, mem, odsp  # noqa: F401  (registration)
from .mem import MemStore
from .odsp import OdspServer, OdspTrace

list = list_tree  # noqa: A001

__all__ = [
    "Capabilities", "Credential", "DataSlice", "ResourceURI", "Session", "Sink", "Stat", "Tap",
    "TranslationPlan", "adapter_for", "canonical_path", "chunked", "connect", "copy", "crc32c",
    "list", "list_tree", "schemes", "sink", "stripes", "tap", "translate_capabilities",
    "MemStore", "OdspServer", "OdspTrace",
]
