from .client import NodeClient
from .node import NodeHealth, NodeStore, crc32_of, escape_lfn, fragment_path
from .ratelimit import TokenBucket
from .server import NodeServer

__all__ = [
    "NodeClient",
    "NodeHealth",
    "NodeServer",
    "NodeStore",
    "TokenBucket",
    "crc32_of",
    "escape_lfn",
    "fragment_path",
]
