from .model import FragmentMeta, LogicalFileEntry, NodeInfo, NodeStatus, ReplicaLocation
from .service import CatalogClient, CatalogServer, format_addr, parse_addr
from .store import Catalog, glob_to_regex, recover

__all__ = [
    "Catalog",
    "CatalogClient",
    "CatalogServer",
    "FragmentMeta",
    "LogicalFileEntry",
    "NodeInfo",
    "NodeStatus",
    "ReplicaLocation",
    "format_addr",
    "glob_to_regex",
    "parse_addr",
    "recover",
]
