"""In-process catalog + storage nodes on loopback, for tests and desk-scale runs."""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path
from typing import Sequence

from .catalog import Catalog, CatalogServer
from .storage import NodeClient, NodeServer, NodeStore


class EmbeddedCluster:
    def __init__(
        self,
        n_nodes: int = 0,
        rates: Sequence[int] | int = 0,
        root: str | Path | None = None,
        *,
        load_flags: dict[str, Sequence[str]] | None = None,
        catalog_fsync: bool = False,
        node_prefix: str = "n",
    ):
        self._tmp = None
        if root is None:
            self._tmp = tempfile.mkdtemp(prefix="gdfarm-")
            root = self._tmp
        self.root = Path(root)
        self.catalog = Catalog(self.root / "catalog", fsync=catalog_fsync)
        self.catalog_server = CatalogServer(self.catalog)
        self.catalog_server.start()
        self.nodes: dict[str, NodeServer] = {}
        self._prefix = node_prefix
        load_flags = load_flags or {}
        if isinstance(rates, int):
            rates = [rates] * n_nodes
        if len(rates) != n_nodes:
            raise ValueError(f"{len(rates)} rates for {n_nodes} nodes")
        for i in range(n_nodes):
            node_id = f"{node_prefix}{i:02d}"
            self.add_node(node_id, rates[i], load_flags.get(node_id, ()))

    @property
    def catalog_addr(self) -> str:
        return self.catalog_server.address

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def add_node(self, node_id: str, rate_bps: int = 0, load_flags: Sequence[str] = ()) -> NodeServer:
        store = NodeStore(self.root / "nodes" / node_id, node_id, rate_bps, load_flags)
        server = NodeServer(store, catalog=self.catalog)
        server.start()
        self.nodes[node_id] = server
        return server

    def store(self, node_id: str) -> NodeStore:
        return self.nodes[node_id].store

    def client(self, node_id: str) -> NodeClient:
        return NodeClient(self.nodes[node_id].address, node_id)

    def stop_node(self, node_id: str) -> None:
        self.nodes.pop(node_id).stop(mark_down=True)

    def close(self) -> None:
        for server in list(self.nodes.values()):
            server.stop()
        self.nodes.clear()
        self.catalog_server.stop()
        self.catalog.close()
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
