import pytest

from twindesk.dtconfig import ConfigDoc, CompositionSpec, FTPair, InfraSpec
from twindesk.registry import AssetKind, AssetRegistry, Port


@pytest.fixture
def registry(tmp_path):
    return AssetRegistry(tmp_path / "store")


def seed_basic_assets(reg: AssetRegistry, owner: str = "alice") -> dict[str, str]:
    """A small catalog with one asset of each kind, generously ported."""
    ports_io = [Port("out", "out"), Port("in", "in")]
    ids = {}
    ids["data"] = reg.register_asset(owner, AssetKind.DATA, "telemetry", ports=ports_io).id
    ids["model"] = reg.register_asset(owner, AssetKind.MODEL, "thermal", ports=ports_io).id
    ids["function"] = reg.register_asset(owner, AssetKind.FUNCTION, "estimator", ports=ports_io).id
    ids["tool"] = reg.register_asset(owner, AssetKind.TOOL, "simulator", ports=ports_io,
                                     metadata={"executable": "builtin:noop"}).id
    ids["ready"] = reg.register_asset(owner, AssetKind.READY_DT, "prebuilt", ports=ports_io).id
    return ids


def leaf_doc(name: str = "leaf", function: str = "f1", tool: str = "t1") -> ConfigDoc:
    return ConfigDoc(
        name=name,
        c_a=CompositionSpec(ft_pairs=[FTPair(function=function, tool=tool)]),
        c_i=InfraSpec(workspace_flavour="IsolatedProcess", cpu_units=1,
                      memory_mb=64, tick_ms=100),
    )
