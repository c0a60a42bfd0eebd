"""Shared fixtures: the three bundled composite-domain cases."""

import json
from importlib import resources

import pytest

from starelast.forward import BoundaryData
from starelast.geometry import domain_from_json


def load_case(name):
    """(domain, boundary data, body-force spec, raw config) for a fixture."""
    cfg = json.loads(
        (resources.files("starelast") / f"fixtures/{name}.json").read_text())
    domain = domain_from_json(cfg)
    f = BoundaryData.from_json(cfg["problem"]["dirichlet"])
    bf = cfg["problem"].get("body_force")
    if bf is None:
        force_spec = None
    elif bf["kind"] == "constant":
        force_spec = (bf["kind"], tuple(bf["value"]))
    else:
        force_spec = (bf["kind"],)
    return domain, f, force_spec, cfg


@pytest.fixture(scope="session")
def case_notch():
    """Two-subdomain squircle lobes joined across a straight interface."""
    return load_case("example1")


@pytest.fixture(scope="session")
def case_ring():
    """Four-lobe composite ring around a square void."""
    return load_case("example2")


@pytest.fixture(scope="session")
def case_wedges():
    """Four wedge subdomains at the corners of a square void."""
    return load_case("example3")


@pytest.fixture(scope="session", params=["example1", "example2", "example3"])
def any_case(request):
    return load_case(request.param)
