"""Shared helpers for building small in-memory scenarios."""

from __future__ import annotations

import copy

import pytest

from bsnsim.scenario import Scenario, _build


def make_scenario(overrides: dict) -> Scenario:
    """Build a Scenario from a raw dict with sensible small-network defaults."""
    base = {
        "name": "test",
        "horizon_s": 10.0,
        "replications": 1,
        "seed_base": 1,
        "channels": {
            "ism": {"band": "ISM_2_4", "phy": 0, "data_rate_bps": 250000},
        },
        "channel_model": {
            "mode": "geometric",
            "pathloss": {"ism": {"pl_d0": 40.0, "d0": 0.1, "exponent": 2.0,
                                 "shadow_sigma": 0.0}},
        },
        "nodes": [
            {"id": "bnc", "site": "Waist", "kind": "bnc", "pos": [0.5, 0.5],
             "channel": "ism", "initial_j": None},
            {"id": "n1", "site": "Chest", "kind": "onbody", "pos": [0.5, 0.8],
             "channel": "ism"},
        ],
        "bnc": "bnc",
        "traffic": [],
        "protocols": {},
    }
    merged = copy.deepcopy(base)
    merged.update(copy.deepcopy(overrides))
    return _build(merged)


@pytest.fixture
def two_node_scenario():
    return make_scenario({})
