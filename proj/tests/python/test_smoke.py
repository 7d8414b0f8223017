import os
from pathlib import Path

import pytest

import lexinet

FIXTURES = Path(os.environ.get("LEXINET_FIXTURES", Path(__file__).resolve().parents[2] / "fixtures"))


def test_describe_three_agent_network():
    info = lexinet.describe(str(FIXTURES / "appendix_c.json"))
    assert info["links"] == 31
    assert info["agents"] == 3


def test_zero_demand_run_is_empty():
    out = lexinet.run(str(FIXTURES / "zero_demand.json"), "lexi")
    assert out["strategy"] == "lexi"
    assert len(out["served"]) == lexinet.describe(str(FIXTURES / "zero_demand.json"))["steps"]
    assert all(v == 0.0 for v in out["phi1"] + out["served"])


def test_fixed_time_serves_vehicles_monotonically():
    served = lexinet.run(str(FIXTURES / "toy_grid.json"), "fixed")["served"]
    assert served[-1] > 0.0
    assert all(b >= a for a, b in zip(served, served[1:]))


def test_unsupported_strategy_raises():
    with pytest.raises(lexinet.LexinetError, match="unsupported - see docs"):
        lexinet.run(str(FIXTURES / "toy_grid.json"), "strategy2")


def test_missing_file_raises():
    with pytest.raises(lexinet.LexinetError):
        lexinet.describe(str(FIXTURES / "no_such_file.json"))


def test_min_consensus_on_a_path():
    assert lexinet.min_consensus([[1], [0, 2], [1]], [1, 0, 1], 3) == [0, 0, 0]
