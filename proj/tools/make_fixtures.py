"""Regenerates the bundled scenario fixtures."""
import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

SATURATED = [1500, 1800, 1650, 1500, 1350, 1200]


def even(targets):
    share = round(1.0 / len(targets), 12)
    ratios = {str(t): share for t in targets}
    ratios[str(targets[-1])] = round(1.0 - share * (len(targets) - 1), 12)
    return ratios


def link(lid, src, dst, cap, sat, downstream=None, outflow=None):
    d = {"id": lid, "source": src, "dest": dst, "capacity": cap, "saturation_flow": sat}
    if downstream:
        d["turn_ratios"] = even(downstream)
    if outflow is not None:
        d["dest_outflow_cap"] = outflow
    return d


def three_agent_network():
    pairs = {
        1: ("B2", "J2"), 2: ("J2", "B2"), 3: ("J1", "B1"), 4: ("B1", "J1"), 5: ("J2", "J1"),
        6: ("J2", "J1"), 7: ("J1", "J2"), 8: ("B3", "J2"), 9: ("J2", "B3"), 10: ("J1", "J3"),
        11: ("J1", "J3"), 12: ("J3", "J1"), 13: ("J2", "J4"), 14: ("J2", "J4"), 15: ("J4", "J2"),
        16: ("J3", "B4"), 17: ("B4", "J3"), 18: ("B4", "J3"), 19: ("J4", "J3"), 20: ("J4", "J3"),
        21: ("J3", "J4"), 22: ("J3", "J4"), 23: ("B5", "J4"), 24: ("B5", "J4"), 25: ("J4", "B5"),
        26: ("J3", "B6"), 27: ("B6", "J3"), 28: ("B6", "J3"), 29: ("J4", "B7"), 30: ("B7", "J4"),
        31: ("B7", "J4"),
    }
    downstream = {
        4: [7, 10, 11], 5: [3, 10, 11], 6: [10, 11], 12: [3, 7],
        1: [5, 6, 9, 13, 14], 7: [2, 9, 13, 14], 15: [2, 5, 6, 9], 8: [2, 5, 6, 13, 14],
        10: [16, 26], 11: [21, 22], 28: [12, 21, 22], 27: [16], 18: [21, 22, 26], 17: [12],
        19: [12, 16], 20: [26],
        13: [19, 20, 29], 14: [25], 31: [15, 25], 30: [19, 20], 22: [25, 29], 21: [15],
        23: [15, 19, 20], 24: [29],
    }
    phases = {
        "J1": [[4, 5], [12], [6]],
        "J2": [[1], [7], [15], [8]],
        "J3": [[10, 28], [11, 27], [18, 19], [17, 20]],
        "J4": [[13, 31], [14, 30], [22, 23], [21, 24]],
    }
    junctions = []
    for j in ["J1", "J2", "J3", "J4"]:
        junctions.append({"id": j, "kind": "internal", "lost_time": 4,
                          "phases": [{"id": f"p{i + 1}", "links": ls} for i, ls in enumerate(phases[j])]})
    for b in ["B1", "B2", "B3", "B4", "B5", "B6", "B7"]:
        junctions.append({"id": b, "kind": "boundary"})
    links = []
    for lid, (s, d) in pairs.items():
        boundary_dest = d.startswith("B")
        links.append(link(lid, s, d, 120, 1.8, downstream.get(lid), 60 if boundary_dest else None))
    sources = [lid for lid, (s, _) in pairs.items() if s.startswith("B")]
    return {
        "description": "Four-junction worked example with a three-agent decomposition",
        "network": {"cycle_s": 60, "junctions": junctions, "links": links},
        "partition": {"J1": 1, "J3": 1, "B1": 1, "B4": 1, "B6": 1, "J2": 2, "B2": 2, "B3": 2,
                      "J4": 3, "B5": 3, "B7": 3},
        "horizon_K": 4,
        "demands": [{"link": s, "pieces": [{"from_min": 0, "to_min": 60, "veh_per_hour": 600}]} for s in sources],
        "noise": 0.0,
        "seed": 42,
    }


def grid(width, height, lanes_ew, lanes_ns, sat_per_lane, cap_per_lane):
    """Internal junctions on a width x height grid with one boundary junction per open side."""
    junctions, links, phases = [], [], {}
    nodes = {}
    for y in range(height):
        for x in range(width):
            nodes[(x, y)] = f"J{y * width + x + 1}"
    boundary = []
    next_id = [1]
    adj = {}

    def add(src, dst, axis):
        lid = next_id[0]
        next_id[0] += 1
        lanes = lanes_ew if axis == "ew" else lanes_ns
        links.append({"id": lid, "source": src, "dest": dst, "capacity": cap_per_lane * lanes,
                      "saturation_flow": round(sat_per_lane * lanes, 6), "axis": axis})
        adj.setdefault(src, []).append(lid)
        return lid

    bcount = 0
    for (x, y), j in nodes.items():
        for dx, dy, axis in [(-1, 0, "ew"), (1, 0, "ew"), (0, -1, "ns"), (0, 1, "ns")]:
            other = (x + dx, y + dy)
            if other in nodes:
                add(j, nodes[other], axis)
            else:
                bcount += 1
                b = f"B{bcount}"
                boundary.append(b)
                add(b, j, axis)
                add(j, b, axis)
    by_id = {l["id"]: l for l in links}
    for l in links:
        dst = l["dest"]
        if dst.startswith("B"):
            l["dest_outflow_cap"] = 60
            continue
        outs = [o for o in adj[dst] if by_id[o]["dest"] != l["source"]]
        straight = [o for o in outs if by_id[o]["axis"] == l["axis"]]
        turns = [o for o in outs if by_id[o]["axis"] != l["axis"]]
        ratios = {}
        if straight and turns:
            for o in straight:
                ratios[str(o)] = round(0.6 / len(straight), 12)
            for o in turns:
                ratios[str(o)] = round(0.4 / len(turns), 12)
        else:
            ratios = even(outs)
        total = sum(ratios.values())
        last = str(outs[-1])
        ratios[last] = round(ratios[last] + 1.0 - total, 12)
        l["turn_ratios"] = ratios
    for j in nodes.values():
        ew = [l["id"] for l in links if l["dest"] == j and l["axis"] == "ew"]
        ns = [l["id"] for l in links if l["dest"] == j and l["axis"] == "ns"]
        junctions.append({"id": j, "kind": "internal", "lost_time": 4,
                          "phases": [{"id": "ew", "links": ew}, {"id": "ns", "links": ns}]})
    for b in boundary:
        junctions.append({"id": b, "kind": "boundary"})
    owner = {}
    for l in links:
        if l["source"].startswith("B"):
            owner[l["source"]] = l["dest"]
    return junctions, links, owner


def strip(links):
    return [{k: v for k, v in l.items() if k != "axis"} for l in links]


def saturated():
    junctions, links, owner = grid(2, 2, lanes_ew=5, lanes_ns=3, sat_per_lane=0.6, cap_per_lane=20)
    demands = []
    for l in links:
        if l["source"].startswith("B"):
            scale = 1.25 if l["axis"] == "ew" else 1.0
            demands.append({"link": l["id"], "pieces": [
                {"from_min": 20 * i, "to_min": 20 * (i + 1), "veh_per_hour": scale * d}
                for i, d in enumerate(SATURATED)]})
    partition = {j["id"]: int(j["id"][1:]) for j in junctions if j["kind"] == "internal"}
    for b, j in owner.items():
        partition[b] = partition[j]
    return {
        "description": "Saturated demand profile on a 2x2 grid, wide east-west roads",
        "network": {"cycle_s": 60, "junctions": junctions, "links": strip(links)},
        "partition": partition,
        "horizon_K": 4,
        "demands": demands,
        "noise": 0.0,
        "seed": 42,
    }


def toy_grid(demand):
    junctions, links, owner = grid(2, 1, lanes_ew=3, lanes_ns=2, sat_per_lane=0.6, cap_per_lane=15)
    demands = []
    for l in links:
        if l["source"].startswith("B"):
            rate = demand if l["axis"] == "ew" else 0.6 * demand
            demands.append({"link": l["id"], "pieces": [{"from_min": 0, "to_min": 20, "veh_per_hour": rate}]})
    partition = {"J1": 1, "J2": 2}
    for b, j in owner.items():
        partition[b] = partition[j]
    return {
        "description": "Two signalised junctions, one agent each",
        "network": {"cycle_s": 60, "junctions": junctions, "links": strip(links)},
        "partition": partition,
        "horizon_K": 3,
        "demands": demands,
        "noise": 0.0,
        "seed": 42,
    }


def main():
    OUT.mkdir(exist_ok=True)
    fixtures = {
        "appendix_c.json": three_agent_network(),
        "saturated.json": saturated(),
        "toy_grid.json": toy_grid(1300),
        "zero_demand.json": toy_grid(0),
    }
    fixtures["zero_demand.json"]["description"] = "Two junctions with no traffic"
    for pieces in fixtures["zero_demand.json"]["demands"]:
        pieces["pieces"][0]["to_min"] = 5
    for name, doc in fixtures.items():
        (OUT / name).write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
