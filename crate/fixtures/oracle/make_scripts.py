"""Writes the mock-executor scenario scripts under fixtures/scripts/.

Run from the repository root: python3 fixtures/oracle/make_scripts.py
"""

import hashlib
import json
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "scripts")


def w(path, content):
    return {"op": "write", "path": path, "content": content}


def a(path, content, repeat=1):
    e = {"op": "append", "path": path, "content": content}
    if repeat != 1:
        e["repeat"] = repeat
    return e


def ledger(claims):
    doc = {"version": 1, "claims": claims}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def claim(cid, text, file, start, end, output):
    return {
        "id": cid,
        "text": text,
        "source": {"file": file, "start_line": start, "end_line": end},
        "command": "printf '%s' " + output,
        "expected_digest": hashlib.sha256(output.encode()).hexdigest(),
        "status": "grounded",
    }


README = "# Road flows\n\nWe study max flow on road networks. Speedup 1.5 over the baseline.\n"
THEORY = (
    "# Theory\n\nThesis: augmenting path heuristics make max flow on road networks fast.\n\n"
    "## Revision\n\nRoad graphs are sparse and nearly planar, so short augmenting paths dominate.\n"
)
UTILITY = "Utility: faster max flow solvers help road network planners.\n"
PROPOSAL = {
    "proposal": "extend the flows solver to weighted road networks",
    "preserved_capability": {"name": "flows solver", "test": "flows/tests/test_flows.py"},
    "concrete_instance": "max flow on the city road network graph",
    "evidence_artifact": "flows/tests/test_flows.py",
    "claim_support": "speedup",
}
BAD_PROPOSAL = dict(PROPOSAL, claim_support="")
LEDGER = ledger([claim("speedup", "Speedup 1.5 over the baseline", "README.md", 3, 3, "1.5")])
README3 = README + "Memory stays under 2.5 GB.\nPreprocessing takes 3.5 minutes.\n"
LEDGER3 = ledger([
    claim("speedup", "Speedup 1.5 over the baseline", "README.md", 3, 3, "1.5"),
    claim("memory", "Memory stays under 2.5 GB", "README.md", 4, 4, "2.5"),
    claim("preprocessing", "Preprocessing takes 3.5 minutes", "README.md", 5, 5, "3.5"),
])
BUILD_ONE = json.dumps({"repos": {"flows": True}}) + "\n"
BUILD_TWO = json.dumps({"repos": {"flows": True, "graphs": True}}) + "\n"
PAPER = "\\documentclass{article}\n\\begin{document}\nRoad flows.\n\\end{document}\n"
FLOWS_README = "# flows\n\nMax flow solver for road networks.\n"
PAPER_PARA = "We route flow along short augmenting paths and prune saturated edges early on sparse road graphs.\n"

PAPER_FULL = PAPER.replace("Road flows.\n", "Road flows.\n" + PAPER_PARA * 100)


SEED = [
    w("flows/pyproject.toml", "[project]\nname = \"flows\"\n"),
    w("flows/README.md", FLOWS_README),
    w("flows/tests/test_flows.py", "def test_solve():\n    assert True\n"),
    w("build-status.json", BUILD_ONE),
    w("paper/main.tex", PAPER),
]


def proposal(p):
    return json.dumps(p, indent=2, sort_keys=True) + "\n"


def base_symbols():
    return {
        "Ideation": [w("UTILITY.md", UTILITY)],
        "TheoryCreation": [w("THEORY.md", THEORY)],
        "SeedGeneration": [a("flows/src/flows.py", "x = 0\n", 20)],
        "SeedUpgrade": [
            a("flows/src/flows.py", "y = 0\n", 200),
        ],
        "PortfolioExpansion": [
            w("graphs/pyproject.toml", "[project]\nname = \"graphs\"\n"),
            w("graphs/README.md", "# graphs\n\nShared graph utilities.\n"),
            a("graphs/src/graphs.py", "z = 0\n", 100),
            w("build-status.json", BUILD_TWO),
            w("expansion.json", proposal(PROPOSAL)),
        ],
        "PaperStrengthening": [w("paper/main.tex", PAPER_FULL)],
        "PaperRewrite": [w("paper/sections/method.tex", PAPER_PARA * 20)],
        "ClaimCleanup": [w("README.md", README + "Claims were checked against the ledger.\n")],
        "READMEVerification": [w("flows/README.md", FLOWS_README + "Install with pip and run the tests before use.\n" * 40)],
        "BenchmarkTightening": [w("flows/bench/road.csv", "graph,seconds,step\nroad,1,{step}\n")],
        "BenchmarkSearch": [w("flows/benchmarks/search_{step}.csv", "graph,seconds\ngrid,2\n")],
        "GroundingCreation": [w("grounding.json", LEDGER)],
        "SkepticalAudit": [w("test-report.json", "{\"passed\": 4, \"failed\": 0}\n")],
        "FinalGroundingAudit": [w("grounding.json", LEDGER)],
        "Critique": [w("CRITIQUE.md", "The evaluation uses one city only.\n")],
        "ResponseToCritique": [a("flows/src/flows.py", "w = 0\n", 10)],
        "AcademicPaperPolish": [a("paper/main.tex", "Polished wording throughout.\n", 3)],
    }


def dump(name, script):
    path = os.path.join(OUT, name)
    with open(path, "w") as f:
        json.dump(script, f, indent=2, sort_keys=True)
        f.write("\n")


def golden():
    return {
        "length": 40,
        "setup": [w("README.md", README)],
        "symbols": base_symbols(),
        "steps": [
            {"step": 2, "symbol": "SeedGeneration", "effects": SEED},
            {"step": 13, "outcome": "failed"},
            {"step": 20, "effects": [w("expansion.json", proposal(PROPOSAL))]},
            {"step": 26, "effects": [w("expansion.json", proposal(BAD_PROPOSAL))]},
        ],
    }


def fabrication():
    # An orphan number lands in the README at a known step.
    script = golden()
    script["length"] = 30
    # Three grounded numbers, so one orphan only dents the coverage.
    script["setup"] = [w("README.md", README3)]
    script["symbols"]["GroundingCreation"] = [w("grounding.json", LEDGER3)]
    script["symbols"]["FinalGroundingAudit"] = [w("grounding.json", LEDGER3)]
    script["symbols"]["ClaimCleanup"] = [w("README.md", README3 + "Claims were checked against the ledger.\n")]
    script["steps"].append({
        "step": FABRICATION_STEP,
        "fabrication": True,
        "effects": [a("README.md", "Throughput reaches 9.7 million edges per second.\n")],
    })
    return script


def long_run():
    # Public edits accumulate instead of converging, so the sync hooks keep firing.
    symbols = base_symbols()
    symbols["PaperStrengthening"] = [a("paper/main.tex", PAPER_PARA)]
    symbols["PaperRewrite"] = [a("paper/sections/method.tex", PAPER_PARA)]
    symbols["ClaimCleanup"] = [a("README.md", "Claims were checked against the ledger.\n")]
    symbols["READMEVerification"] = [a("flows/README.md", "Install with pip and run the tests.\n")]
    return {
        "length": LONG_LENGTH,
        "setup": [w("README.md", README)],
        "symbols": symbols,
        "steps": [{"step": 2, "symbol": "SeedGeneration", "effects": SEED}],
    }


FABRICATION_STEP = 19
LONG_LENGTH = 240


def main():
    os.makedirs(OUT, exist_ok=True)
    dump("golden.json", golden())
    dump("fabrication.json", fabrication())
    dump("long.json", long_run())


if __name__ == "__main__":
    main()
