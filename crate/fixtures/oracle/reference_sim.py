"""Independent re-implementation of the controller for mock-script scenarios.

Keeps the workspace as an in-memory map of relative path -> text, applies the
scripted effects, and re-derives the features, scores, admissible sets, gate
verdicts, obligations and modes from first principles. Its output is frozen
as the expected symbol sequence the Rust controller must reproduce.

Usage: python3 fixtures/oracle/reference_sim.py scripts/golden.json [budget] > golden-symbols.json
"""

import json
import re
import sys

ALPHABET = [
    "Ideation", "TheoryCreation", "SeedGeneration", "SeedUpgrade", "PaperStrengthening",
    "READMEVerification", "BenchmarkTightening", "GroundingCreation", "SkepticalAudit",
    "PaperRewrite", "ClaimCleanup", "PortfolioExpansion", "FinalGroundingAudit", "Critique",
    "ResponseToCritique", "AcademicPaperPolish", "BenchmarkSearch",
]
PHASE = {}
for s in ["Ideation", "TheoryCreation"]:
    PHASE[s] = "seed"
for s in ["SeedGeneration", "SeedUpgrade"]:
    PHASE[s] = "generate"
for s in ["FinalGroundingAudit", "Critique", "ResponseToCritique", "AcademicPaperPolish"]:
    PHASE[s] = "tail"
for s in ALPHABET:
    PHASE.setdefault(s, "harden")
EXPANSIVE = {"SeedGeneration", "SeedUpgrade", "PortfolioExpansion"}
GROUNDING = {"GroundingCreation", "SkepticalAudit", "FinalGroundingAudit"}
PAIR = ["GroundingCreation", "SkepticalAudit"]
TAIL = [
    "FinalGroundingAudit", "SkepticalAudit", "ClaimCleanup", "Critique", "ResponseToCritique",
    "PaperRewrite", "READMEVerification", "FinalGroundingAudit", "AcademicPaperPolish",
]
FEATURES = [
    "theory_deficit", "code_deficit", "paper_deficit", "readme_deficit", "benchmark_deficit",
    "grounding_deficit", "test_deficit", "obligation_ground", "obligation_audit",
    "obligation_bench", "obligation_paper_sync", "obligation_readme_sync",
]
TARGETS = [400.0, 1500.0, 2000.0, 300.0, 4.0, 1.0, 1.0]
WINDOW = 6
RHO = 0.5
LAMBDA = 2.0 ** (-1.0 / 8.0)
MARGIN = 2
LOC_LOW = 0.7
MANIFESTS = {"Cargo.toml", "pyproject.toml", "setup.py", "package.json", "go.mod", "CMakeLists.txt", "Makefile"}
SKIP = {"target", "node_modules", "build", "dist", "__pycache__", "venv", "paper"}
SOURCE = {"rs", "py", "c", "h", "cc", "cpp", "hpp", "go", "js", "ts", "java", "jl", "ml", "hs", "scala",
          "kt", "rb", "sh", "cs", "swift", "r", "lean"}
BENCH = {"bench", "benches", "benchmark", "benchmarks"}
STOP = {"with", "that", "this", "from", "into", "their", "which", "have", "will", "also", "more", "than"}
PROPOSAL_KEYS = {"proposal", "preserved_capability", "concrete_instance", "evidence_artifact", "claim_support"}


def weights():
    w = {s: [0.0] * 12 for s in ALPHABET}
    col = {n: i for i, n in enumerate(FEATURES)}
    for s in ["Ideation", "TheoryCreation"]:
        w[s][col["theory_deficit"]] = 1.0
    for s in ["SeedGeneration", "SeedUpgrade"]:
        w[s][col["code_deficit"]] = 1.5
    for s, d, o in [
        ("PaperStrengthening", "paper_deficit", "obligation_paper_sync"),
        ("PaperRewrite", "paper_deficit", "obligation_paper_sync"),
        ("ClaimCleanup", "paper_deficit", "obligation_paper_sync"),
        ("READMEVerification", "readme_deficit", "obligation_readme_sync"),
        ("BenchmarkTightening", "benchmark_deficit", "obligation_bench"),
        ("BenchmarkSearch", "benchmark_deficit", "obligation_bench"),
        ("GroundingCreation", "grounding_deficit", "obligation_ground"),
        ("SkepticalAudit", "grounding_deficit", "obligation_audit"),
    ]:
        w[s][col[d]] = 1.0
        w[s][col[o]] = 2.0
    w["PortfolioExpansion"][col["code_deficit"]] = 1.0
    return w


def hidden_or_skipped(parts, skip):
    return any(p.startswith(".") for p in parts) or any(p in skip for p in parts)


def repos(ws):
    tops = sorted({p.split("/")[0] for p in ws if "/" in p})
    tops = [t for t in tops if not t.startswith(".") and t not in SKIP]
    return [t for t in tops if any(f"{t}/{m}" in ws for m in MANIFESTS)]


def is_test(rel):
    parts = rel.split("/")
    dirs, name = parts[:-1], parts[-1]
    stem = name.split(".")[0]
    return (any(d in ("tests", "test") for d in dirs) or name.startswith("test_") or stem.endswith("_test")
            or stem.endswith("_tests") or ".test." in name or ".spec." in name)


def repo_files(ws, name):
    out = []
    for p in ws:
        if p.startswith(name + "/"):
            inner = p[len(name) + 1:].split("/")
            if not hidden_or_skipped(inner[:-1], SKIP) and not inner[-1].startswith("."):
                out.append(p[len(name) + 1:])
    return out


def loc_and_tests(ws, name):
    loc, tests = 0, []
    for rel in repo_files(ws, name):
        ext = rel.rsplit(".", 1)[-1].lower() if "." in rel.split("/")[-1] else ""
        if ext not in SOURCE:
            continue
        loc += sum(1 for line in ws[f"{name}/{rel}"].splitlines() if line.strip())
        if is_test(rel):
            tests.append(f"{name}/{rel}")
    return loc, tests


def words(text):
    return len(text.split())


def thesis(text):
    for line in text.splitlines():
        t = line.strip()
        if t.lower().startswith("thesis:") and t[7:].strip():
            return t[7:].strip()
    return None


def tracked(p):
    # paper/**/*.tex, README.md, */README.md
    if p == "README.md":
        return True
    parts = p.split("/")
    if len(parts) == 2 and parts[1] == "README.md" and not parts[0].startswith("."):
        return True
    return parts[0] == "paper" and p.endswith(".tex") and not hidden_or_skipped(parts[1:-1], set())


LITERAL = re.compile(r"\b\d+(?:\.\d+)?\\?%|\b\d+\.\d+\b")


def literals(ws):
    out = []
    for p in sorted(ws):
        if not tracked(p):
            continue
        fence = False
        for i, line in enumerate(ws[p].splitlines(), 1):
            if p.endswith(".md"):
                if line.strip().startswith("```"):
                    fence = not fence
                    continue
                if fence:
                    continue
                line = re.sub(r"`[^`]*`", "", line)
            else:
                line = re.split(r"(?<!\\)%", line)[0]
            out.extend((p, i) for _ in LITERAL.finditer(line))
    return out


def ledger(ws):
    try:
        doc = json.loads(ws["grounding.json"])
        return {c["id"]: c for c in doc["claims"]}
    except (KeyError, ValueError, TypeError):
        return None


def grounded_ratio(ws):
    claims = ledger(ws)
    if claims is None:
        return 0.0
    lits = literals(ws)

    def span_ok(c):
        src = c["source"]
        lines = ws.get(src["file"], None)
        return lines is not None and 1 <= src["start_line"] <= src["end_line"] <= len(lines.splitlines())

    if lits:
        good = 0
        for f, line in lits:
            cov = [c for c in claims.values()
                   if c["source"]["file"] == f and c["source"]["start_line"] <= line <= c["source"]["end_line"]]
            if cov and all(c["status"] == "grounded" and span_ok(c) for c in cov):
                good += 1
        return good / len(lits)
    if claims:
        return sum(1 for c in claims.values() if c["status"] == "grounded" and span_ok(c)) / len(claims)
    return 0.0


def bench_files(ws):
    out = []
    for p in ws:
        parts = p.split("/")
        if hidden_or_skipped(parts[:-1], SKIP) or parts[-1].startswith("."):
            continue
        if any(d in BENCH for d in parts[:-1]):
            out.append(p)
    return sorted(out)


def summary(ws):
    rs = repos(ws)
    try:
        status = json.loads(ws.get("build-status.json", "{}")).get("repos", {})
    except ValueError:
        status = {}
    info = {}
    for r in rs:
        loc, tests = loc_and_tests(ws, r)
        info[r] = {"loc": loc, "tests": tests, "readme": f"{r}/README.md" in ws, "installable": bool(status.get(r))}
    theory_docs = ["THEORY.md"] + [f"{r}/THEORY.md" for r in rs]
    theory_words = sum(words(ws[d]) for d in theory_docs if d in ws)
    th = next((thesis(ws[d]) for d in theory_docs if d in ws and thesis(ws[d])), None)
    paper = [p for p in ws if p.startswith("paper/") and p.endswith(".tex")
             and not hidden_or_skipped(p.split("/")[1:-1], set())]
    readme = sum(words(ws[d]) for d in ["README.md"] + [f"{r}/README.md" for r in rs] if d in ws)
    try:
        rep = json.loads(ws["test-report.json"])
        total = rep["passed"] + rep["failed"]
        tests = rep["passed"] / total if total else 0.0
    except (KeyError, ValueError):
        tests = 0.0
    return {
        "repos": info,
        "theory_present": any(d in ws for d in theory_docs),
        "thesis": th,
        "theory_words": theory_words,
        "loc": sum(i["loc"] for i in info.values()),
        "paper_files": paper,
        "paper_words": sum(words(ws[p]) for p in paper),
        "readme_words": readme,
        "bench": bench_files(ws),
        "ground": grounded_ratio(ws),
        "tests": tests,
        "utility": ws.get("UTILITY.md", "").strip(),
    }


def deficit(obs, target):
    return min(max(1.0 - obs / target, 0.0), 1.0)


def features(w, o):
    obs = [w["theory_words"], w["loc"], w["paper_words"], w["readme_words"], len(w["bench"]), w["ground"], w["tests"]]
    return [deficit(float(x), t) for x, t in zip(obs, TARGETS)] + list(o)


def score(wt, s, f, history):
    dot = 0.0
    for a, b in zip(wt[s], f):
        dot += a * b
    return dot + 0.0 - RHO * history.count(s) / WINDOW


def admissible(mode, queue, budget, code_def):
    n = len(TAIL)
    if budget <= n:
        return "tail", [TAIL[n - budget]]
    if mode == "tail":
        return "tail", [TAIL[budget % n]]
    if queue:
        return "forced", [queue[0]]
    near = budget <= n + MARGIN
    loc_low = mode == "harden" and code_def > LOC_LOW
    out = [s for s in ALPHABET
           if (PHASE[s] == mode or (loc_low and PHASE[s] == "generate")) and not (s in EXPANSIVE and near)]
    if not out:
        out = [s for s in ALPHABET if PHASE[s] == "harden" and s not in EXPANSIVE]
    return "guard", out


def keywords(text):
    return {w.lower() for w in re.split(r"[^0-9A-Za-z]+", text) if len(w) >= 4 and w.lower() not in STOP}


def verdict(ws, w, text):
    if text is None:
        return False, "missing"
    try:
        p = json.loads(text)
        if set(p) != PROPOSAL_KEYS or set(p["preserved_capability"]) != {"name", "test"}:
            return False, "malformed"
    except (ValueError, AttributeError, TypeError):
        return False, "malformed"
    cap = p["preserved_capability"]
    tests = [t for r in w["repos"].values() for t in r["tests"]]
    r1 = bool(cap["name"].strip()) and (cap["test"].strip() in tests or cap["test"].strip() in w["bench"])
    vocab = keywords(cap["name"])
    for r in w["repos"]:
        vocab |= keywords(r)
    vocab |= keywords(w["thesis"] or "")
    vocab |= keywords(w["utility"])
    r2 = bool(p["proposal"].strip()) and len(keywords(p["proposal"]) & vocab) >= 1
    r3 = len(p["concrete_instance"].split()) >= 5
    ev = p["evidence_artifact"].strip()
    r4 = bool(ev) and not ev.startswith("/") and ".." not in ev.split("/") and (
        ev in ws or any(k.startswith(ev.rstrip("/") + "/") for k in ws))
    sup = p["claim_support"].strip()
    claims = ledger(ws) or {}
    r5 = bool(sup) and (sup in claims or sup in w["bench"])
    return all([r1, r2, r3, r4, r5]), "judged"


def apply(ws, effects, step, filt):
    for e in effects:
        path = e["path"].replace("{step}", str(step))
        if not filt(e["path"]):
            continue
        content = e.get("content", "").replace("{step}", str(step))
        if e["op"] == "write":
            ws[path] = content
        elif e["op"] == "append":
            ws[path] = ws.get(path, "") + content * e.get("repeat", 1)
        elif e["op"] == "delete":
            for k in [k for k in ws if k == path or k.startswith(path.rstrip("/") + "/")]:
                del ws[k]


def simulate(script, budget):
    wt = weights()
    ws = {}
    apply(ws, script.get("setup", []), 0, lambda _p: True)
    mode, queue, history, o = "seed", [], [], [0.0] * 5
    w = summary(ws)
    out = []
    for t in range(budget):
        b = budget - t
        f = features(w, o)
        rule, adm = admissible(mode, queue, b, f[1])
        scores = {s: score(wt, s, f, history) for s in ALPHABET}
        best = adm[0]
        for s in adm[1:]:
            if scores[s] > scores[best] or (scores[s] == scores[best] and ALPHABET.index(s) < ALPHABET.index(best)):
                best = s
        p = best
        rest = queue[1:] if rule == "forced" else ([] if rule == "tail" else queue)

        gate = None
        if p in EXPANSIVE and w["repos"]:
            text = ws.pop("expansion.json", None)
            gate, _ = verdict(ws, w, text)
        executed = gate is not False
        before = {k: v for k, v in ws.items() if tracked(k)}
        outcome = "gate_rejected"
        if executed:
            entries = [e for e in script.get("steps", []) if e["step"] == t and e.get("symbol", p) == p]
            apply(ws, script["symbols"].get(p, []), t, lambda _p: True)
            for e in entries:
                apply(ws, e.get("effects", []), t, lambda _p: True)
            outcome = next((e["outcome"] for e in entries if e.get("outcome")), "succeeded")
        after = {k: v for k, v in ws.items() if tracked(k)}
        changed = sorted(k for k in set(before) | set(after) if before.get(k) != after.get(k))
        w = summary(ws)

        inj = PAIR[:] if changed and p not in GROUNDING else []
        if rule == "tail":
            inj = []
        follow = PAIR[:] if executed and p in EXPANSIVE else []
        q = inj + (follow if follow != inj else []) + rest
        queue = [s for i, s in enumerate(q) if i == 0 or q[i - 1] != s]

        push = [1.0, 1.0, 0.5, 0.0, 0.0] if executed and p in EXPANSIVE else [0.0] * 5
        if any(c.endswith(".tex") for c in changed):
            push[3] += 1.0
        if any(c.split("/")[-1] == "README.md" for c in changed):
            push[4] += 1.0
        o = [LAMBDA * x + y for x, y in zip(o, push)]

        b_after = b - 1
        if mode == "seed" and w["theory_present"] and w["thesis"]:
            mode = "generate"
        elif mode == "generate" and any(r["installable"] and r["readme"] for r in w["repos"].values()) and w["paper_files"]:
            mode = "harden"
        elif mode == "harden" and b_after <= len(TAIL):
            mode = "tail"
        elif mode == "tail" and b_after == 0:
            mode = "halt"
        history = (history + [p])[-WINDOW:]
        out.append({"step": t, "symbol": p, "rule": rule, "outcome": outcome, "gate": gate,
                    "public_change": bool(changed)})
    return out


def main():
    script = json.load(open(sys.argv[1]))
    budget = int(sys.argv[2]) if len(sys.argv) > 2 else script["length"]
    json.dump(simulate(script, budget), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
