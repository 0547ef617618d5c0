"""Feature vector for a fixture workspace from its hand-counted manifest.

Plain arithmetic on the manifest counts and the default targets; it never
looks at the workspace files themselves.

Usage: python3 fixtures/oracle/features_oracle.py fixtures/ws-minimal.manifest.json
"""

import json
import sys

TARGETS = {"theory_words": 400, "loc": 1500, "paper_words": 2000, "readme_words": 300,
           "benchmarks": 4, "grounded_ratio": 1.0, "test_pass_ratio": 1.0}


def deficit(observed, target):
    return min(1.0, max(0.0, 1.0 - observed / target))


def main():
    path = sys.argv[1]
    m = json.load(open(path))
    c = m["counts"]
    vec = [deficit(c[k], t) for k, t in TARGETS.items()] + m["obligations"]
    m["expected_features"] = vec
    with open(path, "w") as f:
        json.dump(m, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
