"""Expand tools/synonym_groups.txt into the bundled synonyms.tsv.

Every group member maps to every other member of every group it appears in.
Order follows first appearance. Run from the repository root.
"""

import collections
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
SRC = ROOT / "tools" / "synonym_groups.txt"
DST = ROOT / "crates" / "core" / "resources" / "synonyms.tsv"


def main() -> None:
    table: "collections.OrderedDict[str, list[str]]" = collections.OrderedDict()
    for raw in SRC.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        words = [w.strip().lower() for w in line.split(",") if w.strip()]
        for w in words:
            cands = table.setdefault(w, [])
            for c in words:
                if c != w and c not in cands:
                    cands.append(c)
    pairs = 0
    with DST.open("w", encoding="utf-8", newline="\n") as out:
        for word in sorted(table):
            cands = table[word]
            if not cands:
                continue
            pairs += len(cands)
            out.write(f"{word}\t{','.join(cands)}\n")
    print(f"{len(table)} words, {pairs} pairs -> {DST}")


if __name__ == "__main__":
    main()
