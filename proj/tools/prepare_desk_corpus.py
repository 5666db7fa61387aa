#!/usr/bin/env python3
"""Build the desk-scale corpus used by the experiment suite.

Source texts are the Project Gutenberg editions of Hamlet and Macbeth
(public domain) as shipped in the `shakespeare` 0.6 sdist on PyPI:

    curl -O https://files.pythonhosted.org/packages/a4/45/699c3869c2590579d0ef89df3cbd28b17eb77a14dd9f1841c51cd7d4dc1c/shakespeare-0.6.tar.gz
    tar xzf shakespeare-0.6.tar.gz
    python3 tools/prepare_desk_corpus.py shakespeare-0.6/shksprdata/texts data/desk

Normalization mimics the Penn Treebank LM release: lowercase, punctuation
removed, one sentence-ish unit (verse line) per line. Speaker tags and
bracketed stage directions are dropped. The concatenated stream is split
80/10/10 by lines into train/valid/test.
"""

import argparse
import pathlib
import re

PLAYS = ["hamlet_gut.txt", "macbeth_gut.txt"]

SPEAKER = re.compile(r"^[A-Z][A-Za-z' ]{0,24}\.$")
STAGE = re.compile(r"\[[^\]]*\]")
WORD = re.compile(r"[a-z]+(?:'[a-z]+)*")


def normalize(text):
    out = []
    text = STAGE.sub(" ", text)
    for raw in text.splitlines():
        line = raw.strip()
        if not line or SPEAKER.match(line):
            continue
        if line.isupper():  # act / scene headings, title
            continue
        if line.startswith(("ACT ", "Scene ", "SCENE")):
            continue
        words = WORD.findall(line.lower())
        if words:
            out.append(" ".join(words))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("texts", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    args = ap.parse_args()

    lines = []
    for play in PLAYS:
        lines += normalize((args.texts / play).read_text(encoding="latin-1"))

    n = len(lines)
    cut1, cut2 = int(n * 0.8), int(n * 0.9)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", lines[:cut1]), ("valid", lines[cut1:cut2]), ("test", lines[cut2:])):
        (args.out / f"{name}.txt").write_text("\n".join(part) + "\n", encoding="utf-8")
        print(name, len(part), "lines", sum(len(l.split()) for l in part), "tokens")


if __name__ == "__main__":
    main()
