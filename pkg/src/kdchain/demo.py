"""Paths to the packaged demo corpus.

The package ships a small geography graph, forty questions over it, and a
scripted-provider file that answers every prompt the pipeline issues for
them, so the full stack runs offline:

    graph.tsv     triple store source
    corpus.jsonl  evaluation items (dataset "synthetic")
    scripts.json  fingerprint-keyed provider replies
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

FILES = ("graph.tsv", "corpus.jsonl", "scripts.json")


def demo_path(name: str) -> Path:
    if name not in FILES:
        raise ValueError(f"unknown demo file {name!r}; expected one of {', '.join(FILES)}")
    return Path(str(resources.files("kdchain") / "fixtures" / name))
