"""Shared helpers for driving the command line in-process."""

import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from tge.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_digest(root) -> str:
    """sha256 over every file's relative path and bytes."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def schema(name):
    text = resources.files("tge").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, name):
    jsonschema.validate(doc, schema(name))


def jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]
