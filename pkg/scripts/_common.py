"""Shared helpers for the experiment scripts."""
import argparse
import json
import os
import time
from pathlib import Path

from multipose.normtable import NormTable, build_norm_table


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--table", default=os.environ.get("MULTIPOSE_TABLE"),
                   help="normalizer table; built (about 40 s) and saved here if missing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the results as JSON here")
    return p


def load_table(path):
    if path and Path(path).is_file():
        return NormTable.load(path)
    start = time.perf_counter()
    table = build_norm_table()
    print(f"built normalizer table in {time.perf_counter() - start:.1f}s")
    if path:
        table.save(path)
    return table


def dump(out, payload):
    if out:
        Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
