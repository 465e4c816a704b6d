"""Regenerate the committed constant table of the synthetic benchmark.

Run once by hand; the package only ever reads the JSON this writes.
"""
import json
import sys
from pathlib import Path

from crlso.graphspace import SearchSpace
from crlso.oracle import TABLE_VERSION, build_table

SEED = 20230417


def main(out: Path) -> None:
    table = build_table(SearchSpace.nb201(), SEED)
    table["ops"] = ["none", "skip_connect", "conv_1x1", "conv_3x3", "avg_pool_3x3"]
    out.write_text(json.dumps(table, indent=1) + "\n")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "crlso" / "data" / f"synth_table_v{TABLE_VERSION}.json"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
