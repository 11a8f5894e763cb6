"""Per-call and cumulative annotation cost for 1,000 simulated calls.

Prices are 2 (input) and 8 (output) per million tokens with a 0.5 batch
multiplier. Floats are written as IEEE-754 bit patterns so the Rust side can
compare them exactly.

    python3 oracles/costs.py
"""

import json
import random
import struct
from pathlib import Path

INPUT_PER_1M = 2.0
OUTPUT_PER_1M = 8.0
BATCH = 0.5
OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/cost_oracle.json"


def bits(x: float) -> str:
    return format(struct.unpack("<Q", struct.pack("<d", x))[0], "016x")


def cost(inp: int, out: int, batch: bool) -> float:
    base = float(inp) * INPUT_PER_1M / 1e6 + float(out) * OUTPUT_PER_1M / 1e6
    return base * BATCH if batch else base


def main() -> None:
    rng = random.Random(20240612)
    calls = []
    spent = 0.0
    for _ in range(1000):
        inp = rng.randrange(0, 400_000)
        out = rng.randrange(0, 60_000)
        batch = rng.random() < 0.5
        c = cost(inp, out, batch)
        spent += c
        calls.append({"input": inp, "output": out, "batch": batch, "cost": bits(c), "spent": bits(spent)})
    doc = {
        "prices": {"input_per_1m": INPUT_PER_1M, "output_per_1m": OUTPUT_PER_1M, "batch_discount": BATCH},
        "calls": calls,
        "total_input": sum(c["input"] for c in calls),
        "total_output": sum(c["output"] for c in calls),
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {OUT} (spent {spent})")


if __name__ == "__main__":
    main()
