#!/usr/bin/env python3
"""Plot validator output to image files.

Takes one or more result paths as written by `validator --out` and reads
their `.blocks.jsonl` and `.summary.csv` siblings. Writes:

  latency.png     per-block latency over the run, one line per input
  throughput.png  throughput per input, labelled by file stem
  summary.csv     the summary rows of every input, concatenated

Nothing is displayed.
"""

import argparse
import csv
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def sibling(path, suffix):
    return path.with_suffix("." + suffix)


def read_blocks(path):
    with open(sibling(path, "blocks.jsonl")) as f:
        return [json.loads(line) for line in f if line.strip()]


def read_summary(path):
    with open(sibling(path, "summary.csv"), newline="") as f:
        return list(csv.DictReader(f))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("results", nargs="+", type=pathlib.Path)
    ap.add_argument("--out-dir", type=pathlib.Path, default=pathlib.Path("plots"))
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    fig, ax = plt.subplots(figsize=(8, 4))
    for path in args.results:
        blocks = read_blocks(path)
        ax.plot(
            [b["block_num"] for b in blocks],
            [b["latency_ms"] for b in blocks],
            label=path.stem,
            linewidth=0.8,
        )
        rows.extend(read_summary(path))
    ax.set_xlabel("block")
    ax.set_ylabel("latency (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out_dir / "latency.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r["label"] for r in rows], [float(r["throughput_tps"]) for r in rows])
    ax.set_ylabel("transactions / s")
    fig.tight_layout()
    fig.savefig(args.out_dir / "throughput.png", dpi=120)
    plt.close(fig)

    if rows:
        with open(args.out_dir / "summary.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    print(f"wrote {args.out_dir}/latency.png, throughput.png, summary.csv")


if __name__ == "__main__":
    main()
