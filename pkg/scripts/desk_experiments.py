"""Run the desk-scale experiments end to end through the CLI.

Writes, under ``--out``: the generated lattice and splits, the distance sweep
(free field, linear, MLP at factors 1/2/4), the SNR sweep and the repeated
measurement at 1 s and 4 s excitation. Takes roughly 20 minutes on one CPU.

    python3 scripts/desk_experiments.py --config configs/desk.yaml --out runs/desk
"""

import argparse
import sys
import time
from pathlib import Path

from rtf_forge.cli import main as cli


def run(*argv: str) -> None:
    t0 = time.time()
    code = cli(list(argv))
    print(f"[{' '.join(argv[:1])}] exit {code} in {time.time() - t0:.0f} s", flush=True)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/desk.yaml")
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--skip", nargs="*", default=[], choices=["gen", "distance", "snr", "repeat"])
    args = parser.parse_args()
    out = Path(args.out)
    common = ["--config", args.config]
    if "gen" not in args.skip:
        run("gen", *common, "--out", str(out))
    if "distance" not in args.skip:
        lattice = out / "lattice.rtfd"
        data = ["--data", str(lattice)] if lattice.is_file() else []
        run("sweep-distance", *common, "--out", str(out), "--model", "free_field,linear,dnn", *data)
    if "snr" not in args.skip:
        run("sweep-snr", *common, "--out", str(out))
    if "repeat" not in args.skip:
        for seconds in ("1", "4"):
            run("repeat-measure", *common, "--out", str(out / f"repeat_{seconds}s"), "--duration", seconds)


if __name__ == "__main__":
    main()
