"""Distance sweep on a 1 cm lattice: where does the MLP overtake linear interpolation?

The desk lattice starts at 5 cm spacing. This diagnostic keeps the room and
pose count but shrinks the source volume to 0.2 x 0.2 x 0.1 m sampled every
1 cm, so decimation factors 1/2/4 give 1/2/4 cm spacings. It does not feed
any acceptance test.

    python3 scripts/fine_grid_crossover.py --out runs/fine_grid
"""

import argparse
import logging
from pathlib import Path

from rtf_forge import experiments as ex
from rtf_forge.cli import _sweep_outputs
from rtf_forge.config import config_from_dict, load_config


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="base config (defaults to the desk setup)")
    parser.add_argument("--out", default="runs/fine_grid")
    parser.add_argument("--models", default="free_field,linear,dnn")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    base = load_config(args.config).to_dict() if args.config else {}
    base["grid"] = {"origin": [1.9, 2.4, 1.2], "extent": [0.2, 0.2, 0.1], "spacing": 0.01}
    cfg = config_from_dict(base)
    result = ex.sweep_distance(cfg, [1, 2, 4], args.models.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _sweep_outputs(out, "fine_grid_distance", result, cfg)


if __name__ == "__main__":
    main()
