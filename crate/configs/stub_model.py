"""Minimal external model: y = a * b, all indicator bits matching."""
import json
import pathlib
import sys

work = pathlib.Path(sys.argv[1])
params = dict(line.split("=", 1) for line in (work / "params.txt").read_text().split())
a, b = float(params["a"]), float(params["b"])
out = {"scalars": {"y": a * b}, "bits": [1] * 10, "projections": {"ab": a * b}}
(work / "output.json").write_text(json.dumps(out))
