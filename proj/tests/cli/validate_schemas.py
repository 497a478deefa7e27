# Copyright 2026 The DSTC Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Runs every dstc verb and validates its JSON outputs against schemas/."""

import csv
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource

CONFIGS = {
    "tc.json": {"variant": "tc", "in_channels": 2, "out_channels": 2, "kernel_size": 2, "stride": 2},
    "train.json": {
        "variant": "dstc_parametrized", "in_channels": 2, "out_channels": 2, "kernel_size": 3,
        "stride": 2, "padding": 1, "output_padding": 1,
        "task": {"kind": "dilation_recovery", "samples": 2, "eval_samples": 1,
                 "input_spatial": [4, 4], "output_spatial": [8, 8]},
        "train": {"steps": 3},
    },
    "sweep.json": {
        "variant": "dstc_gaussian_dense", "in_channels": 1, "out_channels": 1, "kernel_size": 2, "stride": 2,
        "task": {"kind": "checkerboard_probe", "channels": 1, "input_spatial": [4, 4], "output_spatial": [8, 8]},
    },
}

# (run name, argv after the binary, {output file: schema file})
RUNS = [
    ("gradcheck", ["gradcheck", "tc.json"], {"gradcheck.json": "gradcheck_report.schema.json"}),
    ("params", ["params", "--all-variants"], {"params.json": "params.schema.json"}),
    ("train", ["train", "train.json"],
     {"metrics.json": "train_metrics.schema.json", "params.json": "params_manifest.schema.json"}),
    ("baseline", ["train", "train.json", "--baseline", "tc"], {"summary.json": "train_summary.schema.json"}),
    ("sweep", ["sweep", "sweep.json", "--axis", "K_sigma", "--values", "3", "5", "--steps", "2"], {}),
    ("oracle", ["oracle-compare"], {"oracle.json": "oracle.schema.json"}),
]


def main():
    binary = str(pathlib.Path(sys.argv[1]).resolve())
    schema_dir, work = pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    for name, cfg in CONFIGS.items():
        (work / name).write_text(json.dumps(cfg))

    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources((n, Resource.from_contents(s)) for n, s in schemas.items())

    def check(doc, schema_name):
        cls = jsonschema.validators.validator_for(schemas[schema_name])
        cls.check_schema(schemas[schema_name])
        cls(schemas[schema_name], registry=registry).validate(doc)

    failures = 0
    for run, argv, outputs in RUNS:
        out = work / run
        proc = subprocess.run([binary, *argv, "--out", str(out)], cwd=work, capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"FAIL {run}: exit {proc.returncode}\n{proc.stderr}")
            failures += 1
            continue
        for fname, schema_name in {**outputs, "manifest.json": "manifest.schema.json"}.items():
            try:
                doc = json.loads((out / fname).read_text())
                check(doc, schema_name)
                if fname == "manifest.json":
                    missing = [o for o in doc["outputs"] if not (out / o).exists()]
                    if missing:
                        raise ValueError(f"manifest lists missing outputs {missing}")
                print(f"ok   {run}/{fname}")
            except (OSError, ValueError, jsonschema.ValidationError) as e:
                print(f"FAIL {run}/{fname}: {e}")
                failures += 1
        if run == "sweep":
            with open(out / "sweep.csv", newline="") as f:
                rows = list(csv.DictReader(f))
            if [r["setting"] for r in rows] != ["3", "5"]:
                print(f"FAIL sweep/sweep.csv: rows {rows}")
                failures += 1
    print(f"{failures} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
