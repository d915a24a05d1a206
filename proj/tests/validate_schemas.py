#!/usr/bin/env python3
"""Runs the CLI over a handful of configurations and validates every JSON
document against the shipped schemas. Also checks NPY interchange with numpy
in both directions.

usage: validate_schemas.py VZIP_CLI SCHEMA_DIR WORK_DIR
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
from referencing import Registry, Resource


def load_validators(schema_dir):
    resources = []
    for path in sorted(schema_dir.glob("*.schema.json")):
        doc = json.loads(path.read_text())
        resources.append((path.name, Resource.from_contents(doc)))
        resources.append((doc["$id"], Resource.from_contents(doc)))
    registry = Registry().with_resources(resources)
    validators = {}
    for kind in ("manifest", "analysis", "provenance", "flops"):
        schema = json.loads((schema_dir / f"{kind}.schema.json").read_text())
        jsonschema.Draft202012Validator.check_schema(schema)
        validators[kind] = jsonschema.Draft202012Validator(schema, registry=registry)
    return validators


class Runner:
    def __init__(self, cli, work, validators):
        self.cli = cli
        self.work = work
        self.validators = validators
        self.checked = 0

    def run(self, *args, expect=0):
        proc = subprocess.run([self.cli, *map(str, args)], capture_output=True, text=True)
        if proc.returncode != expect:
            raise AssertionError(f"{args[0]}: exit {proc.returncode}, expected {expect}\n{proc.stderr}")
        return proc.stdout

    def validate(self, doc, label):
        kind = doc.get("kind")
        errors = sorted(self.validators[kind].iter_errors(doc), key=lambda e: list(e.path))
        if errors:
            raise AssertionError(f"{label}: " + "; ".join(f"{list(e.path)}: {e.message}" for e in errors[:5]))
        self.checked += 1
        return doc

    def validate_file(self, path):
        return self.validate(json.loads(Path(path).read_text()), str(path))


def expect_rejected(validator, doc, label):
    if validator.is_valid(doc):
        raise AssertionError(f"schema accepted a broken {label}")


def main():
    cli, schema_dir, work = sys.argv[1], Path(sys.argv[2]), Path(sys.argv[3])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    r = Runner(cli, work, load_validators(schema_dir))

    datasets = {
        "toy": ["--mode", "toy", "--layers", "3", "--heads", "2", "--seq", "17", "--d-model", "8", "--d-head", "4",
                "--batch", "2"],
        "toy_nocls": ["--mode", "toy", "--layers", "2", "--heads", "2", "--seq", "16", "--d-model", "8",
                      "--d-head", "4", "--no-cls"],
        "uniform": ["--mode", "uniform", "--layers", "2", "--heads", "2", "--seq", "12", "--d-model", "8",
                    "--d-head", "4"],
        "sink": ["--mode", "sink", "--layers", "2", "--heads", "1", "--seq", "20", "--d-model", "4", "--d-head", "4",
                 "--cls", "--num-sinks", "3"],
        "random": ["--mode", "random", "--layers", "2", "--heads", "3", "--seq", "25", "--d-model", "6",
                   "--d-head", "2", "--batch", "5"],
    }
    for name, args in datasets.items():
        r.run("gen", *args, "--out-dir", work / name)
        r.validate_file(work / name / "manifest.json")

        analysis = r.validate(json.loads(r.run("analyze", "--manifest", work / name / "manifest.json", "--trace")),
                              f"analyze {name}")
        r.run("analyze", "--manifest", work / name / "manifest.json", "--source", "colmean", "--bins", "7",
              "--topk", "1,2,3", "--layer", "0", "--out", work / f"{name}.analysis.json")
        r.validate_file(work / f"{name}.analysis.json")
        assert analysis["pooled"]["tokens"] > 0

    manifest = json.loads((work / "uniform" / "manifest.json").read_text())
    seq = manifest["seq"]
    full = r.validate(json.loads(r.run("analyze", "--manifest", work / "uniform" / "manifest.json", "--topk",
                                       f"1,{seq}")), "analyze full k")
    assert abs(full["pooled"]["topk_mass"][1]["mass"] - 1.0) < 1e-12

    zips = [
        ("toy", ["--budget", "6"]),
        ("toy", ["--dominant", "4", "--contextual", "0", "--drop-remainder"]),
        ("toy", ["--budget", "5", "--cls-extra", "--cosine"]),
        ("toy_nocls", ["--budget", "8", "--keys", "hidden"]),
        ("sink", ["--budget", "7", "--no-cls"]),
        ("random", ["--dominant", "10", "--contextual", "5", "--crops", "5", "--no-cls"]),
    ]
    for i, (name, args) in enumerate(zips):
        tokens, prov = work / f"zip{i}.npy", work / f"zip{i}.json"
        r.run("zip", "--manifest", work / name / "manifest.json", *args, "--out-tokens", tokens, "--out-prov", prov)
        doc = r.validate_file(prov)
        out = np.load(tokens)
        assert out.dtype == np.dtype("<f4"), out.dtype
        assert list(out.shape) == doc["output_shape"], (out.shape, doc["output_shape"])
        replayed = work / f"replay{i}.npy"
        r.run("replay", "--manifest", work / name / "manifest.json", "--prov", prov, "--out", replayed)
        assert tokens.read_bytes() == replayed.read_bytes(), f"replay {i} differs"

    r.run("flops", "--layers", "32", "--hidden", "4096", "--ffn", "11008", "--text", "60", "--img-before", "2880",
          "--img-after", "160", "--out", work / "flops.json")
    r.validate_file(work / "flops.json")
    r.validate(json.loads(r.run("flops", "--layers", "1", "--hidden", "1", "--ffn", "1", "--text", "0",
                                "--img-before", "1", "--img-after", "1")), "flops minimal")

    # Broken documents must be rejected.
    good = json.loads((work / "toy" / "manifest.json").read_text())
    expect_rejected(r.validators["manifest"], {**good, "schema": "vzip/0"}, "manifest version")
    expect_rejected(r.validators["manifest"], {k: v for k, v in good.items() if k != "cls_index"}, "manifest without cls_index")
    expect_rejected(r.validators["manifest"], {**good, "files": {"attention": ["a.bin"], "hidden": ["h.npy"]}}, "manifest file list")
    prov = json.loads((work / "zip0.json").read_text())
    expect_rejected(r.validators["provenance"], {**prov, "similarity": "l2"}, "provenance similarity")

    # numpy-written data is accepted by the CLI and numpy reads CLI output.
    ext = work / "numpy_written"
    ext.mkdir()
    b, h, s, d = 1, 2, 9, 4
    files = {"attention": [], "hidden": []}
    for layer in range(2):
        np.save(ext / f"attn{layer}.npy", np.full((b, h, s, s), 1.0 / s, dtype="<f4"))
        np.save(ext / f"hid{layer}.npy", np.arange(b * s * d, dtype="<f4").reshape(b, s, d))
        files["attention"].append(f"attn{layer}.npy")
        files["hidden"].append(f"hid{layer}.npy")
    ext_manifest = {"schema": "vzip/1", "kind": "manifest", "num_layers": 2, "batch": b, "heads": h, "seq": s,
                    "d_model": d, "d_head": 2, "has_cls": False, "select_layer": -2, "files": files,
                    "source": "numpy"}
    r.validate(ext_manifest, "numpy manifest")
    (ext / "manifest.json").write_text(json.dumps(ext_manifest))
    rep = r.validate(json.loads(r.run("analyze", "--manifest", ext / "manifest.json", "--topk", "3")), "numpy analyze")
    assert abs(rep["pooled"]["topk_mass"][0]["mass"] - 3.0 / s) < 1e-9
    r.run("zip", "--manifest", ext / "manifest.json", "--dominant", "9", "--contextual", "0", "--out-tokens",
          ext / "t.npy", "--out-prov", ext / "p.json")
    assert np.array_equal(np.load(ext / "t.npy"), np.load(ext / "hid0.npy"))
    r.run("zip", "--manifest", ext / "manifest.json", "--budget", "4", "--out-tokens", ext / "t.npy",
          "--out-prov", ext / "p.json", expect=3)

    np.save(ext / "fortran.npy", np.asfortranarray(np.ones((b, s, d), dtype="<f4")))
    bad = dict(ext_manifest, files={"attention": files["attention"], "hidden": ["fortran.npy", "hid1.npy"]})
    (ext / "bad.json").write_text(json.dumps(bad))
    r.run("zip", "--manifest", ext / "bad.json", "--dominant", "9", "--contextual", "0", "--out-tokens",
          ext / "t.npy", "--out-prov", ext / "p.json", expect=3)

    print(f"validated {r.checked} documents against {len(r.validators)} schemas")


if __name__ == "__main__":
    main()
