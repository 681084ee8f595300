#!/usr/bin/env python3
"""CLI behaviour and file-format checks against independent readers."""

import argparse
import json
import shutil
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np

FAILURES = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        FAILURES.append(what)


def run(cli, *args, expect=0):
    proc = subprocess.run([str(cli), *map(str, args)], capture_output=True, text=True)
    if expect is not None and proc.returncode != expect:
        print(proc.stdout, proc.stderr, sep="\n")
        raise SystemExit(f"{' '.join(map(str, args))}: exit {proc.returncode}, expected {expect}")
    return proc


def fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def read_cvpd(path):
    raw = Path(path).read_bytes()
    assert raw[:4] == b"CVPD", "bad magic"
    version, n, t, h, w, c = struct.unpack_from("<6I", raw, 4)
    dtype = raw[28]
    assert version == 1 and dtype == 1
    payload = raw[29:]
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, t, h, w, c)
    return frames, payload


def write_cvpd(path, frames):
    n, t, h, w, c = frames.shape
    header = b"CVPD" + struct.pack("<6I", 1, n, t, h, w, c) + bytes([1])
    Path(path).write_bytes(header + frames.astype("<f4").tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    assert parts[0] == b"P5" and parts[2] == b"255"
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def config_line(stdout, what):
    for line in stdout.splitlines():
        if line.startswith(what + " config: "):
            return json.loads(line[len(what) + 9:])
    raise AssertionError(f"no '{what} config' line")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--work-dir", required=True)
    args = ap.parse_args()
    cli, work = Path(args.cli).resolve(), Path(args.work_dir)
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)

    # Help lists every flag.
    flags = {
        "gen": ["--config", "--set", "--out"],
        "train": ["--preset", "--config", "--set", "--data", "--out", "--log", "--checkpoint"],
        "predict": ["--model", "--data", "--steps", "--out-dir"],
        "eval": ["--model", "--data", "--recursive", "--motion-mask", "--report"],
        "analyze": ["--arch", "--size", "--target", "--out-dir", "--empirical", "--seeds", "--threshold"],
    }
    top = run(cli, "--help").stdout
    for sub, names in flags.items():
        check(sub in top, f"top-level help lists {sub}")
        text = run(cli, sub, "--help").stdout
        for f in names:
            check(f in text, f"{sub} --help lists {f}")
    check(run(cli, expect=None).returncode == 1, "missing subcommand exits 1")

    # gen: independent reader, checksum, header dimensions.
    data = work / "small.cvpd"
    out = run(cli, "gen", "--set", "n_sequences=5", "--set", "frames=6", "--set", "height=9", "--set", "width=7",
              "--set", "seed=3", "--out", data).stdout
    frames, payload = read_cvpd(data)
    check(frames.shape == (5, 6, 9, 7, 1), "dataset header dimensions")
    check(set(np.unique(frames)) <= {0.0, 1.0}, "generated frames are binary")
    printed = [l for l in out.splitlines() if l.startswith("checksum: ")]
    check(len(printed) == 1 and int(printed[0].split()[1], 16) == fnv1a(payload), "printed checksum is FNV-1a of the payload")
    gen_cfg = config_line(out, "gen")
    check(gen_cfg["n_sequences"] == 5 and gen_cfg["seed"] == 3, "gen echoes the effective config")

    # Unknown keys and bad values exit 1; numeric failures exit 2.
    check(run(cli, "gen", "--set", "bogus=1", "--out", work / "x.cvpd", expect=None).returncode == 1, "unknown gen key exits 1")
    check(run(cli, "train", "--set", "model.depth=3", "--data", data, "--out", work / "x.cvpm", expect=None).returncode == 1,
          "unknown train key exits 1")
    check(run(cli, "train", "--preset", "nope", "--data", data, "--out", work / "x.cvpm", expect=None).returncode == 1,
          "unknown preset exits 1")
    bad_cfg = work / "bad.json"
    bad_cfg.write_text('{"epochs": 1, "loss": {"q": 2}}')
    check(run(cli, "train", "--config", bad_cfg, "--data", data, "--out", work / "x.cvpm", expect=None).returncode == 1,
          "unknown key in a config file exits 1")
    check(run(cli, "train", "--set", "loss.lambda_p=1e308", "--set", "epochs=1", "--set", "model.layers=[2]",
              "--data", data, "--out", work / "x.cvpm", expect=None).returncode == 2, "non-finite loss exits 2")

    # Presets: U and W echoes differ only in blend_mode; DWS shrinks the model file.
    tiny = ["--set", "epochs=1", "--set", "model.layers=[3]", "--data", data]
    echoes = {}
    for preset in ["ablation-u", "ablation-w", "dws-on", "dws-off"]:
        res = run(cli, "train", "--preset", preset, *tiny, "--out", work / f"{preset}.cvpm")
        echoes[preset] = config_line(res.stdout, "train")
    u, w = echoes["ablation-u"], echoes["ablation-w"]
    check(u["model"].pop("blend_mode") == "uniform" and w["model"].pop("blend_mode") == "weighted" and u == w,
          "ablation-u and ablation-w differ only in blend_mode")
    check((work / "dws-on.cvpm").stat().st_size < (work / "dws-off.cvpm").stat().st_size, "dws-on model file is smaller")
    check(echoes["dws-on"]["loss"]["lambda_gdl"] == 0.0, "desk presets train with p=2 and no GDL")
    p1 = config_line(run(cli, "train", "--set", "loss.p=1", *tiny, "--out", work / "p1.cvpm").stdout, "train")
    check(p1["loss"]["p"] == 1 and p1["loss"]["lambda_gdl"] == 1.0, "loss.p=1 selects GDL weight 1")

    # predict: image export quantizes with round-half-up.
    values = np.array([0.0, 0.5, 1.0, 0.25, 0.5 / 255, 0.49 / 255, 0.999, 0.2], dtype=np.float32)
    custom = np.zeros((1, 5, 2, 4, 1), dtype=np.float32)
    custom[0, 4, :, :, 0] = values.reshape(2, 4)
    write_cvpd(work / "custom.cvpd", custom)
    model = work / "dws-on.cvpm"
    run(cli, "predict", "--model", model, "--data", work / "custom.cvpd", "--out-dir", work / "pred")
    target = read_pgm(work / "pred" / "target_000.pgm")
    expected = np.clip(np.floor(255.0 * values.astype(np.float64) + 0.5), 0, 255).astype(np.uint8).reshape(2, 4)
    check(np.array_equal(target, expected), "target image quantization (0.5 -> 128)")
    check(target[0, 1] == 128, "0.5 maps to 128")
    pred = read_pgm(work / "pred" / "pred_000.pgm")
    check(pred.shape == (2, 4), "prediction image shape")
    run(cli, "predict", "--model", model, "--data", data, "--steps", "2", "--out-dir", work / "pred2")
    check(len(list((work / "pred2").glob("pred_*.pgm"))) == 5 * 1 * 2, "predict writes windows x steps images")
    check(run(cli, "predict", "--model", model, "--data", data, "--steps", "0", "--out-dir", work / "p0",
              expect=None).returncode == 1, "predict --steps 0 exits 1")

    # Corrupted files are rejected.
    broken = work / "broken.cvpd"
    broken.write_bytes(data.read_bytes()[:-3])
    check(run(cli, "eval", "--model", model, "--data", broken, expect=None).returncode == 1, "truncated dataset exits 1")
    broken_model = work / "broken.cvpm"
    broken_model.write_bytes(b"XXXX" + model.read_bytes()[4:])
    check(run(cli, "eval", "--model", broken_model, "--data", data, expect=None).returncode == 1, "bad model magic exits 1")

    # analyze: exact masks agree with gradients; heatmaps and JSON written.
    for arch in ["convlstm:1", "convlstm:2", "contextvp:1"]:
        res = run(cli, "analyze", "--arch", arch, "--size", "12x12x5", "--empirical", "--out-dir", work / arch.replace(":", "_"))
        check("support mismatch: none" in res.stdout, f"analyze {arch}: support mismatch none")
    cov = json.loads((work / "convlstm_1" / "coverage.json").read_text())
    lag1 = [l for l in cov["lags"] if l["lag"] == 1][0]
    check(lag1["covered"] == 25, "convlstm lag-1 support is 5x5")
    heat = read_pgm(work / "convlstm_1" / "lag_01.pgm")
    check(heat.shape == (12, 12) and int((heat == 255).sum()) == 25, "lag-1 heatmap marks 25 pixels")
    ctx = json.loads((work / "contextvp_1" / "coverage.json").read_text())
    check(all(l["covered_fraction"] == 1.0 for l in ctx["lags"]), "contextvp covers every past frame fully")
    text = run(cli, "analyze", "--arch", "convlstm", "--size", "32x32x10", "--target", "16,16").stdout
    check("0.0244" in text, "32x32 lag-1 covered fraction printed as 0.0244")
    check(run(cli, "analyze", "--arch", "convlstm", "--size", "8x8x3", "--target", "9,1", expect=None).returncode == 1,
          "target outside the frame exits 1")

    print(f"{len(FAILURES)} failure(s)")
    return 1 if FAILURES else 0


if __name__ == "__main__":
    sys.exit(main())
