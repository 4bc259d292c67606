import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sfpc import packer
from sfpc.cli import main
from sfpc.floatcore import BF16, FP32, truncate_bits


@pytest.fixture
def tensor(tmp_path):
    x = np.random.default_rng(0).standard_normal((16, 33)).astype(np.float32)
    path = tmp_path / "x.npy"
    np.save(path, x)
    return path, x


def test_round_trip_npy(tmp_path, tensor, capsys):
    src, x = tensor
    assert main(["compress", str(src), "-o", str(tmp_path / "x.sfpc")]) == 0
    assert "ratio:" in capsys.readouterr().err
    assert main(["decompress", str(tmp_path / "x.sfpc"), "-o", str(tmp_path / "y.npy")]) == 0
    y = np.load(tmp_path / "y.npy")
    assert y.shape == x.shape and np.array_equal(y.view(np.uint32), x.view(np.uint32))


def test_lossy_width_and_idempotence(tmp_path, tensor):
    src, x = tensor
    args = ["compress", str(src), "--man-width", "4", "-q"]
    main(args + ["-o", str(tmp_path / "a.sfpc")])
    main(["decompress", str(tmp_path / "a.sfpc"), "-o", str(tmp_path / "a.npy")])
    out = np.load(tmp_path / "a.npy").view(np.uint32)
    assert np.array_equal(out, truncate_bits(x.view(np.uint32), 4, FP32))
    main(["compress", str(tmp_path / "a.npy"), "--man-width", "4", "-q", "-o", str(tmp_path / "b.sfpc")])
    assert (tmp_path / "a.sfpc").read_bytes() == (tmp_path / "b.sfpc").read_bytes()


def test_raw_bf16_with_sidecar(tmp_path):
    bits = np.arange(0, 1 << 12, 3, dtype=np.uint16)
    packer.write_tensor(tmp_path / "t.bin", bits, BF16)
    assert main(["compress", str(tmp_path / "t.bin"), "-q", "-o", str(tmp_path / "t.sfpc")]) == 0
    main(["decompress", str(tmp_path / "t.sfpc"), "-o", str(tmp_path / "u.bin")])
    back, fmt, _ = packer.read_tensor(tmp_path / "u.bin")
    assert fmt is BF16 and np.array_equal(back, bits)


def test_stats_json(tensor, capsys):
    src, x = tensor
    assert main(["stats", str(src), "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["values"] == x.size and stats["raw_bits"] == 32 * x.size
    assert stats["js_bits"] == packer.js_encode(x.view(np.uint32), FP32)
    assert stats["stream_bits"] == packer.size_account(x.view(np.uint32), FP32).total_bits


def test_stats_sweep(tmp_path, capsys):
    assert main(["stats", "--sweep", str(tmp_path / "s.csv"), "--size", "2048"]) == 0
    assert "gaussian(sigma=2): ratio" in capsys.readouterr().out
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 6


def test_usage_errors_exit_1(tmp_path, tensor):
    src, _ = tensor
    with pytest.raises(SystemExit) as exc:
        main(["compress"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["compress", str(src), "-o", "x", "--man-width", "2", "--width-from", "log.csv"])
    assert exc.value.code == 1
    assert main(["compress", str(src), "--man-width", "30", "-o", str(tmp_path / "z")]) == 1
    assert main(["compress", str(tmp_path / "missing.npy"), "-o", str(tmp_path / "z")]) == 1
    assert main(["perf"]) == 1


def test_corrupt_container_exit_2(tmp_path, tensor):
    src, _ = tensor
    main(["compress", str(src), "-q", "-o", str(tmp_path / "x.sfpc")])
    data = bytearray((tmp_path / "x.sfpc").read_bytes())
    (tmp_path / "cut.sfpc").write_bytes(bytes(data[: len(data) // 2]))
    assert main(["decompress", str(tmp_path / "cut.sfpc"), "-o", str(tmp_path / "o.npy")]) == 2
    data[0] ^= 0xFF
    (tmp_path / "magic.sfpc").write_bytes(bytes(data))
    assert main(["decompress", str(tmp_path / "magic.sfpc"), "-o", str(tmp_path / "o.npy")]) == 2


def test_nonfinite_exit_3(tmp_path):
    x = np.array([1.0, np.inf, 2.0], dtype=np.float32)
    np.save(tmp_path / "inf.npy", x)
    assert main(["compress", str(tmp_path / "inf.npy"), "-q", "-o", str(tmp_path / "i.sfpc")]) == 3
    assert main(["compress", str(tmp_path / "inf.npy"), "-q", "--allow-nonfinite",
                 "-o", str(tmp_path / "i.sfpc")]) == 0


def test_train_writes_bitlengths_and_width_from(tmp_path, tensor, capsys):
    cfg = tmp_path / "qm.cfg"
    cfg.write_text("quantizer = qm\nepochs = 3\nn_samples = 300\n")
    out = tmp_path / "run"
    assert main(["train", str(cfg), "-o", str(out)]) == 0
    assert "weighted_bits:" in capsys.readouterr().out
    rows = list(csv.DictReader(open(out / "bitlengths.csv")))
    assert rows and all(0 <= float(r["n"]) <= 23 for r in rows)
    src, x = tensor
    assert main(["compress", str(src), "-q", "--width-from", str(out / "bitlengths.csv"),
                 "--tensor", "a1", "-o", str(tmp_path / "w.sfpc")]) == 0
    width = int(np.ceil(float([r for r in rows if r["tensor_id"] == "a1"][-1]["n"])))
    assert packer.read_container(tmp_path / "w.sfpc").header.man_width == width
    assert main(["compress", str(src), "-q", "--width-from", str(out / "bitlengths.csv"),
                 "-o", str(tmp_path / "w.sfpc")]) == 1


def test_train_bad_config_and_divergence(tmp_path):
    (tmp_path / "bad.cfg").write_text("epochs = many\n")
    assert main(["train", str(tmp_path / "bad.cfg"), "-o", str(tmp_path / "r")]) == 1
    (tmp_path / "div.cfg").write_text("epochs = 3\nlr = 1e6\nn_samples = 200\n")
    assert main(["train", str(tmp_path / "div.cfg"), "-o", str(tmp_path / "d")]) == 3
    assert (tmp_path / "d" / "trace_diverged.npz").exists()


@pytest.mark.parametrize("suite", ["memory", "compute", "mixed"])
def test_perf_suites(suite, tmp_path, capsys):
    assert main(["perf", "--suite", suite, "--csv", str(tmp_path / "p.csv")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["traffic_ratio"] == 0.25
    assert {"memory": 4.0, "compute": 1.0}.get(suite, report["speedup"]) == pytest.approx(report["speedup"])


def test_perf_missing_layer(tmp_path):
    (tmp_path / "t.csv").write_text("layer,pass,macs,bytes_raw,bytes_compressed\n0,fwd,1,1,1\n")
    assert main(["perf", str(tmp_path / "t.csv")]) == 1


def test_selftest_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sfpc", "selftest"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 9 and "all checks passed" in proc.stdout


def test_stats_js_on_zero_bf16(tmp_path, capsys):
    packer.write_tensor(tmp_path / "z.bin", np.zeros(1000, np.uint16), BF16)
    assert main(["stats", str(tmp_path / "z.bin"), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["js_bits"] == 1000


@pytest.mark.parametrize("name,suffix,flags", [
    ("fp32_ramp_lossless", ".npy", []),
    ("bf16_relu_w3_signless", ".bin", ["--man-width", "3", "--signless"]),
])
def test_compress_reproduces_golden(tmp_path, name, suffix, flags):
    from test_golden import GOLDEN, cases

    source, _ = cases.build(name)
    src = tmp_path / f"in{suffix}"
    packer.write_tensor(src, source, cases.CASES[name][1]["fmt"])
    out = tmp_path / "g.sfpc"
    assert main(["compress", str(src), "-q", "-o", str(out), *flags]) == 0
    assert out.read_bytes() == (GOLDEN / f"{name}.sfpc").read_bytes()
