import json
import shutil

import numpy as np
import pytest

from beamtasnet.beamform import beam_tasnet_enhance
from beamtasnet.cli import main
from beamtasnet.dsp import MultiChannelWaveform
from beamtasnet.simkit import read_manifest
from beamtasnet.simkit.audio_io import read_wav, write_wav
from beamtasnet.tasnet import TasNetArch, init_params
from beamtasnet.trainer import load_model, save_model

TINY = TasNetArch(enc_filters=8, bottleneck=8, hidden=12, stacks=1, blocks_per_stack=2)


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "tiny.ckpt"
    save_model(path, init_params(TINY, 0), TINY)
    return path


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"source_dir": "src", "out_dir": "data", "n_train": 3, "n_eval": 2, "n_real_eval": 1,
           "snr_range": [0, 5], "seed": 3}
    (d / "sim.json").write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(d / "sim.json"), "--make-sources", "6",
                 "--source-seconds", "0.3", "0.4"]) == 0
    return d / "data" / "manifest.jsonl"


def test_simulate_writes_manifest(data, capsys):
    recs = read_manifest(data)
    assert len(recs) == 6
    assert sum(r["condition"] == "real" for r in recs) == 1


def test_enhance_tasnet_single_channel(model, data, tmp_path, capsys):
    rec = read_manifest(data)[0]
    src = data.parent / rec["mixture"]
    assert main(["enhance", "--model", str(model), "--input", str(src), "--output",
                 str(tmp_path / "o.wav"), "--strategy", "tasnet"]) == 0
    out = read_wav(tmp_path / "o.wav")
    assert out.num_channels == 1 and out.length == read_wav(src).length
    assert "enhanced 1 file" in capsys.readouterr().out


def test_enhance_matches_library(model, data, tmp_path):
    rec = read_manifest(data)[0]
    src = data.parent / rec["mixture"]
    assert main(["enhance", "--model", str(model), "--input", str(src), "--output",
                 str(tmp_path / "o.wav"), "--strategy", "mask_1d"]) == 0
    params, arch, _ = load_model(model)
    expected = np.asarray(beam_tasnet_enhance(params, arch, read_wav(src), "mask_1d"), dtype=np.float32)
    assert np.array_equal(read_wav(tmp_path / "o.wav").samples[0], expected)


def test_enhance_channel_mismatch(model, tmp_path, capsys):
    write_wav(tmp_path / "three.wav", MultiChannelWaveform(np.zeros((3, 1600), np.float32)))
    code = main(["enhance", "--model", str(model), "--input", str(tmp_path / "three.wav"),
                 "--output", str(tmp_path / "o.wav")])
    assert code == 1
    assert "expected C=5 channels, got 3" in capsys.readouterr().err


def test_enhance_manifest_then_evaluate(model, data, tmp_path, capsys):
    assert main(["enhance", "--model", str(model), "--manifest", str(data), "--output-dir",
                 str(tmp_path / "enh"), "--split", "eval", "--strategy", "sig_mvdr"]) == 0
    assert len(list((tmp_path / "enh").glob("*.wav"))) == 3
    assert main(["evaluate", "--manifest", str(data), "--enhanced", str(tmp_path / "enh"),
                 "--out", str(tmp_path / "rep" / "r.json"), "--split", "eval"]) == 0
    summary = json.loads((tmp_path / "rep" / "r.json").read_text())
    assert summary["skipped_count"] == 0
    assert (tmp_path / "rep" / "r.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_evaluate_references_and_skip(data, tmp_path, capsys):
    recs = [r for r in read_manifest(data) if r["split"] == "train"]
    for r in recs[1:]:
        shutil.copy(data.parent / r["clean"][0], tmp_path / f"{r['utt_id']}.wav")
    code = main(["evaluate", "--manifest", str(data), "--enhanced", str(tmp_path), "--split", "train",
                 "--out", str(tmp_path / "r.json"), "--no-figure"])
    assert code == 0
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["skipped_count"] == 1
    lines = [json.loads(s) for s in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert all(r["si_sdr_db"] == 60.0 for r in lines)
    assert not (tmp_path / "r.png").exists()
    assert "skipped: 1" in capsys.readouterr().out


def test_evaluate_malformed_manifest(tmp_path, capsys):
    (tmp_path / "m.jsonl").write_text('{"utt_id": "a", "condition": "real", "mixture": "x.wav"}\nnot json\n')
    code = main(["evaluate", "--manifest", str(tmp_path / "m.jsonl"), "--enhanced", str(tmp_path),
                 "--out", str(tmp_path / "r.json")])
    assert code == 1
    assert "line 2" in capsys.readouterr().err


def test_spectrogram_zero_input_and_determinism(tmp_path, capsys):
    import matplotlib.image as mimage

    write_wav(tmp_path / "z.wav", MultiChannelWaveform(np.zeros((2, 4000), np.float32)))
    for name in ("a.png", "b.png"):
        assert main(["spectrogram", "--input", str(tmp_path / "z.wav"), "--out", str(tmp_path / name),
                     "--fft-size", "256", "--hop", "64"]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    img = mimage.imread(tmp_path / "a.png")
    frames = -(-(4000 + 256 - 256) // 64) + 1  # center padding of fft/2 on both sides
    assert img.shape[:2] == (129, frames)
    assert np.all(img[..., :3] == img[0, 0, :3])


def test_spectrogram_bad_channel(tmp_path, capsys):
    write_wav(tmp_path / "z.wav", MultiChannelWaveform(np.ones((2, 800), np.float32)))
    assert main(["spectrogram", "--input", str(tmp_path / "z.wav"), "--out", str(tmp_path / "a.png"),
                 "--channel", "3"]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["enhance", "--bogus"])
    assert exc.value.code == 2


def test_train_from_config(data, tmp_path, capsys):
    cfg = {"max_steps": 3, "batch_size": 2, "log_interval": 1, "checkpoint_interval": 0,
           "segment_seconds": 0.2, "init_seed": 1, "arch": TINY.to_dict()}
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    assert main(["train", "--manifest", str(data), "--config", str(tmp_path / "t.json"),
                 "--out-dir", str(tmp_path / "run"), "--quiet"]) == 0
    assert "finished after 3 steps" in capsys.readouterr().out
    params, arch, _ = load_model(tmp_path / "run" / "final.ckpt")
    assert arch == TINY
    assert len((tmp_path / "run" / "loss_log.jsonl").read_text().splitlines()) == 3
