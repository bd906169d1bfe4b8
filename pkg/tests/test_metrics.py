import json
import shutil

import numpy as np
import pytest

from beamtasnet.metrics import (MetricReport, evaluate_set, format_table, sdr, si_sdr, write_report)
from beamtasnet.simkit import DatasetConfig, build_dataset, read_manifest, synthesize_sources
from beamtasnet.simkit.audio_io import read_wav, write_wav


def test_si_sdr_examples(rng):
    ref = rng.standard_normal(1000)
    assert si_sdr(ref, 3.0 * ref) == 60.0
    assert si_sdr(ref, -ref) == 60.0
    e = rng.standard_normal(1000)
    e -= np.dot(e, ref) / np.dot(ref, ref) * ref
    e *= np.sqrt(np.dot(ref, ref) / 100 / np.dot(e, e))
    assert si_sdr(ref, ref + e) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ValueError, match="silent reference"):
        si_sdr(np.zeros(5), np.ones(5))


def test_sdr_examples(rng):
    ref = rng.standard_normal(500)
    assert sdr(ref, ref) == 60.0
    assert sdr(ref, 2 * ref) == pytest.approx(0.0)
    assert sdr(ref, 2 * ref, allow_scale=True) == 60.0


def test_scale_invariance_and_projection_bound(rng):
    for _ in range(50):
        ref = rng.standard_normal(200)
        est = rng.uniform(0.2, 2) * ref + rng.uniform(0.1, 3) * rng.standard_normal(200)
        si = si_sdr(ref, est)
        assert si_sdr(ref, 7.5 * est) == pytest.approx(si, abs=1e-9)
        # best-scaled SNR is 1 + cot^2 of the angle while SI-SDR is cot^2
        assert sdr(ref, est) <= 10 * np.log10(1 + 10 ** (si / 10)) + 1e-9


def test_plain_snr_can_exceed_si_sdr(rng):
    ref = rng.standard_normal(1000)
    e = rng.standard_normal(1000)
    e -= np.dot(e, ref) / np.dot(ref, ref) * ref
    e *= np.sqrt(10 * np.dot(ref, ref) / np.dot(e, e))
    est = 0.5 * ref + e
    assert sdr(ref, est) > si_sdr(ref, est) + 5


def test_report_aggregates_ignore_non_finite():
    rep = MetricReport(records=[{"utt_id": "a", "snr_db": 1.0, "si_sdr_db": 2.0, "sdr_db": 1.0},
                                {"utt_id": "b", "snr_db": float("nan"), "si_sdr_db": 4.0, "sdr_db": 3.0}])
    agg = rep.aggregates()
    assert agg["snr_db"] == {"mean": 1.0, "median": 1.0, "count": 1}
    assert agg["si_sdr_db"]["mean"] == 3.0


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    d = tmp_path_factory.mktemp("metrics")
    synthesize_sources(d / "src", 4, seed=2)
    build_dataset(DatasetConfig(source_dir=str(d / "src"), out_dir=str(d / "data"), n_train=3,
                                n_real_eval=1, snr_range=(-3.0, 6.0), seed=4))
    return d / "data" / "manifest.jsonl"


def test_evaluate_references_hit_cap(small_set, tmp_path):
    root = small_set.parent
    for rec in read_manifest(small_set):
        src = root / (rec["clean"][0] if rec.get("clean") else rec["target"])
        shutil.copy(src, tmp_path / f"{rec['utt_id']}.wav")
    rep = evaluate_set(small_set, tmp_path)
    assert len(rep.records) == 4 and not rep.skipped
    for r in rep.records:
        assert r["snr_db"] == r["si_sdr_db"] == r["sdr_db"] == 60.0
    assert [r["utt_id"] for r in rep.records] == sorted(r["utt_id"] for r in rep.records)


def test_evaluate_noisy_inputs_match_recorded_snr(small_set, tmp_path):
    root = small_set.parent
    recs = [r for r in read_manifest(small_set) if r["condition"] == "simu"]
    for rec in recs:
        shutil.copy(root / rec["mixture"], tmp_path / f"{rec['utt_id']}.wav")
    rep = evaluate_set(small_set, tmp_path, split="train")
    by_id = {r["utt_id"]: r for r in rep.records}
    for rec in recs:
        assert by_id[rec["utt_id"]]["snr_db"] == pytest.approx(rec["snr_db"], abs=0.1)


def test_evaluate_skips_and_errors(small_set, tmp_path):
    root = small_set.parent
    recs = read_manifest(small_set)
    rec = recs[0]
    shutil.copy(root / rec["clean"][0], tmp_path / f"{rec['utt_id']}.wav")
    w = read_wav(root / recs[1]["clean"][0])
    write_wav(tmp_path / f"{recs[1]['utt_id']}.wav", w.samples[:, :-500], sample_rate=w.sample_rate)
    rep = evaluate_set(small_set, tmp_path)
    reasons = {s["utt_id"]: s["reason"] for s in rep.skipped}
    assert len(rep.records) == 1 and len(rep.skipped) == 3
    assert "length mismatch" in reasons[recs[1]["utt_id"]]
    assert "missing" in reasons[recs[2]["utt_id"]]
    with pytest.raises(ValueError, match="empty manifest"):
        evaluate_set([], tmp_path)


def test_small_length_mismatch_truncates(small_set, tmp_path):
    root = small_set.parent
    rec = read_manifest(small_set)[0]
    w = read_wav(root / rec["clean"][0])
    write_wav(tmp_path / f"{rec['utt_id']}.wav", w.samples[:, :-100], sample_rate=w.sample_rate)
    rep = evaluate_set([dict(rec, clean=[str(root / p) for p in rec["clean"]])], tmp_path)
    assert rep.records[0]["si_sdr_db"] == 60.0


def test_permutation_invariant_aggregates(rng):
    recs = [{"utt_id": str(i), "snr_db": float(v), "si_sdr_db": float(v), "sdr_db": float(v)}
            for i, v in enumerate(rng.standard_normal(9))]
    a = MetricReport(records=recs).aggregates()
    b = MetricReport(records=recs[::-1]).aggregates()
    assert a == b


def test_write_report_and_table(tmp_path):
    rep = MetricReport(records=[{"utt_id": "u1", "condition": "simu", "snr_db": 3.0,
                                 "si_sdr_db": 4.0, "sdr_db": 3.0}],
                       skipped=[{"utt_id": "u2", "reason": "missing enhanced file u2.wav"}])
    lines, summary = write_report(rep, tmp_path / "out" / "report.json")
    data = json.loads(summary.read_text())
    assert data["schema"] == "beamtasnet-metrics/1" and data["skipped_count"] == 1
    assert json.loads(lines.read_text().splitlines()[0])["utt_id"] == "u1"
    table = format_table(rep)
    assert "u1" in table and "skipped: 1" in table and "mean" in table
