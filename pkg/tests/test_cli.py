import numpy as np
import pytest

from conftest import analytic_disk, overlap_dice
from snakeseg import volume_io as vio
from snakeseg.cli import main

NX = NY = 64
CENTERS = ((30, 32), (32, 31), (34, 33))
RADII = (13, 15, 14)


def _phantom_files(tmp_path, conf=0.9):
    truth = np.stack([analytic_disk((NY, NX), c, r) for c, r in zip(CENTERS, RADII)])
    volume = vio.CtVolume(np.where(truth > 0, 100.0, -100.0), (1.0, 1.0, 2.5))
    vol_path = tmp_path / "vol.nii"
    vol_path.write_bytes(vio.write_nifti(volume, 4))
    truth_path = tmp_path / "truth.nii"
    truth_path.write_bytes(vio.write_nifti(vio.MaskVolume(truth, (1.0, 1.0, 2.5)), 2))
    lines = []
    for z, (c, r) in enumerate(zip(CENTERS, RADII)):
        side = (2 * r + 1) / NX
        lines.append(f"{z} 0 {conf!r} {c[0] / NX!r} {c[1] / NY!r} {side!r} {side!r}")
    det_path = tmp_path / "dets.txt"
    det_path.write_text("".join(line + "\n" for line in lines))
    return vol_path, truth_path, det_path, truth


def test_info_volume(tmp_path, capsys):
    vol_path, _, _, _ = _phantom_files(tmp_path)
    assert main(["info", str(vol_path)]) == 0
    out = capsys.readouterr().out
    assert "dim=64x64x3" in out
    assert "spacing=1.0,1.0,2.5" in out
    assert "datatype=int16" in out
    assert "range=-100.0,100.0" in out


def test_info_mask_prints_label_histogram(tmp_path, capsys):
    grid = np.zeros((1, 2, 2), dtype=np.int64)
    grid[0, 0, 0] = 1
    grid[0, 0, 1] = 1
    grid[0, 1, 0] = 2
    path = tmp_path / "m.nii"
    path.write_bytes(vio.write_nifti(vio.MaskVolume(grid), 2))
    assert main(["info", str(path)]) == 0
    out = capsys.readouterr().out
    assert "datatype=uint8" in out
    assert "label[0]=1" in out
    assert "label[1]=2" in out
    assert "label[2]=1" in out


def test_info_truncated_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"\x00" * 64)
    assert main(["info", str(bad)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("volume_io:")
    assert "truncated" in err


def test_info_missing_file_exits_2(tmp_path, capsys):
    assert main(["info", str(tmp_path / "nope.nii")]) == 2
    assert "nope.nii" in capsys.readouterr().err


def test_export_pgm_and_labels(tmp_path, capsys):
    vol_path, truth_path, _, truth = _phantom_files(tmp_path)
    pgm = tmp_path / "slice.pgm"
    assert main(["export", str(vol_path), "--z", "1", "--window=-200,300",
                 "--out", str(pgm)]) == 0
    blob = pgm.read_bytes()
    assert blob.startswith(b"P5\n64 64\n255\n")
    pixels = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(64, 64)
    # HU 100 -> (100+200)*255/500 = 153, HU -100 -> 51
    assert set(np.unique(pixels)) == {51, 153}

    labels = tmp_path / "labels.txt"
    assert main(["export", str(truth_path), "--z", "1", "--labels-out", str(labels)]) == 0
    (line,) = vio.parse_labels(labels.read_text())
    assert line.class_id == 0
    assert line.w == pytest.approx(31 / 64)


def test_export_requires_some_output(tmp_path, capsys):
    vol_path, _, _, _ = _phantom_files(tmp_path)
    assert main(["export", str(vol_path), "--z", "0"]) == 2
    assert "labels-out" in capsys.readouterr().err


def test_segment_end_to_end(tmp_path, capsys):
    vol_path, truth_path, det_path, truth = _phantom_files(tmp_path)
    out = tmp_path / "pred.nii"
    assert main(["segment", str(vol_path), str(det_path), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert "slice 0: 1 detections" in captured.err  # per-slice timing
    mask, _ = vio.read_nifti(out.read_bytes())
    assert overlap_dice(mask.labels, truth) >= 0.90


def test_segment_is_deterministic(tmp_path):
    vol_path, _, det_path, _ = _phantom_files(tmp_path)
    a, b = tmp_path / "a.nii", tmp_path / "b.nii"
    assert main(["segment", str(vol_path), str(det_path), "--out", str(a)]) == 0
    assert main(["segment", str(vol_path), str(det_path), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_segment_confidence_gate_via_flag(tmp_path):
    vol_path, _, det_path, _ = _phantom_files(tmp_path, conf=0.25)
    out = tmp_path / "pred.nii"
    assert main(["segment", str(vol_path), str(det_path), "--out", str(out)]) == 0
    mask, _ = vio.read_nifti(out.read_bytes())
    assert mask.labels.sum() == 0  # 0.25 is not strictly above the default gate


def test_segment_empty_detections_file(tmp_path):
    vol_path, _, _, _ = _phantom_files(tmp_path)
    det_path = tmp_path / "empty.txt"
    det_path.write_text("")
    out = tmp_path / "pred.nii"
    assert main(["segment", str(vol_path), str(det_path), "--out", str(out)]) == 0
    mask, _ = vio.read_nifti(out.read_bytes())
    assert mask.labels.sum() == 0


def test_segment_malformed_detection_line(tmp_path, capsys):
    vol_path, _, _, _ = _phantom_files(tmp_path)
    det_path = tmp_path / "bad.txt"
    det_path.write_text("0 0 zzz 0.5 0.5 0.2 0.2\n")
    assert main(["segment", str(vol_path), str(det_path),
                 "--out", str(tmp_path / "x.nii")]) == 2
    err = capsys.readouterr().err
    assert "line 1" in err and err.startswith("volume_io:")


def test_segment_config_file_and_flag_precedence(tmp_path):
    vol_path, _, det_path, _ = _phantom_files(tmp_path, conf=0.5)
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# gate everything away\nconf=0.9\niters=40\n")
    out = tmp_path / "pred.nii"
    assert main(["segment", str(vol_path), str(det_path), "--config", str(cfg),
                 "--out", str(out)]) == 0
    mask, _ = vio.read_nifti(out.read_bytes())
    assert mask.labels.sum() == 0  # config conf=0.9 gates the 0.5 detections
    assert main(["segment", str(vol_path), str(det_path), "--config", str(cfg),
                 "--conf", "0.25", "--out", str(out)]) == 0
    mask, _ = vio.read_nifti(out.read_bytes())
    assert mask.labels.sum() > 0  # explicit flag beats the config


def test_config_rejects_unknown_keys(tmp_path, capsys):
    vol_path, _, det_path, _ = _phantom_files(tmp_path)
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("bogus=1\n")
    assert main(["segment", str(vol_path), str(det_path), "--config", str(cfg),
                 "--out", str(tmp_path / "x.nii")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_postprocess_command(tmp_path):
    grid = np.zeros((3, 1, 1), dtype=np.int64)
    grid[1, 0, 0] = 1
    src = tmp_path / "m.nii"
    src.write_bytes(vio.write_nifti(vio.MaskVolume(grid), 2))
    out = tmp_path / "pp.nii"
    assert main(["postprocess", str(src), "--out", str(out)]) == 0
    mask, _ = vio.read_nifti(out.read_bytes())
    np.testing.assert_array_equal(mask.labels[:, 0, 0], [0, 0, 0])


def test_probmap_command(tmp_path, capsys):
    a = np.array([[[1, 0], [0, 0]]], dtype=np.int64)
    b = np.array([[[1, 1], [0, 0]]], dtype=np.int64)
    pa, pb = tmp_path / "a.nii", tmp_path / "b.nii"
    pa.write_bytes(vio.write_nifti(vio.MaskVolume(a), 2))
    pb.write_bytes(vio.write_nifti(vio.MaskVolume(b), 2))
    out = tmp_path / "pm.nii"
    assert main(["probmap", str(pa), str(pb), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "n_slices_counted=2" in printed
    assert "extents=0,1,0,0" in printed
    loaded, header = vio.read_nifti(out.read_bytes())
    assert header.datatype == 16
    np.testing.assert_array_equal(loaded.data[0], [[1.0, 0.5], [0.0, 0.0]])
    assert (out.parent / "pm.png").exists()


def test_stats_command(tmp_path, capsys):
    data = np.zeros((1, 2, 2))
    data[0, 0, 0] = 0.0
    data[0, 0, 1] = 100.0
    data[0, 1, :] = -900.0
    vol = tmp_path / "v.nii"
    vol.write_bytes(vio.write_nifti(vio.CtVolume(data), 16))
    mask = tmp_path / "m.nii"
    mask.write_bytes(vio.write_nifti(
        vio.MaskVolume(np.array([[[1, 1], [0, 0]]], dtype=np.int64)), 2))
    out = tmp_path / "stats.kv"
    assert main(["stats", str(vol), str(mask), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "mean_hu=50.0" in printed
    assert "std_hu=50.0" in printed
    assert "organ_fraction=1.0" in printed
    assert out.read_text() == printed
    assert (tmp_path / "stats.png").exists()


def test_eval_seg_files(tmp_path, capsys):
    _, truth_path, _, truth = _phantom_files(tmp_path)
    assert main(["eval-seg", str(truth_path), str(truth_path)]) == 0
    printed = capsys.readouterr().out
    assert "mean=1.0" in printed and "std=0.0" in printed


def test_eval_seg_half_overlap_fixture(tmp_path, capsys):
    a = np.zeros((1, 2, 2), dtype=np.int64)
    a[0, 0, :] = 1
    b = np.zeros_like(a)
    b[0, 0, 0] = 1
    b[0, 1, 0] = 1
    pa, pb = tmp_path / "pred.nii", tmp_path / "truth.nii"
    pa.write_bytes(vio.write_nifti(vio.MaskVolume(a), 2))
    pb.write_bytes(vio.write_nifti(vio.MaskVolume(b), 2))
    assert main(["eval-seg", str(pa), str(pb)]) == 0
    assert "mean=0.5" in capsys.readouterr().out


def test_eval_seg_directories_with_report(tmp_path, capsys):
    pred_dir, truth_dir = tmp_path / "pred", tmp_path / "truth"
    pred_dir.mkdir()
    truth_dir.mkdir()
    grid = np.zeros((1, 4, 4), dtype=np.int64)
    grid[0, 1:3, 1:3] = 1
    blob = vio.write_nifti(vio.MaskVolume(grid), 2)
    for name in ("c1.nii", "c2.nii"):
        (pred_dir / name).write_bytes(blob)
        (truth_dir / name).write_bytes(blob)
    out = tmp_path / "report.tsv"
    assert main(["eval-seg", str(pred_dir), str(truth_dir), "--out", str(out)]) == 0
    records = out.read_text().splitlines()
    assert records[0] == "c1\t1.0"
    assert records[1] == "c2\t1.0"
    assert "mean\t1.0" in records
    assert (tmp_path / "report.png").exists()
    assert "mean=1.0" in (tmp_path / "report.kv").read_text()
    printed = capsys.readouterr().out
    assert "case.c1=1.0" in printed


def test_eval_seg_unpaired_and_mismatch(tmp_path, capsys):
    pred_dir, truth_dir = tmp_path / "pred", tmp_path / "truth"
    pred_dir.mkdir()
    truth_dir.mkdir()
    small = vio.write_nifti(vio.MaskVolume(np.ones((1, 2, 2), dtype=np.int64)), 2)
    big = vio.write_nifti(vio.MaskVolume(np.ones((1, 3, 3), dtype=np.int64)), 2)
    (pred_dir / "a.nii").write_bytes(small)
    (truth_dir / "a.nii").write_bytes(big)
    assert main(["eval-seg", str(pred_dir), str(truth_dir)]) == 2
    assert "case a" in capsys.readouterr().err
    (pred_dir / "only_here.nii").write_bytes(small)
    assert main(["eval-seg", str(pred_dir), str(truth_dir)]) == 2
    assert "only_here.nii" in capsys.readouterr().err


def _write_det_pair(tmp_path, preds_text, truth_text):
    pred_dir, truth_dir = tmp_path / "pred", tmp_path / "truth"
    pred_dir.mkdir(exist_ok=True)
    truth_dir.mkdir(exist_ok=True)
    (pred_dir / "img.txt").write_text(preds_text)
    (truth_dir / "img.txt").write_text(truth_text)
    return pred_dir, truth_dir


def test_eval_det_perfect_first_rank(tmp_path, capsys):
    # TP at rank 1 (IoU ~0.82), FP at rank 2 -> AP 1.0
    pred_dir, truth_dir = _write_det_pair(
        tmp_path,
        "0 0.9 0.5 0.52 0.2 0.2\n0 0.8 0.9 0.9 0.1 0.1\n",
        "0 0.5 0.5 0.2 0.2\n",
    )
    out = tmp_path / "det.tsv"
    assert main(["eval-det", str(pred_dir), str(truth_dir), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "ap[0]=1.0" in printed
    assert "map=1.0" in printed
    assert "ppv=0.5" in printed
    assert "tpr=1.0" in printed
    assert (tmp_path / "det.png").exists()
    assert "mean\t1.0" in out.read_text()
    assert "map=1.0" in (tmp_path / "det.kv").read_text()


def test_eval_det_swapped_ranks_halves_ap(tmp_path, capsys):
    pred_dir, truth_dir = _write_det_pair(
        tmp_path,
        "0 0.9 0.9 0.9 0.1 0.1\n0 0.8 0.5 0.52 0.2 0.2\n",
        "0 0.5 0.5 0.2 0.2\n",
    )
    assert main(["eval-det", str(pred_dir), str(truth_dir)]) == 0
    assert "map=0.5" in capsys.readouterr().out


def test_eval_det_single_fp(tmp_path, capsys):
    pred_dir, truth_dir = _write_det_pair(
        tmp_path,
        "0 0.9 0.9 0.9 0.1 0.1\n",
        "0 0.5 0.5 0.2 0.2\n",
    )
    assert main(["eval-det", str(pred_dir), str(truth_dir)]) == 0
    out = capsys.readouterr().out
    assert "map=0.0" in out and "tpr=0.0" in out


def test_eval_det_unpaired_files_listed(tmp_path, capsys):
    pred_dir, truth_dir = _write_det_pair(tmp_path, "", "0 0.5 0.5 0.2 0.2\n")
    (pred_dir / "extra.txt").write_text("")
    assert main(["eval-det", str(pred_dir), str(truth_dir)]) == 2
    assert "extra.txt" in capsys.readouterr().err


def test_eval_det_confidence_gate(tmp_path, capsys):
    pred_dir, truth_dir = _write_det_pair(
        tmp_path,
        "0 0.25 0.5 0.52 0.2 0.2\n",  # exactly at the default gate: dropped
        "0 0.5 0.5 0.2 0.2\n",
    )
    assert main(["eval-det", str(pred_dir), str(truth_dir)]) == 0
    assert "map=0.0" in capsys.readouterr().out


def test_no_figures_flag(tmp_path):
    _, truth_path, _, _ = _phantom_files(tmp_path)
    out = tmp_path / "r.tsv"
    assert main(["eval-seg", str(truth_path), str(truth_path),
                 "--out", str(out), "--no-figures"]) == 0
    assert out.exists()
    assert not (tmp_path / "r.png").exists()
