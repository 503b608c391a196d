import json

import numpy as np
import pytest

from dmkd import cli
from dmkd import tensor as T
from dmkd.checkpoint import Checkpoint, from_json, load_checkpoint, save_checkpoint, to_json
from dmkd.data import generate_dataset, SyntheticDataset
from dmkd.distill import DistillConfig, Variant
from dmkd.errors import CheckpointInvalid
from dmkd.experiments import (
    AblationRow,
    Cell,
    ablate,
    build_grid,
    distill_run,
    format_ablation_csv,
    read_ablation_csv,
    summarize,
    table2_grid,
    table3_grid,
    train_teacher,
)
from dmkd.gradcheck import run_gradchecks
from dmkd.models import student_model

# ---------------------------------------------------------------- dataset


def test_dataset_is_deterministic_per_seed():
    a, b, c = generate_dataset(5, 30, 9), generate_dataset(5, 30, 9), generate_dataset(6, 30, 9)
    np.testing.assert_array_equal(a.train_images, b.train_images)
    np.testing.assert_array_equal(a.test_labels, b.test_labels)
    assert not np.array_equal(a.train_images, c.train_images)


def test_dataset_balance_range_and_shape():
    ds = generate_dataset(0, n_train=300, n_test=10)
    assert np.bincount(ds.train_labels).tolist() == [100, 100, 100]
    counts = np.bincount(ds.test_labels, minlength=3)
    assert counts.max() - counts.min() <= 1
    assert ds.train_images.shape == (300, 1, 16, 16)
    assert ds.train_images.min() >= 0.0 and ds.train_images.max() <= 1.0
    with pytest.raises(ValueError):
        generate_dataset(0, n_train=0)


def test_dataset_npz_round_trip(tmp_path):
    ds = generate_dataset(1, 12, 6)
    ds.save(tmp_path / "d.npz")
    back = SyntheticDataset.load(tmp_path / "d.npz")
    np.testing.assert_array_equal(back.train_images, ds.train_images)
    assert back.seed == 1


# ---------------------------------------------------------------- teacher and checkpoints


def test_untrained_teacher_is_near_chance():
    # a single random init can favour one class, so average over inits
    ds = generate_dataset(4, 30, 300)
    accs = [train_teacher(ds, epochs=0, seed=s).test_accuracy for s in range(8)]
    assert abs(np.mean(accs) - 1 / 3) <= 0.1


def test_teacher_checkpoint_reload_reproduces_outputs(small_teacher, small_dataset):
    result, path = small_teacher
    reloaded = load_checkpoint(path)
    assert reloaded.kind == "teacher"
    np.testing.assert_array_equal(reloaded.model.predict(small_dataset.test_images),
                                  result.model.predict(small_dataset.test_images))
    assert all(not p.requires_grad for p in reloaded.model.parameters())


def test_checkpoint_save_load_save_is_byte_identical(small_teacher, small_dataset, tmp_path):
    _, teacher_path = small_teacher
    _, ckpt = distill_run(teacher_path, small_dataset, DistillConfig(seed=1), epochs=1)
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    save_checkpoint(ckpt, first)
    save_checkpoint(load_checkpoint(first), second)
    assert first.read_bytes() == second.read_bytes()
    assert teacher_path.read_text() == to_json(load_checkpoint(teacher_path))


def test_checkpoint_rejects_damage():
    good = json.loads(to_json(Checkpoint("student", student_model(np.random.default_rng(0)))))
    for mutate in (
        lambda d: d.update(schema_version=2),
        lambda d: d.update(kind="critic"),
        lambda d: d["parameters"].pop("head.bias"),
        lambda d: d["parameters"]["head.bias"].update(shape=[4]),
        lambda d: d["parameters"]["head.bias"].update(data=[0.0]),
    ):
        doc = json.loads(json.dumps(good))
        mutate(doc)
        with pytest.raises(CheckpointInvalid):
            from_json(json.dumps(doc))
    with pytest.raises(CheckpointInvalid):
        from_json("{not json")


# ---------------------------------------------------------------- distill runs


def test_distill_run_report_shape(small_teacher, small_dataset):
    _, path = small_teacher
    report, ckpt = distill_run(path, small_dataset, DistillConfig(seed=2), epochs=2)
    assert [e.epoch for e in report.epochs] == [1, 2]
    assert all(0 <= e.test_accuracy <= 1 and 0 <= e.train_accuracy <= 1 for e in report.epochs)
    assert 0 <= report.mean_mask_ratio_s <= 1 and 0 <= report.mean_mask_ratio_c <= 1
    assert ckpt.kind == "student" and len(ckpt.blocks) == 1


def test_fitnet_with_gamma_zero_has_zero_distill_column(small_teacher, small_dataset):
    _, path = small_teacher
    report, _ = distill_run(path, small_dataset, DistillConfig(variant="baseline-fitnet", gamma=0.0), epochs=2)
    assert [e.distill_loss for e in report.epochs] == [0.0, 0.0]


def test_distill_run_is_deterministic(small_teacher, small_dataset):
    result, _ = small_teacher
    cfg = DistillConfig(variant="random-mask", seed=4)
    a, _ = distill_run(result.model, small_dataset, cfg, epochs=2)
    b, _ = distill_run(result.model, small_dataset, cfg, epochs=2)
    assert a.to_json(include_wall_clock=False) == b.to_json(include_wall_clock=False)


def test_distill_run_rejects_student_checkpoint(small_teacher, small_dataset, tmp_path):
    _, path = small_teacher
    _, ckpt = distill_run(path, small_dataset, DistillConfig(), epochs=0)
    save_checkpoint(ckpt, tmp_path / "s.json")
    with pytest.raises(CheckpointInvalid):
        distill_run(tmp_path / "s.json", small_dataset, DistillConfig(), epochs=0)


# ---------------------------------------------------------------- ablation


def test_grids():
    assert [c.variant for c in table2_grid()] == [Variant.DUAL, Variant.SPATIAL_ONLY, Variant.CHANNEL_ONLY,
                                                 Variant.NO_MASK]
    cells = table3_grid()
    assert len(cells) == 6
    assert {(c.tau_s, c.tau_c) for c in cells} == {(0.45, 0.65), (0.55, 0.65), (0.65, 0.65), (0.55, 0.55),
                                                    (0.55, 0.75)}
    assert len(build_grid(["dual", "no-mask"], [0.45, 0.55], [0.65])) == 4


def test_single_cell_single_seed_gives_one_row(small_teacher, small_dataset, tmp_path):
    _, path = small_teacher
    out = tmp_path / "t.csv"
    rows, summary = ablate(path, small_dataset, [Cell(Variant.DUAL, 0.55, 0.65)], [0], epochs=1, out_path=out)
    text = out.read_text()
    head = text.split("\n\n")[0].splitlines()
    assert len(head) == 2 and head[0] == "variant,tau_s,tau_c,seed,final_accuracy,mean_mask_ratio_s,mean_mask_ratio_c"
    assert "\r" not in text
    assert summary[0].n_seeds == 1


def test_table3_sweep_rows_and_means(small_teacher, small_dataset, tmp_path):
    _, path = small_teacher
    out = tmp_path / "t3.csv"
    rows, summary = ablate(path, small_dataset, table3_grid(), [0, 1], epochs=1, out_path=out)
    assert len(rows) == 12
    back_rows, back_summary = read_ablation_csv(out)
    assert back_rows == rows and back_summary == summary
    for s in summary:
        accs = [r.final_accuracy for r in rows if (r.variant, r.tau_s, r.tau_c) == (s.variant, s.tau_s, s.tau_c)]
        assert s.final_accuracy_mean == pytest.approx(sum(accs) / len(accs), abs=1e-15)
    # the default cell appears twice in the sweep and yields identical rows
    assert rows[0] == rows[6] and rows[1] == rows[7]


def test_ablation_workers_preserve_order(small_teacher, small_dataset):
    result, _ = small_teacher
    grid = [Cell(Variant.NO_MASK, 0.55, 0.65), Cell(Variant.DUAL, 0.55, 0.65)]
    serial, _ = ablate(result.model, small_dataset, grid, [0, 1], epochs=1)
    parallel, _ = ablate(result.model, small_dataset, grid, [0, 1], epochs=1, workers=2)
    assert serial == parallel


def test_csv_floats_round_trip_exactly(tmp_path):
    rows = [AblationRow("dual", 0.55, 0.65, s, 1 / 3 + s * 1e-17, 0.1 + 0.2, 2 / 7) for s in range(3)]
    path = tmp_path / "x.csv"
    path.write_text(format_ablation_csv(rows, summarize(rows)))
    back, summary = read_ablation_csv(path)
    assert back == rows
    assert summary == summarize(rows)


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_passes_on_clean_build():
    assert all(r.passed for r in run_gradchecks(0))


def test_corrupted_conv_backward_is_reported_for_conv_only(monkeypatch):
    original = T.conv2d

    def corrupted(x, w, b=None):
        out = original(x, w, b)
        if out._backward is not None:
            back = out._backward
            out._backward = lambda g: [None if pg is None else 1.5 * pg for pg in back(g)]
        return out

    monkeypatch.setattr(T, "conv2d", corrupted)
    failed = {r.name for r in run_gradchecks(0) if not r.passed}
    assert failed == {"conv2d", "conv2d_batched"}


# ---------------------------------------------------------------- CLI


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_cli_gen_data_and_teacher(tmp_path, capsys):
    data = tmp_path / "d.npz"
    assert run_cli("gen-data", "--seed", 2, "--n-train", 30, "--n-test", 12, "--out", data) == 0
    assert run_cli("train-teacher", "--data", data, "--epochs", 1, "--out", tmp_path / "t.json") == 0
    assert load_checkpoint(tmp_path / "t.json").meta["epochs"] == 1
    assert "teacher test accuracy" in capsys.readouterr().out


def test_cli_distill_config_file_and_flag_override(small_teacher, tmp_path):
    _, teacher = small_teacher
    data = tmp_path / "d.npz"
    generate_dataset(3, 24, 12).save(data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau_s": 0.45, "variant": "spatial-only", "epochs": 1, "seed": 9}))
    report = tmp_path / "r.json"
    code = run_cli("distill", "--teacher", teacher, "--data", data, "--config", cfg, "--seed", 7,
                   "--report", report, "--checkpoint", tmp_path / "s.json")
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["config"]["tau_s"] == 0.45 and doc["config"]["variant"] == "spatial-only"
    assert doc["seed"] == 7 and len(doc["epochs"]) == 1
    assert load_checkpoint(tmp_path / "s.json").kind == "student"


def test_cli_ablate_custom_grid(small_teacher, tmp_path):
    _, teacher = small_teacher
    data = tmp_path / "d.npz"
    generate_dataset(3, 24, 12).save(data)
    out = tmp_path / "a.csv"
    code = run_cli("ablate", "--teacher", teacher, "--data", data, "--variants", "dual,no-mask",
                   "--tau-s-list", "0.45,0.55", "--seeds", "0", "--epochs", 1, "--out", out)
    assert code == 0
    rows, summary = read_ablation_csv(out)
    assert len(rows) == 4 and len(summary) == 4


def test_cli_gradcheck_exit_codes(monkeypatch, capsys):
    assert run_cli("gradcheck", "--seed", 1) == 0
    original = T.gelu

    def corrupted(x):
        out = original(x)
        if out._backward is not None:
            back = out._backward
            out._backward = lambda g: [2.0 * pg for pg in back(g)]
        return out

    monkeypatch.setattr(T, "gelu", corrupted)
    assert run_cli("gradcheck", "--seed", 1) == 1
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["distill", "--teacher", "{teacher}", "--tau-s", "1.5", "--report", "{tmp}/r.json"],
    ["distill", "--teacher", "{teacher}", "--temperature", "0", "--report", "{tmp}/r.json"],
    ["distill", "--teacher", "{teacher}", "--config", "{tmp}/bad.json", "--report", "{tmp}/r.json"],
    ["ablate", "--teacher", "{teacher}", "--variants", "nonsense", "--out", "{tmp}/a.csv"],
])
def test_cli_config_errors_exit_2(argv, small_teacher, tmp_path):
    (tmp_path / "bad.json").write_text("[1, 2]")
    _, teacher = small_teacher
    assert cli.main([a.format(teacher=teacher, tmp=tmp_path) for a in argv]) == 2


def test_cli_io_errors_exit_3(tmp_path):
    (tmp_path / "broken.json").write_text("{}")
    assert run_cli("distill", "--teacher", tmp_path / "missing.json", "--report", tmp_path / "r.json") == 3
    assert run_cli("distill", "--teacher", tmp_path / "broken.json", "--report", tmp_path / "r.json") == 3


def test_cli_usage_error_from_argparse():
    with pytest.raises(SystemExit) as exc:
        cli.main(["distill"])
    assert exc.value.code == 2
