import csv
import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from hdqt import cli
from hdqt.cil import Hyperparams
from hdqt.experiment import (
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    emit_plotdata,
    emit_results,
    load_records,
    plot_rows,
    result_rows,
    run_experiment,
    sweep,
    sweep_configs,
)
from hdqt.quantizer import QuantConfig
from hdqt.record import RunRecord

TINY = DatasetSpec(classes=4, samples_per_class=30, dim=8)


def tiny(**kw):
    base = ExperimentConfig(method="lwf", dataset=TINY, hp=Hyperparams(epochs=2))
    return replace(base, **kw)


def test_defaults_match_har_settings():
    c = ExperimentConfig()
    hp, q = c.hp, c.quant_config()
    assert hp.batch_size == 128 and hp.momentum == 0.9 and hp.weight_decay == 0.0002
    assert hp.lr == 0.01 and hp.lr_schedule == [[50, 0.1]] and hp.epochs == 100
    assert hp.memory_size == 200 and hp.temperature == 2 and hp.kd_lambda == 3
    assert hp.bic_split == 0.1
    assert q.tile_size == 32 and q.fwd_outlier_scale == 0.975
    assert (q.input_bits, q.accum_bits) == (4, 8)
    assert c.classes_per_task == 2


def test_config_round_trip(tmp_path):
    c = tiny(quant={"input_bits": 5, "accum_bits": 10}, seeds=[3, 4])
    p = tmp_path / "c.json"
    c.save(p)
    assert ExperimentConfig.load(p) == c
    assert ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


@pytest.mark.parametrize("raw", [
    {"method": "mir"}, {"bogus": 1}, {"hp": {"lr": 0.1, "nope": 2}}, {"quant": {"input_bits": 1}},
    {"quant": "int8"}, {"dataset": {"source": "csv"}}, {"seeds": []}, {"classes_per_task": 0},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw).validate()


def test_nocl_single_task():
    (r,) = run_experiment(tiny(method="nocl"))
    assert len(r.task_accuracy) == 1 and r.forgetting == []
    assert sorted(r.task_classes[0]) == [0, 1, 2, 3]


def test_fp_has_no_quantization_stats():
    (r,) = run_experiment(tiny(quant="fp"))
    assert r.gemm_stats == {}
    (q,) = run_experiment(tiny())
    assert q.gemm_stats["bins_used"]


def test_same_seed_same_record():
    a = run_experiment(tiny(method="bic", seeds=[1, 2]))
    b = run_experiment(tiny(method="bic", seeds=[1, 2]))
    assert [r.numeric_signature() for r in a] == [r.numeric_signature() for r in b]


def test_record_embeds_config_and_round_trips():
    (r,) = run_experiment(tiny())
    assert ExperimentConfig.from_dict(r.config) == tiny()
    back = RunRecord.from_dict(json.loads(json.dumps(r.to_dict())))
    assert back == r


def test_sweep_input_doubles_accum():
    pts = sweep_configs(tiny(), "input", [3, 4, 5, 6, 8])
    assert [(p.quant["input_bits"], p.quant["accum_bits"]) for p in pts] == [
        (3, 6), (4, 8), (5, 10), (6, 12), (8, 16)]


def test_sweep_accum_rejects_narrow(caplog):
    with caplog.at_level(logging.WARNING):
        pts = sweep_configs(tiny(quant={"input_bits": 6, "accum_bits": 12}), "accum", [4, 8, 12, 16])
    assert [p.quant["accum_bits"] for p in pts] == [8, 12, 16]
    assert "(6, 4)" in caplog.text
    with pytest.raises(ConfigError):
        sweep_configs(tiny(quant={"input_bits": 8, "accum_bits": 16}), "accum", [4])
    with pytest.raises(ConfigError):
        sweep_configs(tiny(), "tile", [1])


def test_singleton_sweep_is_run():
    c = tiny(quant={"input_bits": 4, "accum_bits": 8})
    (a,) = sweep(c, "accum", [8])
    (b,) = run_experiment(c)
    assert a.numeric_signature() == b.numeric_signature()


def test_sweep_pairs_seeds():
    recs = sweep(tiny(seeds=[0, 1]), "input", [4, 5])
    assert [(r.label, r.seed) for r in recs] == [("lwf/4b8a", 0), ("lwf/4b8a", 1), ("lwf/5b10a", 0), ("lwf/5b10a", 1)]
    assert recs[0].class_order == recs[2].class_order


def test_json_and_csv_agree(tmp_path):
    recs = run_experiment(tiny(seeds=[0, 1]))
    emit_results(recs, tmp_path, "json")
    emit_results(recs, tmp_path, "csv")
    from_json = result_rows(load_records(tmp_path / "results.json"))
    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(from_json)
    for row, ref in zip(rows, from_json):
        assert (row["label"], row["method"], int(row["seed"]), int(row["task"]), row["metric"]) == ref[:5]
        assert float(row["value"]) == ref[5]


def fake(label, seed, acc, forget=None, order=(0, 1, 2, 3)):
    n = len(acc)
    return RunRecord(label=label, method="lwf", seed=seed, config={}, class_order=list(order),
                     task_classes=[], accuracy=[[None] * (n - 1) + [a] for a in [0.5, 0.6, 0.7, 0.8]],
                     task_accuracy=list(acc), forgetting=list(forget or [0.0] * (n - 1)),
                     final_accuracy=acc[-1])


def test_plot_aggregates_by_hand():
    recs = [fake("a", 0, [0.9, 0.6]), fake("a", 1, [0.8, 0.5]), fake("a", 2, [0.7, 0.7])]
    rows = plot_rows(recs, "step_acc")
    assert rows[0]["mean"] == pytest.approx(0.8) and rows[1]["mean"] == pytest.approx(0.6)
    # population std of (0.9, 0.8, 0.7) and (0.6, 0.5, 0.7)
    assert rows[0]["std"] == pytest.approx(np.sqrt(2 / 300))
    assert rows[1]["std"] == pytest.approx(np.sqrt(2 / 300))
    assert {r["n"] for r in rows} == {3}


def test_plot_single_seed_zero_std(tmp_path):
    out = emit_plotdata([fake("a", 0, [0.9, 0.6], [0.2])], "forgetting", tmp_path / "f.csv")
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["std"]) for r in rows] == [0.0]
    assert rows[0]["task"] == "1"


def test_plot_rejects_incompatible():
    with pytest.raises(ValueError):
        plot_rows([fake("a", 0, [0.9, 0.6]), fake("b", 0, [0.9, 0.6, 0.5])], "step_acc")
    with pytest.raises(ValueError):
        plot_rows([fake("a", 0, [0.9, 0.6]), fake("a", 0, [0.8, 0.6])], "step_acc")
    with pytest.raises(ValueError):
        plot_rows([], "step_acc")
    with pytest.raises(ValueError):
        plot_rows([fake("a", 0, [0.9])], "per_class_delta")


def test_plot_per_class_delta_and_bins(tmp_path):
    recs = sweep(tiny(seeds=[0, 1], method="icarl"), "input", [3, 4])
    rows = plot_rows(recs, "per_class_delta")
    assert [r["arrival"] for r in rows] == [0, 1, 2, 3]
    bins = plot_rows(recs, "bin_occupancy")
    assert {r["role"] for r in bins} >= {"fwd_x", "bwd_w_grad"}
    emit_plotdata(recs, "bin_occupancy", tmp_path / "b.csv", tmp_path / "b.svg")
    assert (tmp_path / "b.svg").read_text().lstrip().startswith("<?xml")


# -- CLI -----------------------------------------------------------------------

def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    tiny(**kw).save(p)
    return str(p)


def test_cli_run_and_plot(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "res"
    assert cli.main(["run", "--config", cfg, "--seed", "0", "--seed", "1", "--bits", "5",
                     "--out", str(out)]) == 0
    recs = load_records(out / "results.json")
    assert {r.label for r in recs} == {"lwf/5b10a"} and [r.seed for r in recs] == [0, 1]
    assert (out / "results.csv").exists()
    assert cli.main(["plot", "--figure", "step_acc", "--in", str(out), "--out", str(tmp_path / "p.csv")]) == 0


def test_cli_fp_and_accum(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["run", "--config", cfg, "--fp", "--out", str(tmp_path / "a"), "--format", "json"]) == 0
    assert load_records(tmp_path / "a")[0].label == "lwf/fp"
    assert cli.main(["run", "--config", cfg, "--accum", "12", "--out", str(tmp_path / "b")]) == 0
    assert load_records(tmp_path / "b" / "results.json")[0].label == "lwf/4b12a"


def test_cli_sweep(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["sweep", "--config", cfg, "--axis", "accum", "--values", "2,8",
                     "--out", str(tmp_path / "s")]) == 0
    assert [r.label for r in load_records(tmp_path / "s" / "results.json")] == ["lwf/4b8a"]


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--method", "nope"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"method": "lwf", "extra": 1}')
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert cli.main(["run", "--config", write_cfg(tmp_path), "--dataset", str(tmp_path / "none.csv")]) == 2
    broken = tmp_path / "broken.csv"
    broken.write_text("a,label\nx,1\n")
    assert cli.main(["run", "--config", write_cfg(tmp_path), "--dataset", str(broken)]) == 2
    assert cli.main(["plot", "--figure", "step_acc", "--in", str(tmp_path / "nothing"),
                     "--out", str(tmp_path / "o.csv")]) == 2
    emit_results([fake("a", 0, [0.9, 0.6])], tmp_path / "one")
    assert cli.main(["plot", "--figure", "per_class_delta", "--in", str(tmp_path / "one"),
                     "--out", str(tmp_path / "o.csv")]) == 3


def test_workers_env(tmp_path, monkeypatch):
    serial = run_experiment(tiny(seeds=[0, 1]))
    monkeypatch.setenv("HDQT_WORKERS", "2")
    parallel = run_experiment(tiny(seeds=[0, 1]))
    assert [r.numeric_signature() for r in serial] == [r.numeric_signature() for r in parallel]
    monkeypatch.setenv("HDQT_WORKERS", "many")
    with pytest.raises(ConfigError):
        run_experiment(tiny())


def test_csv_dataset_run(tmp_path):
    from hdqt.data import save_csv, synth_blobs
    from hdqt.numerics import Rng
    ds = synth_blobs(4, 20, 5, 3.0, Rng(0))
    save_csv(ds, tmp_path / "d.csv")
    spec = DatasetSpec(source="csv", path=str(tmp_path / "d.csv"))
    (r,) = run_experiment(tiny(dataset=spec))
    assert len(r.class_order) == 4
