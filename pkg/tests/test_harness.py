import csv
import math

import numpy as np
import pytest
import torch
import yaml

from fetnet.datagen import SceneSpec, corpus_specs, generate_triplet, write_dataset, write_image
from fetnet.harness import train as train_mod
from fetnet.harness.ablate import ABLATION_COLUMNS, ablate
from fetnet.harness.checkpoint import CheckpointError, load_generator, read_checkpoint, save_checkpoint
from fetnet.harness.cli import main
from fetnet.harness.config import (
    OUTPUT_ROOT_ENV,
    VARIANTS,
    TrainConfig,
    apply_overrides,
    load_config,
    make_run_dir,
    save_config,
)
from fetnet.harness.evaluate import evaluate, infer
from fetnet.harness.train import LOG_COLUMNS, train
from fetnet.losses import TrainingError
from fetnet.model import FETGenerator

TINY = dict(steps=3, n_train=2, batch_size=2, image_size=32, checkpoint_every=0)


def read_log(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    return train(TrainConfig(**TINY), run)


# config

def test_config_validation():
    for bad in (dict(g_lr=0), dict(image_size=40), dict(variant="nope"), dict(preset="huge")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError, match="unknown config keys"):
        TrainConfig.from_dict({"stepz": 3})


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.g_lr, cfg.d_lr, cfg.image_size, cfg.batch_size) == (1e-3, 2e-3, 64, 4)
    full = TrainConfig.full_preset()
    assert (full.image_size, full.batch_size) == (256, 6)


def test_overrides_and_yaml(tmp_path):
    d = apply_overrides({}, ["steps=7", "weights.lambda_s=10", "augment=true"])
    assert d == {"steps": 7, "weights": {"lambda_s": 10}, "augment": True}
    with pytest.raises(ValueError):
        apply_overrides({}, ["steps"])
    cfg = load_config(None, ["steps=7", "weights.lambda_s=10"])
    assert cfg.steps == 7 and cfg.weights.lambda_s == 10 and cfg.weights.lambda_t == 5
    save_config(cfg, tmp_path / "c.yaml")
    raw = yaml.safe_load((tmp_path / "c.yaml").read_text())
    assert raw["generator"]["widths"] == [8, 16, 32, 64, 64]
    raw.pop("generator")
    (tmp_path / "c2.yaml").write_text(yaml.safe_dump(raw))
    assert load_config(tmp_path / "c2.yaml") == cfg
    assert load_config(None, ["preset=full"]).image_size == 256


def test_variant_configs_differ_only_in_mutation():
    base = TrainConfig().generator_config().to_dict()
    for name, mutation in VARIANTS.items():
        cfg = TrainConfig(variant=name).generator_config().to_dict()
        diff = {k for k in base if base[k] != cfg[k]}
        assert diff == {k for k, v in mutation.items() if base[k] != v}, name


def test_run_dir_under_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    a, b = make_run_dir("train"), make_run_dir("train")
    assert a.parent == tmp_path and a != b and a.name.endswith("-train")


# training

def test_log_schema(trained):
    rows = read_log(trained.log_path)
    assert tuple(rows[0]) == LOG_COLUMNS
    assert len(rows) == 1 + TINY["steps"]
    assert all(len(r) == len(LOG_COLUMNS) for r in rows)
    assert all(math.isfinite(float(v)) for r in rows[1:] for v in r)
    assert (trained.log_path.parent / "config.yaml").exists()


def test_deterministic_runs(tmp_path, trained):
    again = train(TrainConfig(**TINY), tmp_path)
    assert read_log(again.log_path) == read_log(trained.log_path)


def test_zero_adversarial_weight_decouples_discriminator(tmp_path):
    w = {"lambda_g": 0.0}
    a = train(TrainConfig(**TINY, weights=w, disc_width=8), tmp_path / "a")
    b = train(TrainConfig(**TINY, weights=w, disc_width=16), tmp_path / "b")
    for (ka, va), (kb, vb) in zip(a.generator.state_dict().items(), b.generator.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_nan_aborts_with_last_good(tmp_path, monkeypatch):
    real = train_mod.dice_loss
    calls = {"n": 0}

    def flaky(pred, target):
        calls["n"] += 1
        return real(pred, target) * (float("nan") if calls["n"] == 2 else 1.0)

    monkeypatch.setattr(train_mod, "dice_loss", flaky)
    with pytest.raises(TrainingError) as e:
        train(TrainConfig(**TINY), tmp_path)
    assert e.value.component == "seg" and "seg" in str(e.value)
    payload = read_checkpoint(tmp_path / "last_good.pt")
    assert payload["step"] == 1


def test_checkpoint_round_trip(trained, tmp_path):
    gen, payload = load_generator(trained.checkpoint_path)
    assert payload["step"] == TINY["steps"] and payload["discriminator"] is not None
    x = torch.rand(2, 3, 32, 32)
    with torch.no_grad():
        a, ca = trained.generator.eval()(x)
        b, cb = gen(x)
    assert torch.equal(a, b) and torch.equal(ca, cb)


def test_checkpoint_integrity(tmp_path):
    torch.manual_seed(0)
    path = save_checkpoint(tmp_path / "c.pt", FETGenerator())
    payload = torch.load(path, weights_only=True)
    next(iter(payload["generator"].values())).add_(1.0)
    torch.save(payload, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError, match="digest"):
        read_checkpoint(tmp_path / "bad.pt")
    (tmp_path / "junk.pt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk.pt")


# evaluation and inference

def test_evaluate_identity_stub():
    triplets = [generate_triplet(s) for s in corpus_specs(2, size=(32, 32))]
    summary, rows = evaluate(lambda x: x, [t.copy() for t in triplets])
    assert summary.mssim < 100
    clean = [t.copy() for t in triplets]
    for t in clean:
        t.input = t.gt
    summary, _ = evaluate(lambda x: x, clean)
    assert summary.psnr == math.inf and summary.mssim == pytest.approx(100.0, abs=1e-12)


def test_evaluate_untrained_and_skip_rows(trained, tmp_path):
    triplets = [generate_triplet(s) for s in corpus_specs(2, size=(32, 32))]
    triplets.append(generate_triplet(SceneSpec(seed=9, size=(40, 32))))
    summary, rows = evaluate(trained.checkpoint_path, triplets, tmp_path / "a.csv")
    assert len(rows) == 2
    assert all(math.isfinite(getattr(summary, k)) for k in ("psnr", "mssim", "mse", "age", "peps", "pceps"))
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert any("skipped" in line and "syn_000009" in line for line in lines)
    evaluate(trained.checkpoint_path, triplets, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


@pytest.mark.parametrize("size", [(32, 32), (36, 44)])
def test_infer_outputs(trained, tmp_path, size):
    img = generate_triplet(SceneSpec(seed=1, size=size)).input
    write_image(tmp_path / "in.png", img)
    paths = infer(trained.checkpoint_path, tmp_path / "in.png", tmp_path / "out", dump_features=True)
    assert len([k for k in paths if k.startswith("features_")]) == 5
    from PIL import Image

    for key in ("output", "confidence", "mask"):
        with Image.open(paths[key]) as im:
            assert im.size == (size[1], size[0])


def test_infer_unreadable(trained, tmp_path):
    with pytest.raises(OSError):
        infer(trained.checkpoint_path, tmp_path / "missing.png", tmp_path)


# ablation

def test_ablate_schema(tmp_path):
    rows = ablate(TrainConfig(**TINY), ["full", "no_fem"], tmp_path)
    with open(tmp_path / "ablation.csv") as fh:
        table = list(csv.DictReader(fh))
    assert tuple(table[0].keys()) == ABLATION_COLUMNS
    assert [r["variant"] for r in table] == ["full", "no_fem"]
    assert all(r["status"] == "ok" for r in rows)
    with pytest.raises(ValueError):
        ablate(TrainConfig(**TINY), ["bogus"], tmp_path)


def test_ablate_records_failed_row(tmp_path, monkeypatch):
    real = train_mod.train

    def failing(cfg, run_dir, triplets=None):
        if cfg.variant == "no_ftm":
            raise TrainingError("boom", component="rec")
        return real(cfg, run_dir, triplets)

    monkeypatch.setattr("fetnet.harness.ablate.train", failing)
    rows = ablate(TrainConfig(**TINY), ["no_ftm", "full"], tmp_path)
    assert rows[0]["status"].startswith("failed") and rows[1]["status"] == "ok"


# command line

def test_cli_end_to_end(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "runs"))
    data = tmp_path / "data"
    assert main(["gen-data", "--out", str(data), "--n", "2", "--size", "32"]) == 0
    assert len(list((data / "input").iterdir())) == 2
    main(["train", "--data", str(data), "--steps", "2", "--set", "batch_size=2", "--set", "image_size=32"])
    ckpt = capsys.readouterr().out.strip().splitlines()[-1]
    assert ckpt.endswith("checkpoint.pt")
    main(["eval", ckpt, str(data)])
    assert '"psnr"' in capsys.readouterr().out
    main(["infer", ckpt, str(data / "input" / "syn_000000.png"), "--dump-features"])
    assert len(capsys.readouterr().out.strip().splitlines()) == 8
    main(["ablate", "--data", str(data), "--steps", "1", "--variants", "full,no_fem",
          "--set", "batch_size=2", "--set", "image_size=32"])
    csv_path = capsys.readouterr().out.strip().splitlines()[-1]
    assert len(read_log(csv_path)) == 3
    runs = {p.name.split("-")[2] for p in (tmp_path / "runs").iterdir()}
    assert runs == {"train", "eval", "infer", "ablate"}
    for r in (tmp_path / "runs").iterdir():
        if r.name.endswith(("train", "ablate")):
            assert (r / "config.yaml").exists()


def test_augmented_training_runs(tmp_path):
    res = train(TrainConfig(**{**TINY, "steps": 2}, augment=True), tmp_path)
    assert len(res.history) == 2
    assert np.isfinite([r["total"] for r in res.history]).all()
