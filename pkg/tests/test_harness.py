"""Training-harness tests: determinism, zero-step training, divergence
handling, linear probing, the ablation lattice, and run-record plumbing."""

import dataclasses
import json
import warnings

import numpy as np
import pytest

from tscl.augment import AugmentParams, TimeSeriesBatch
from tscl.data import SynthSpec, generate, split_labels, stratified_split
from tscl.errors import ParameterError, TrainingDivergedError
from tscl.harness import (
    VARIANTS,
    ClassLossGap,
    EpochStats,
    RunRecord,
    TrainConfig,
    class_loss_csv,
    linear_probe,
    load_run_record,
    model_config_for,
    pretrain,
    run_experiment,
    save_run_record,
    track_class_losses,
)
from tscl.model import init_model, save_values
from tscl.optim import AdamConfig

IDENTITY_AUGMENT = AugmentParams(
    weak_jitter=0.0, weak_scale=0.0, strong_jitter=0.0, max_segments=1
)


def small_config(**overrides) -> TrainConfig:
    defaults = dict(
        variant="full",
        epochs=2,
        batch_size=16,
        embed_dim=8,
        conv_channels=(4, 8),
        seeds=(0,),
        label_fraction=0.4,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def balanced_data() -> TimeSeriesBatch:
    spec = SynthSpec(class_counts=(30, 30, 30, 30), length=32, channels=1,
                     noise_sigma=0.15, seed=9)
    return generate(spec)


@pytest.fixture(scope="module")
def labeled_split(balanced_data):
    train, test = stratified_split(balanced_data, 0.2, np.random.default_rng(4))
    train = split_labels(train, 0.4, np.random.default_rng(5))
    return train, test


# ---------------------------------------------------------------------------
# Configuration and variants


def test_variant_lattice_members():
    assert set(VARIANTS) == {
        "mlp_id", "mlp_mid", "mlp_mid_id", "gcn_id", "gcn_mid", "gcn_mid_id", "full",
    }
    full = VARIANTS["full"]
    assert (full.head, full.use_mid, full.use_id, full.use_cc) == ("gcn", True, True, True)
    baseline = VARIANTS["mlp_id"]
    assert (baseline.head, baseline.use_mid, baseline.use_id, baseline.use_cc) == (
        "mlp", False, True, False,
    )
    assert all(v.use_mid or v.use_id for v in VARIANTS.values())
    assert not any(v.use_cc for name, v in VARIANTS.items() if name != "full")


def test_projection_parameter_counts_match_across_heads(balanced_data):
    mlp = init_model(
        model_config_for(small_config(variant="mlp_id"), balanced_data),
        np.random.default_rng(0),
    )
    gcn = init_model(
        model_config_for(small_config(variant="gcn_id"), balanced_data),
        np.random.default_rng(0),
    )
    assert mlp.projection.parameter_count == gcn.projection.parameter_count


def test_config_validation():
    with pytest.raises(ParameterError, match="unknown variant"):
        TrainConfig(variant="resnet")
    with pytest.raises(ParameterError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ParameterError, match="batch size"):
        TrainConfig(batch_size=1)
    with pytest.raises(ParameterError, match="seeds"):
        TrainConfig(seeds=())
    with pytest.raises(ParameterError, match="nonnegative"):
        TrainConfig(lr=-1.0)
    with pytest.raises(ParameterError, match="label fraction"):
        TrainConfig(label_fraction=0.0)


def test_config_dict_round_trip():
    config = small_config(augment=AugmentParams(weak_jitter=0.02), seeds=(3, 4))
    assert TrainConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ParameterError, match="unknown config fields"):
        TrainConfig.from_dict({"momentum": 0.9})


def test_model_config_inference(balanced_data):
    mc = model_config_for(small_config(variant="mlp_id"), balanced_data)
    assert mc.n_classes == 4
    assert mc.head == "mlp"
    assert mc.in_channels == balanced_data.channels
    assert mc.length == balanced_data.length


# ---------------------------------------------------------------------------
# Pretraining behavior


def test_zero_lr_identity_augment_keeps_parameters_and_losses(labeled_split):
    # One full batch per epoch: the contrastive losses depend on batch
    # composition, so constant-loss checks need the shuffle to act only as
    # a within-batch permutation (which the losses are invariant to).
    train, _ = labeled_split
    config = small_config(
        epochs=3, lr=0.0, weight_decay=0.0, augment=IDENTITY_AUGMENT, variant="full",
        batch_size=train.n,
    )
    before = init_model(
        model_config_for(config, train),
        np.random.default_rng(np.random.SeedSequence(0).spawn(2)[0]),
    )
    params, record = pretrain(config, train, seed=0)
    for name, node in params.named().items():
        np.testing.assert_array_equal(
            node.value.array, before.named()[name].value.array
        )
    losses = [s.combined for s in record.epoch_stats]
    assert max(losses) - min(losses) < 1e-9


def test_loss_decreases_over_training(labeled_split):
    train, _ = labeled_split
    config = small_config(variant="mlp_id", epochs=12, lr=3e-3)
    for seed in range(3):
        _, record = pretrain(config, train, seed=seed)
        assert record.epoch_stats[-1].combined < record.epoch_stats[0].combined


def test_rerun_is_bit_identical(labeled_split):
    train, _ = labeled_split
    config = small_config()
    params1, record1 = pretrain(config, train, seed=2)
    params2, record2 = pretrain(config, train, seed=2)
    assert record1.to_json() == record2.to_json()
    for name, node in params1.named().items():
        np.testing.assert_array_equal(
            node.value.array, params2.named()[name].value.array
        )


def test_record_history_matches_epochs(labeled_split):
    train, _ = labeled_split
    config = small_config(epochs=4)
    _, record = pretrain(config, train, seed=0)
    assert len(record.epoch_stats) == 4
    assert [s.epoch for s in record.epoch_stats] == [1, 2, 3, 4]
    assert record.seed == 0
    assert record.variant == "full"
    assert record.final_metrics is None
    for stat in record.epoch_stats:
        assert set(stat.class_mean_loss) == {0, 1, 2, 3}
        assert set(stat.components) == {"MID", "ID", "CC_h", "CC_z"}


def test_component_gating_follows_variant(labeled_split):
    train, _ = labeled_split
    expectations = {
        "mlp_id": {"ID"},
        "gcn_mid": {"MID"},
        "gcn_mid_id": {"MID", "ID"},
        "full": {"MID", "ID", "CC_h", "CC_z"},
    }
    for variant, active in expectations.items():
        _, record = pretrain(small_config(variant=variant, epochs=1), train, seed=0)
        components = record.epoch_stats[0].components
        for name, value in components.items():
            if name in active:
                assert value > 0.0, f"{variant}: {name} should be active"
            else:
                assert value == 0.0, f"{variant}: {name} should be disabled"


def test_divergence_aborts_with_last_good_epoch():
    data = generate(
        SynthSpec(class_counts=(12, 12), length=16, channels=1, noise_sigma=0.05, seed=0)
    )
    config = TrainConfig(
        variant="mlp_id", epochs=3, batch_size=8, embed_dim=4, conv_channels=(4,),
        lr=1e80, weight_decay=0.0, seeds=(1,),
    )
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDivergedError) as excinfo:
            pretrain(config, data, seed=1)
    assert excinfo.value.last_good_epoch == 0
    assert "epoch 1" in str(excinfo.value)


def test_single_leftover_sample_is_dropped():
    data = generate(
        SynthSpec(class_counts=(3, 2), length=16, channels=1, noise_sigma=0.1, seed=2)
    )
    config = TrainConfig(
        variant="mlp_id", epochs=1, batch_size=4, embed_dim=4, conv_channels=(4,),
        seeds=(0,),
    )
    _, record = pretrain(config, data, seed=0)
    assert len(record.epoch_stats) == 1


def test_dataset_preconditions():
    data = generate(
        SynthSpec(class_counts=(4, 4), length=16, channels=1, noise_sigma=0.1, seed=0)
    )
    with pytest.raises(ParameterError, match="exceeds dataset size"):
        pretrain(small_config(batch_size=64), data)


# ---------------------------------------------------------------------------
# Linear probe


def test_probe_perfectly_separable_data_scores_one():
    # Zero noise collapses each class onto a single template, so even an
    # untrained encoder maps each class to one point and a linear head
    # separates them exactly.
    data = generate(
        SynthSpec(class_counts=(20, 20), length=32, channels=1, noise_sigma=0.0, seed=6)
    )
    train, test = stratified_split(data, 0.25, np.random.default_rng(0))
    train = split_labels(train, 0.5, np.random.default_rng(1))
    config = small_config(variant="mlp_id")
    mc = model_config_for(config, train)
    params = init_model(mc, np.random.default_rng(3))
    _, report = linear_probe(params, mc, train, test, epochs=300, lr=0.05)
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0


def test_probe_random_labels_scores_chance_level():
    # Labels carry no information about the series, so accuracy over a few
    # seeds must hover around 1/C = 0.25.
    accuracies = []
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        n_train, n_test, width = 240, 400, 32
        train = TimeSeriesBatch(
            values=rng.standard_normal((n_train, width)),
            labels=rng.integers(0, 4, n_train),
            label_mask=np.ones(n_train, dtype=bool),
            channels=1,
            length=width,
        )
        test = TimeSeriesBatch(
            values=rng.standard_normal((n_test, width)),
            labels=rng.integers(0, 4, n_test),
            label_mask=np.ones(n_test, dtype=bool),
            channels=1,
            length=width,
        )
        config = small_config(variant="mlp_id", embed_dim=8)
        mc = dataclasses.replace(model_config_for(config, train), n_classes=4)
        params = init_model(mc, np.random.default_rng(seed))
        _, report = linear_probe(params, mc, train, test, epochs=100, lr=0.02)
        accuracies.append(report.accuracy)
    assert abs(float(np.mean(accuracies)) - 0.25) < 0.05


def test_probe_never_touches_encoder_bytes(labeled_split, tmp_path):
    train, test = labeled_split
    config = small_config(variant="mlp_id")
    mc = model_config_for(config, train)
    params = init_model(mc, np.random.default_rng(8))
    before = tmp_path / "before.json"
    after = tmp_path / "after.json"
    save_values({n: node.value for n, node in params.named().items()}, before)
    linear_probe(params, mc, train, test, epochs=20, lr=0.05)
    save_values({n: node.value for n, node in params.named().items()}, after)
    assert before.read_bytes() == after.read_bytes()


def test_probe_warns_when_class_has_no_labeled_rows(labeled_split):
    train, test = labeled_split
    config = small_config(variant="mlp_id")
    mc = model_config_for(config, train)
    params = init_model(mc, np.random.default_rng(8))
    masked = train.with_mask(train.label_mask & (train.labels != 3))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        linear_probe(params, mc, masked, test, epochs=5, lr=0.05)
    assert len(caught) == 1
    assert "absent" in str(caught[0].message)
    assert "[3]" in str(caught[0].message)


def test_probe_requires_labels_and_eval_data(labeled_split):
    train, test = labeled_split
    config = small_config(variant="mlp_id")
    mc = model_config_for(config, train)
    params = init_model(mc, np.random.default_rng(8))
    unlabeled = train.with_mask(np.zeros(train.n, dtype=bool))
    with pytest.raises(ParameterError, match="labeled"):
        linear_probe(params, mc, unlabeled, test)
    with pytest.raises(ParameterError, match="epochs"):
        linear_probe(params, mc, train, test, epochs=0)


def test_run_experiment_fills_final_metrics(labeled_split):
    train, test = labeled_split
    config = small_config(variant="mlp_id", epochs=2)
    _, record = run_experiment(config, train, test, seed=0, probe_epochs=50)
    assert record.final_metrics is not None
    assert 0.0 <= record.final_metrics["accuracy"] <= 1.0
    assert record.final_metrics["metric_scale"] == "fraction"
    assert set(record.final_metrics["per_class"]) == {"0", "1", "2", "3"}


# ---------------------------------------------------------------------------
# Records, tracking, serialization


def _toy_record() -> RunRecord:
    stats = tuple(
        EpochStats(
            epoch=e,
            combined=3.0 - 0.1 * e,
            components={"ID": 3.0 - 0.1 * e},
            class_mean_loss={0: 3.0 - 0.05 * e, 1: 2.9 - 0.1 * e, 3: 2.8 - 0.2 * e},
        )
        for e in (1, 2, 3)
    )
    return RunRecord(seed=5, variant="mlp_id", config={"epochs": 3}, epoch_stats=stats)


def test_track_class_losses_defaults_to_extreme_classes():
    gaps = track_class_losses(_toy_record())
    assert [g.epoch for g in gaps] == [1, 2, 3]
    # Majority defaults to the smallest class index, minority to the largest.
    assert gaps[0].majority_mean == pytest.approx(2.95)
    assert gaps[0].minority_mean == pytest.approx(2.6)
    assert gaps[0].gap == pytest.approx(2.95 - 2.6)
    explicit = track_class_losses(_toy_record(), majority_class=0, minority_class=1)
    assert explicit[2].gap == pytest.approx((3.0 - 0.15) - (2.9 - 0.3))


def test_track_class_losses_validates_classes():
    record = _toy_record()
    with pytest.raises(ParameterError, match="lacks a mean loss"):
        track_class_losses(record, minority_class=2)
    empty = RunRecord(seed=0, variant="mlp_id", config={}, epoch_stats=())
    with pytest.raises(ParameterError, match="no epoch statistics"):
        track_class_losses(empty)


def test_class_loss_csv_layout():
    text = class_loss_csv(_toy_record())
    lines = text.split("\r\n")
    assert lines[0] == "epoch,class,mean_loss"
    assert lines[1] == f"1,0,{2.95!r}"
    # 3 epochs x 3 classes plus header and the trailing newline split.
    assert len([l for l in lines if l]) == 10


def test_run_record_json_round_trip(tmp_path):
    record = _toy_record().with_metrics({"accuracy": 0.5, "macro_f1": 0.4})
    path = tmp_path / "record.json"
    save_run_record(record, str(path))
    loaded = load_run_record(str(path))
    assert loaded == record
    assert loaded.to_json() == record.to_json()
    parsed = json.loads(path.read_text())
    assert parsed["metric_scale"] == "fraction"
