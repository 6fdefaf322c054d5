import dataclasses

import numpy as np
import pytest

from upre.config import Stage1Config, Stage2Config, Toggles, TrainConfig, config_hash
from upre.enhancement import init_enhance_params
from upre.errors import ConfigError, InputError, StateError
from upre.pipeline import (
    AblationRow,
    AblationSpec,
    PRESET_ROWS,
    ablation_table,
    apply_deltas,
    box_deltas,
    build_prompt_set,
    build_prompt_table,
    run_ablation,
    run_full,
    stage1_train,
    stage2_finetune,
    zero_shot_eval,
)
from upre.prompts import init_prompt_params
from upre.world import WorldConfig, build_stub, generate_world


TINY = TrainConfig(
    stage1=Stage1Config(iters=30, lr=0.05, lr_drop_iter=25),
    stage2=Stage2Config(iters=40, lr=2.0, lr_drop_iter=32),
    batch_size=1,
    val_interval=10,
    val_scenes=2,
    pns_proposals=4,
    stage2_proposals=4,
    eval_scenes=4,
    eval_proposals=6,
)


@pytest.fixture(scope="module")
def world():
    return generate_world(WorldConfig(), seed=3)


@pytest.fixture(scope="module")
def stub(world):
    return build_stub(world.config)


def test_stage1_toggle_validation(world, stub):
    with pytest.raises(ConfigError):
        stage1_train(dataclasses.replace(TINY, toggles=Toggles(False, False, False, False)), world, stub)
    with pytest.raises(ConfigError):
        stage1_train(dataclasses.replace(TINY, toggles=Toggles(True, True, False, False)), world, stub)
    with pytest.raises(ConfigError):
        stage1_train(dataclasses.replace(TINY, rdd_mask=()), world, stub)
    with pytest.raises(ConfigError):
        stage1_train(dataclasses.replace(TINY, target_domain="atlantis"), world, stub)


def test_stage1_reports_and_additivity(world, stub):
    pparams, eparams, rep = stage1_train(TINY, world, stub)
    assert rep.kind == "stage1"
    assert rep.config_hash == config_hash(TINY)
    n = len(rep.loss_history["total"])
    assert n == TINY.stage1.iters
    for i in range(n):
        parts = sum(
            rep.loss_history[t][i] for t in ("align", "semantic", "relative", "instance")
        )
        assert rep.loss_history["total"][i] == pytest.approx(parts, abs=1e-9)
    assert rep.counters["pns_batches"] == TINY.stage1.iters
    assert rep.mad_of_validation_loss is not None
    assert len(rep.val_history["total"]) == TINY.stage1.iters // TINY.val_interval


def test_stage1_determinism(world, stub):
    _, e1, r1 = stage1_train(TINY, world, stub)
    _, e2, r2 = stage1_train(TINY, world, stub)
    assert r1.loss_history == r2.loss_history
    assert e1.params_hash() == e2.params_hash()


def test_stage1_static_and_frozen_is_constant(world, stub):
    cfg = dataclasses.replace(
        TINY,
        prompt_mode="static_complete",
        toggles=Toggles(prompt_on=False, enhance_on=False, img_level_on=True, ins_level_on=False),
    )
    _, _, rep = stage1_train(cfg, world, stub)
    # nothing is trainable, so the fixed validation scenes always score the same
    totals = rep.val_history["total"]
    assert max(totals) - min(totals) < 1e-12


def test_stage1_ins_off_builds_no_pns_batches(world, stub):
    cfg = dataclasses.replace(TINY, toggles=Toggles(True, True, True, False))
    _, _, rep = stage1_train(cfg, world, stub)
    assert rep.counters["pns_batches"] == 0
    assert "instance" not in rep.loss_history


def test_box_delta_roundtrip():
    prop = (2.0, 3.0, 10.0, 11.0)
    gt = (3.0, 2.5, 11.0, 12.5)
    deltas = box_deltas(prop, gt)
    back = apply_deltas(prop, deltas, width=28.0, height=28.0)
    assert np.allclose(back, gt, atol=1e-9)
    assert np.allclose(box_deltas(prop, prop), 0.0)


def test_stage2_freeze_contract_and_counters(world, stub):
    pparams, eparams, _ = stage1_train(TINY, world, stub)
    ph, eh, sh = pparams.params_hash(), eparams.params_hash(), stub.params_hash()
    head, rep = stage2_finetune(TINY, pparams, eparams, world, stub)
    assert pparams.params_hash() == ph
    assert eparams.params_hash() == eh
    assert stub.params_hash() == sh
    assert rep.frozen_hashes["before"] == rep.frozen_hashes["after"]
    assert rep.counters["enhance_draws"] == TINY.stage2.iters * TINY.batch_size
    assert head.w_reg.shape == (4, stub.d_emb)
    assert head.roi_projection.shape == stub.roi_projection.shape
    # the finetunable copy moved; the stub's own projection did not
    assert not np.array_equal(head.roi_projection.values, stub.roi_projection)


def test_stage2_requires_stage1_params(world, stub):
    with pytest.raises(StateError):
        stage2_finetune(TINY, None, None, world, stub)


def test_stage2_enhance_off_never_draws(world, stub):
    cfg = dataclasses.replace(TINY, toggles=Toggles(False, False, False, False))
    pparams = init_prompt_params(2, 32, seed=0, mode="static_complete")
    eparams = init_enhance_params(stub.channels, (7, 7))
    head, rep = stage2_finetune(cfg, pparams, eparams, world, stub)
    assert rep.counters["enhance_draws"] == 0
    assert rep.counters["enhance_applied"] == 0


def test_zero_shot_eval_contract(world, stub):
    pparams, eparams, _ = stage1_train(TINY, world, stub)
    head, _ = stage2_finetune(TINY, pparams, eparams, world, stub)
    rep1 = zero_shot_eval(head, pparams, eparams, world, "night_rainy", TINY, stub)
    rep2 = zero_shot_eval(head, pparams, eparams, world, "night_rainy", TINY, stub)
    assert rep1.counters["ure_invocations"] == 0
    assert rep1.metrics == rep2.metrics
    assert 0.0 <= rep1.metrics["map"] <= 1.0
    with pytest.raises(InputError):
        zero_shot_eval(head, pparams, eparams, world, "atlantis", TINY, stub)


def test_prompt_table_structure(world, stub):
    pparams = init_prompt_params(2, 32, seed=5)
    table = build_prompt_table(pparams, stub, world, "night_rainy")
    assert table.categories == world.categories
    assert table.background_index == len(world.categories)
    assert table.y_bg == pytest.approx(1 / 8)
    pset = build_prompt_set(pparams, stub, world, "night_rainy")
    assert pset.image_source.context is pset.image_target.context


def test_run_full_baseline_skips_stage1(world, stub):
    cfg = dataclasses.replace(TINY, toggles=Toggles(False, False, False, False))
    res = run_full(cfg, world, stub)
    assert res.stage1_report is None
    assert res.eval_reports["night_rainy"].counters["ure_invocations"] == 0
    full = run_full(TINY, world, stub)
    assert full.stage1_report is not None


def test_run_ablation_single_cell(world):
    from upre.config import CliConfig

    base = CliConfig(train=TINY, world_seed=3)
    spec = AblationSpec(base, seeds=(0,), rows=(AblationRow("only", {}),))
    results = run_ablation(spec)
    assert len(results) == 1
    assert results[0].row_id == "only"
    table = ablation_table(results, ("night_rainy",))
    assert table[0] == ["config_id", "seed", "map_night_rainy", "mad"]
    assert len(table) == 4  # header + 1 run + mean + mad
    assert table[2][1] == "mean"
    assert table[3][1] == "mad"
    with pytest.raises(ConfigError):
        AblationSpec(base, seeds=(), rows=(AblationRow("x", {}),)).validate()
    with pytest.raises(ConfigError):
        AblationSpec(base, seeds=(1,), rows=()).validate()


def test_preset_rows_cover_ablation_axes():
    assert {r.row_id for r in PRESET_ROWS["rdd"]} == {"rdd_a", "rdd_as", "rdd_r", "rdd_asr"}
    assert len(PRESET_ROWS["pns"]) == 4
    assert len(PRESET_ROWS["schedule"]) == 4
    assert len(PRESET_ROWS["prompt"]) == 5
    assert len(PRESET_ROWS["enhance"]) == 4
    assert len(PRESET_ROWS["modules"]) == 6


def test_stage1_align_descends_across_seeds(world, stub):
    # align + semantic: the align term trains the prompt context freely; the
    # full three-term mask instead settles into the contradictory-losses
    # equilibrium where align plateaus (see the stability ordering tests)
    cfg = dataclasses.replace(
        TINY,
        stage1=Stage1Config(iters=250, lr=0.05, lr_drop_iter=225),
        batch_size=2,
        val_scenes=4,
        rdd_mask=("align", "semantic"),
        toggles=Toggles(True, True, True, False),
    )
    wins = 0
    for seed in range(5):
        _, _, rep = stage1_train(dataclasses.replace(cfg, seed=seed), world, stub)
        h = rep.loss_history["align"]
        wins += int(np.mean(h[-25:]) < np.mean(h[:25]))
    assert wins >= 4


def test_stage2_regression_descends_across_seeds(world, stub):
    from upre.prompts import init_prompt_params

    cfg = dataclasses.replace(TINY, stage2=Stage2Config(iters=150, lr=2.0, lr_drop_iter=120))
    wins = 0
    for seed in range(5):
        pparams = init_prompt_params(2, 32, seed=seed)
        eparams = init_enhance_params(stub.channels, (7, 7))
        _, rep = stage2_finetune(dataclasses.replace(cfg, seed=seed), pparams, eparams, world, stub)
        h = rep.loss_history["regression"]
        tenth = max(1, len(h) // 10)
        wins += int(np.mean(h[-tenth:]) < np.mean(h[:tenth]))
    assert wins >= 4


def test_static_prompt_modes_never_update_params(world, stub):
    cfg = dataclasses.replace(TINY, prompt_mode="static_complete")
    pparams, _, _ = stage1_train(cfg, world, stub)
    from upre.rng import derive_seed

    ref = init_prompt_params(cfg.context_length, 32, derive_seed(cfg.seed, "prompt_init"), "static_complete")
    assert pparams.params_hash() == ref.params_hash()


def test_upre_threads_matches_serial(world, monkeypatch):
    from upre.config import CliConfig

    base = CliConfig(train=TINY, world_seed=3)
    spec = AblationSpec(base, seeds=(0, 1), rows=(AblationRow("full", {}),))
    monkeypatch.delenv("UPRE_THREADS", raising=False)
    serial = run_ablation(spec)
    monkeypatch.setenv("UPRE_THREADS", "2")
    threaded = run_ablation(spec)
    assert [(r.row_id, r.seed, r.maps) for r in serial] == [
        (r.row_id, r.seed, r.maps) for r in threaded
    ]


def test_alternating_schedule_swaps_groups(world, stub):
    cfg = dataclasses.replace(TINY, schedule_mode="alternating", run_steps=10)
    pparams, eparams, rep = stage1_train(cfg, world, stub)
    assert len(rep.loss_history["total"]) == cfg.stage1.iters
    # run_steps beyond total iterations trains only the first (enhancement) group
    cfg2 = dataclasses.replace(TINY, schedule_mode="alternating", run_steps=1000)
    pparams2, _, _ = stage1_train(cfg2, world, stub)
    fresh = init_prompt_params(cfg2.context_length, 32, seed=0)
    init = init_prompt_params(
        cfg2.context_length, 32,
        seed=0, mode=cfg2.prompt_mode,
    )
    # prompt context must be bit-identical to its init (never stepped)
    from upre.rng import derive_seed

    ref = init_prompt_params(cfg2.context_length, 32, derive_seed(cfg2.seed, "prompt_init"), cfg2.prompt_mode)
    assert pparams2.u.values.tobytes() == ref.u.values.tobytes()
    assert pparams2.v.values.tobytes() == ref.v.values.tobytes()
