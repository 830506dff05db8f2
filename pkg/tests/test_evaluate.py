"""Evaluation-harness tests on micro models (desk-scale behavior is covered
by the acceptance suite)."""

import numpy as np
import pytest

from advspeaker import data as dt
from advspeaker import evaluate as ev
from advspeaker import model as mdl
from advspeaker import training as tr
from advspeaker.attacks import AttackSpec, pgd_spec
from advspeaker.frontend import FrontendConfig
from advspeaker.losses import LossWeights

MICRO_FE = FrontendConfig(sample_rate=4000, window_length=128, hop_length=64,
                          fft_size=128, mel_bins=12, log_floor=1e-6)
MICRO_CNN = mdl.SpeakerCNNConfig(num_stacks=2, channels=(8, 8), kernel_size=5,
                                 pool_every=2, num_speakers=3)
MICRO_SYNTH = dt.SynthConfig(num_speakers=3, utterances_per_speaker=10,
                             duration_s=0.2, sample_rate=4000, seed=31)


@pytest.fixture(scope="module")
def corpus():
    return dt.synth_corpus(MICRO_SYNTH)


@pytest.fixture(scope="module")
def trained(corpus):
    params = mdl.build(MICRO_CNN, MICRO_FE, seed=1)
    config = tr.TrainConfig(epochs=15, batch_size=9, lr_schedule=((60, 0.1),),
                            defense="standard", segment_length=800)
    tr.fit(params, corpus, config, seed=2)
    return params


def test_zero_budget_point_equals_clean_accuracy(corpus, trained):
    clean = ev.clean_accuracy(trained, corpus, batch_size=16)
    curve = ev.epsilon_sweep(trained, corpus, [0.0, 0.002], pgd_spec(0.002, 2),
                             batch_size=16)
    assert curve[0] == (0.0, clean)
    assert len(curve) == 2


def test_untrained_models_sit_at_chance_level_on_average():
    # a single random init can permute classes systematically, so the
    # chance-level oracle is the mean over random initializations
    synth = dt.SynthConfig(num_speakers=10, utterances_per_speaker=20,
                           duration_s=0.2, sample_rate=4000, seed=37)
    balanced = dt.synth_corpus(synth)
    seeds = range(1000, 1010)
    clean = [ev.clean_accuracy(mdl.build(mdl.SpeakerCNNConfig.tiny(10), MICRO_FE, s),
                               balanced, batch_size=32, split="train") for s in seeds]
    assert abs(np.mean(clean) - 100.0 / 10) <= 5.0
    fgsm = AttackSpec(LossWeights(1, 0, 0), 0.002, 0.002, 1, False)
    attacked = [ev.accuracy_under_attack(
        mdl.build(mdl.SpeakerCNNConfig.tiny(10), MICRO_FE, s), balanced, fgsm,
        batch_size=32, split="train")[0] for s in seeds]
    assert abs(np.mean(attacked) - 100.0 / 10) <= 5.0


def test_transfer_with_source_equal_target_matches_white_box(corpus, trained):
    spec = pgd_spec(0.002, 2)
    white, _ = ev.accuracy_under_attack(trained, corpus, spec, batch_size=16, seed=5)
    degenerate = ev.transfer_eval(trained, trained, corpus, spec, batch_size=16, seed=5)
    assert white == degenerate


def test_transfer_from_untrained_source_barely_moves_target(corpus, trained):
    clean = ev.clean_accuracy(trained, corpus, batch_size=16)
    random_source = mdl.build(MICRO_CNN, MICRO_FE, seed=99)
    acc = ev.transfer_eval(random_source, trained, corpus, pgd_spec(0.002, 3),
                           batch_size=16, seed=6)
    assert abs(acc - clean) <= 3.0 + 1e-9


def test_iteration_sweep_first_point_is_one_full_step(corpus, trained):
    template = pgd_spec(0.002, 10)
    curve = ev.iteration_sweep(trained, corpus, [1, 2], template, batch_size=16, seed=7)
    one_step = AttackSpec(LossWeights(1, 0, 0), 0.002, alpha=0.002,
                          iterations=1, random_init=True)
    expected, _ = ev.accuracy_under_attack(trained, corpus, one_step,
                                           batch_size=16, seed=7)
    assert curve[0] == (1, expected)


def test_report_hash_excludes_timestamps(corpus, trained):
    def make(created):
        report = ev.RobustnessReport("m", "cfg", corpus.fingerprint, 3,
                                     created_utc=created)
        report.entries.append(ev.ReportEntry("clean", 98.0, None, None, 3))
        return report

    a, b = make("2026-01-01T00:00:00+00:00"), make("2026-02-02T09:09:09+00:00")
    assert a.content_hash() == b.content_hash()
    c = make("2026-01-01T00:00:00+00:00")
    c.entries[0].accuracy = 97.0
    assert c.content_hash() != a.content_hash()
    assert "content_hash" in a.to_jsonl()
    assert "clean" in a.render_table()


def test_curve_csv_layout():
    csv = ev.curve_csv([(0.001, 88.0), (0.002, 71.5)], "pgd", 3, header_note="fp=abc")
    lines = csv.strip().splitlines()
    assert lines[0] == "# fp=abc"
    assert lines[1] == "x,accuracy,attack,seed"
    assert lines[2] == "0.001,88.00,pgd,3"


def test_ablation_grid_structure_and_weight_audit(corpus):
    base = tr.TrainConfig(epochs=1, batch_size=9, lr_schedule=((60, 0.1),),
                          defense="hat",
                          attack=AttackSpec(LossWeights(1, 1, 1), 0.002, 0.0004,
                                            iterations=1, random_init=True),
                          segment_length=800)
    rows = ev.ablation_grid(corpus, lambda: mdl.build(MICRO_CNN, MICRO_FE, seed=3),
                            base, seed=4, eval_iterations=1, batch_size=16)
    assert len(rows) == 7
    assert {r.subset for r in rows} == {"CE", "FS", "M", "CE+FS", "CE+M", "FS+M", "CE+FS+M"}
    full = [r for r in rows if r.subset == "CE+FS+M"][0]
    assert full.pgd_delta_vs_full == 0.0 and full.cw_delta_vs_full == 0.0
    for row in rows:
        for record in row.records:
            assert record.attack_weights == row.weights  # consumed declared weights
    csv = ev.ablation_csv(rows)
    assert csv.splitlines()[0].startswith("subset,beta,gamma,zeta")
    assert len(csv.strip().splitlines()) == 8


def test_masking_checks_structure_and_degenerate_source(corpus, trained):
    checks = ev.masking_checks(trained, {"self": trained}, corpus,
                               epsilon=0.002, iterations=2, large_epsilon=0.2,
                               batch_size=16, seed=8)
    assert checks.black_box_not_weaker  # source == target -> equality case
    assert set(checks.evidence) >= {"white_box_pgd", "white_box_fgsm",
                                    "transfer_pgd", "large_epsilon_accuracy"}


def test_scrambled_gradients_fail_the_iterative_check(corpus, trained):
    # the control leaves forward values intact but randomizes the waveform
    # adjoint; one-step attacks then beat iterative ones
    override = ev.scrambled_gradient_forward(trained, scramble_seed=5)
    checks = ev.masking_checks(trained, {}, corpus, epsilon=0.05, iterations=10,
                               batch_size=16, seed=9, split="all",
                               forward_override=override)
    assert not checks.iterative_at_least_one_step
    healthy = ev.masking_checks(trained, {}, corpus, epsilon=0.05, iterations=10,
                                batch_size=16, seed=9, split="all")
    assert healthy.iterative_at_least_one_step
