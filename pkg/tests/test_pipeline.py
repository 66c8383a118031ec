import dataclasses
import json

import numpy as np
import pytest

from masktts import dsp, maskkit, speaker
from masktts.enhancer import EnhancerModel, train_enhancer
from masktts.pipeline import corpus as cp
from masktts.pipeline import evaluation, stages
from masktts.pipeline.config import RunConfig, StageConfig
from masktts.pipeline.experiment import NEW_SPEAKER, build_corpus, reference_mels
from masktts.pipeline.export import read_csv, read_pgm, write_csv, write_pgm
from masktts.ttscore import TtsModel

from conftest import TINY_DOC

SMALL_DSP = dsp.DspConfig(n_mels=8)


def small_corpus(seed=0, snrs=(-5.0, 0.0, 5.0), texts=3):
    specs = cp.default_speakers(3, seed=seed)
    return cp.generate_corpus(specs, cp.random_texts(texts, 2, seed), snr_levels=snrs,
                              cfg=SMALL_DSP, symbol_frames=3, seed=seed)


@pytest.fixture(scope="module")
def corpus():
    return small_corpus()


@pytest.fixture(scope="module")
def experiment():
    """Tiny corpus plus a pretrained model, shared by the stage tests."""
    run = RunConfig.from_dict(TINY_DOC)
    c = build_corpus(run, seed=0)
    res = stages.run_pretrain(c, run, seed=0)
    return run, c, res


# ------------------------------------------------------------------ corpus

def test_corpus_is_deterministic(corpus):
    again = small_corpus()
    assert len(again.utterances) == len(corpus.utterances)
    for a, b in zip(corpus.utterances, again.utterances):
        assert a.utt_id == b.utt_id
        assert a.noisy.bins.tobytes() == b.noisy.bins.tobytes()
        assert a.mask.values.tobytes() == b.mask.values.tobytes()


def test_noisy_records_remeasure_to_their_snr(corpus):
    noisy = corpus.select(clean=False)
    assert {u.snr_db for u in noisy} == {-5.0, 0.0, 5.0}
    for u in noisy:
        assert abs(dsp.measured_snr(u.clean_wav, u.noise_wav) - u.snr_db) <= 1e-6


def test_records_are_frame_aligned(corpus):
    for u in corpus.utterances:
        assert u.n_frames == corpus.symbol_frames * len(u.symbols)
        assert u.mask.shape == u.noisy.bins.shape


def test_speakers_are_separable_by_toy_embedding():
    specs = cp.default_speakers(4)
    c = cp.generate_corpus(specs, cp.random_texts(6, 4, 1), cfg=dsp.DspConfig(), seed=1)
    embs = {s.speaker_id: [speaker.toy_embed(u.clean) for u in c.select(speaker_id=s.speaker_id,
                                                                          clean=True)]
            for s in specs}
    cents = {k: speaker.centroid(v) for k, v in embs.items()}
    within = np.mean([speaker.cosine_similarity(e, cents[k]) for k, v in embs.items() for e in v])
    between = np.mean([speaker.cosine_similarity(cents[a], cents[b])
                       for a in cents for b in cents if a != b])
    assert within > between
    for k, v in embs.items():
        for e in v:
            best = max(cents, key=lambda j: speaker.cosine_similarity(e, cents[j]))
            assert best == k


def test_generate_corpus_errors():
    specs = cp.default_speakers(2)
    with pytest.raises(ValueError):
        cp.generate_corpus(specs, [], cfg=SMALL_DSP)
    with pytest.raises(ValueError):
        cp.generate_corpus([specs[0], specs[0]], [[1, 2]], cfg=SMALL_DSP)
    with pytest.raises(ValueError):
        cp.generate_corpus(specs[:1], [[1, 2]], cfg=SMALL_DSP)
    with pytest.raises(ValueError):
        cp.generate_corpus(specs, [[1, 2]], snr_levels=(), cfg=SMALL_DSP)
    with pytest.raises(ValueError):
        cp.SyntheticSpeakerSpec("x", 60.0)


@pytest.mark.parametrize("kind", cp.NOISE_KINDS)
def test_noise_generators_are_seeded(kind):
    a = cp.make_noise(kind, 4000, rng=3).samples
    b = cp.make_noise(kind, 4000, rng=3).samples
    assert a.tobytes() == b.tobytes()
    assert np.sqrt(np.mean(a ** 2)) > 0
    with pytest.raises(ValueError):
        cp.make_noise("hum", 10)


def test_corpus_round_trip(tmp_path, corpus):
    cp.save_corpus(corpus, tmp_path)
    back = cp.load_corpus(tmp_path)
    assert [u.utt_id for u in back.utterances] == [u.utt_id for u in corpus.utterances]
    for a, b in zip(corpus.utterances, back.utterances):
        assert a.clean.bins.tobytes() == b.clean.bins.tobytes()
        assert a.noisy.bins.tobytes() == b.noisy.bins.tobytes()
        assert a.mask.kind == b.mask.kind and a.snr_db == b.snr_db
    assert back.speakers == corpus.speakers


def test_wav_only_entries_are_ingested(tmp_path, corpus):
    cp.save_corpus(corpus, tmp_path)
    index = json.loads((tmp_path / "index.json").read_text())
    for e in index["utterances"]:
        for key in ("clean_mel", "noisy_mel", "mask"):
            e["files"].pop(key, None)
    (tmp_path / "index.json").write_text(json.dumps(index))
    back = cp.load_corpus(tmp_path)
    for a, b in zip(corpus.utterances, back.utterances):
        assert b.noisy.bins.shape == a.noisy.bins.shape
        # 16-bit WAV quantisation is the only difference
        assert dsp.si_sdr_mel(a.clean, b.clean) > 40


def test_missing_clean_reference_is_an_error(tmp_path, corpus):
    cp.save_corpus(corpus, tmp_path, wavs=False)
    index = json.loads((tmp_path / "index.json").read_text())
    index["utterances"][0]["files"].pop("clean_mel")
    (tmp_path / "index.json").write_text(json.dumps(index))
    with pytest.raises(ValueError, match="clean reference"):
        cp.load_corpus(tmp_path)


def test_build_corpus_splits(tiny_run):
    c = build_corpus(tiny_run, seed=0)
    p = tiny_run.pipeline
    assert len(c.select(split="train", clean=True)) == p.n_speakers * p.texts_per_speaker
    adapt = c.select(split="adapt")
    assert len(adapt) == p.adapt_utterances and all(not u.is_clean for u in adapt)
    assert {u.speaker_id for u in adapt} == {NEW_SPEAKER}
    train_texts = {tuple(u.symbols.ids) for u in c.select(split="train")}
    assert not train_texts & {tuple(u.symbols.ids) for u in c.select(split="heldout")}
    assert {u.snr_db for u in c.select(split="enh_test")} == {-5.0, 0.0, 5.0}


# ----------------------------------------------------------------- stages

def test_clean_only_corpus_conditions_on_all_ones(tiny_run, corpus):
    clean = corpus.select(clean=True)
    embs = {s: speaker.centroid([speaker.toy_embed(u.clean) for u in clean if u.speaker_id == s])
            for s in corpus.speaker_ids()}
    examples = stages.pretrain_examples(clean, embs, tiny_run)
    for ex in examples:
        np.testing.assert_array_equal(ex.noise_rep, 4.0)
        np.testing.assert_array_equal(ex.before, ex.after)


def test_pretrain_loss_halves(experiment):
    _, _, res = experiment
    assert np.mean(res.losses[-10:]) <= 0.5 * res.losses[0]
    assert res.meta["stage"] == "pretrain"


def test_pretrain_checkpoint_reproduces_validation_loss(tmp_path, experiment):
    run, c, res = experiment
    examples = stages.pretrain_examples(c.select(split="train"), res.embeddings, run)
    res.model.save(tmp_path / "p.ckpt", res.meta)
    back, meta = TtsModel.load(tmp_path / "p.ckpt")
    assert res.meta.items() <= meta.items()
    assert stages.evaluate_loss(back, examples) == stages.evaluate_loss(res.model, examples)


def test_adapt_zero_steps_is_identity(experiment):
    run, c, res = experiment
    zero = dataclasses.replace(run.pipeline.adapt, steps=0)
    out = stages.run_adapt(res.model, res.meta, c.select(split="adapt"), run, settings=zero)
    for name in res.model.params.names():
        assert out.model.params[name].data.tobytes() == res.model.params[name].data.tobytes()
    assert out.meta["stage"] == "adapt" and out.meta["adapted"] == NEW_SPEAKER


def test_adapt_lowers_heldout_before_loss(experiment):
    run, c, res = experiment
    out = stages.run_adapt(res.model, res.meta, c.select(split="adapt"), run, seed=0)
    emb = out.embeddings[NEW_SPEAKER]
    held = stages.adapt_examples(c.select(split="heldout"), emb, run)
    before = stages.evaluate_loss(res.model, held)["before"]
    after = stages.evaluate_loss(out.model, held)["before"]
    assert after <= 0.7 * before


def test_adapt_guards(experiment):
    run, c, res = experiment
    adapt = c.select(split="adapt")
    with pytest.raises(stages.LineageError):
        stages.run_adapt(res.model, dict(res.meta, stage="adapt"), adapt, run)
    with pytest.raises(ValueError, match="seen during pretraining"):
        stages.run_adapt(res.model, res.meta, c.select(split="train", speaker_id="spk0",
                                                       clean=False), run)
    with pytest.raises(ValueError, match="noisy"):
        clean = [dataclasses.replace(u, snr_db=None, noisy=u.clean,
                                     mask=maskkit.clean_mask(*u.mask.shape)) for u in adapt]
        stages.run_adapt(res.model, res.meta, clean, run)
    with pytest.raises(ValueError):
        stages.run_adapt(res.model, res.meta, [], run)


def test_predicted_mode_needs_an_enhancer(experiment):
    run, c, _ = experiment
    predicted = dataclasses.replace(run, pipeline=dataclasses.replace(run.pipeline,
                                                                      mask_mode="predicted"))
    with pytest.raises(ValueError, match="enhancer"):
        stages.run_pretrain(c, predicted)


def test_infer_clean_mode_conditions_on_plus_four(experiment):
    run, c, res = experiment
    emb = res.embeddings["spk0"]
    syn = stages.run_infer(res.model, [16, 1, 2, 17], emb, "clean", max_frames=30)
    np.testing.assert_array_equal(syn.conditioning, 4.0)
    assert syn.n_frames <= 30
    np.testing.assert_allclose(syn.alignment.sum(-1), 1.0, atol=1e-6)
    with pytest.raises(ValueError):
        stages.run_infer(res.model, [16, 1, 17], emb, "reference")
    with pytest.raises(ValueError):
        stages.run_infer(res.model, [16, 1, 17], emb, "noisy")


def test_infer_reference_mode_changes_only_after_mel(experiment):
    _, c, res = experiment
    u = c.select(split="train", speaker_id="spk1", clean=False)[0]
    emb = res.embeddings["spk1"]
    a = stages.run_infer(res.model, u.symbols, emb, "clean", n_frames=u.n_frames)
    b = stages.run_infer(res.model, u.symbols, emb, "reference", u.mask, n_frames=u.n_frames)
    assert a.before_mel.tobytes() == b.before_mel.tobytes()
    assert not np.array_equal(a.after_mel, b.after_mel)


def test_stage_config_requires_paths(tiny_run):
    with pytest.raises(ValueError):
        StageConfig("adapt", {"corpus": "c"}, tiny_run)
    with pytest.raises(ValueError):
        StageConfig("finetune", {}, tiny_run)
    StageConfig("pretrain", {"corpus": "c"}, tiny_run)


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"extra": {}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"tts": {"n_mels": 20}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"pipeline": {"mask_mode": "oracle"}})
    cfg = RunConfig.from_dict(TINY_DOC)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


# -------------------------------------------------------------- evaluation

def test_identity_mask_reproduces_noisy_baseline(corpus):
    rows = evaluation.eval_enhancer(lambda u: np.ones(u.noisy.bins.shape), corpus.utterances)
    assert [r.snr_db for r in rows] == [-5.0, 0.0, 5.0]
    for r in rows:
        assert r.enhanced == r.noisy


def test_ideal_masks_dominate_trained_enhancer(corpus):
    model = EnhancerModel(dataclasses.replace(EnhancerModel().config, n_mels=8, channels=8,
                                              hidden=8, conv_channels=4, dfsmn_layers=1))
    from masktts.enhancer import TrainConfig
    train_enhancer(model, [(u.noisy.bins, u.clean.bins) for u in corpus.select(clean=False)],
                   TrainConfig(steps=60, batch_size=9, log_every=0))
    trained = evaluation.eval_enhancer(model, corpus.utterances)
    ideal = evaluation.eval_enhancer(lambda u: u.mask.values, corpus.utterances)
    assert len(trained) == 3
    for t, i in zip(trained, ideal):
        assert i.enhanced >= t.enhanced


def test_eval_enhancer_empty_group(corpus):
    with pytest.raises(ValueError):
        evaluation.eval_enhancer(lambda u: u.mask.values, corpus.utterances, snr_levels=(10.0,))


def test_similarity_of_training_data_with_itself(tiny_run):
    c = build_corpus(tiny_run, seed=0)
    ref = reference_mels(c, tiny_run)
    rows = evaluation.similarity_table(ref, ref)
    assert [r.speaker_id for r in rows] == list(ref)
    for r in rows:
        assert abs(r.cosine - 1.0) <= 1e-9 and r.same_speaker
    with pytest.raises(KeyError):
        evaluation.similarity_table({"ghost": ref["spk0"]}, ref)


# ------------------------------------------------------------------ export

def test_csv_fixed_point(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b", "ok"], [[1.0, -0.1234567, True], ["x", 2, False]])
    text = (tmp_path / "t.csv").read_text()
    assert text == "a,b,ok\n1.000000,-0.123457,1\nx,2,0\n"
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["a", "b", "ok"] and len(rows) == 2


def test_pgm_round_trip(tmp_path):
    grid = np.random.default_rng(0).standard_normal((5, 7))
    lo, hi = write_pgm(tmp_path / "g.pgm", grid)
    assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
    pix = read_pgm(tmp_path / "g.pgm")
    np.testing.assert_array_equal(pix, np.round((grid - lo) / (hi - lo) * 255))
    side = (tmp_path / "g.pgm.range.txt").read_text().split()
    assert float(side[1]) == pytest.approx(lo, abs=1e-6)
    assert float(side[3]) == pytest.approx(hi, abs=1e-6)
