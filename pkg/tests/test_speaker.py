import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from masktts import speaker
from masktts.speaker import DegenerateCentroid, SpeakerEmbedding


def unit(v):
    v = np.asarray(v, dtype=float)
    return SpeakerEmbedding(v / np.linalg.norm(v))


def random_units(seed, n, d=8):
    gen = np.random.default_rng(seed)
    return [unit(gen.standard_normal(d)) for _ in range(n)]


def test_toy_embed_deterministic_and_unit():
    mel = np.random.default_rng(0).uniform(1e-3, 10, (20, 40))
    a = speaker.toy_embed(np.log(mel), projection_seed=3)
    b = speaker.toy_embed(np.log(mel), projection_seed=3)
    assert a.vector.tobytes() == b.vector.tobytes()
    assert abs(np.linalg.norm(a.vector) - 1) <= 1e-9
    assert a.dim == 32


def test_toy_embed_needs_two_frames():
    with pytest.raises(ValueError):
        speaker.toy_embed(np.ones((1, 40)))


def test_centroid_cases():
    e = random_units(1, 1)[0]
    np.testing.assert_allclose(speaker.centroid([e]).vector, e.vector)
    c = speaker.centroid([unit([1, 0]), unit([0, 1])])
    np.testing.assert_allclose(c.vector, [2 ** -0.5, 2 ** -0.5])
    assert c.level == "speaker"
    with pytest.raises(DegenerateCentroid):
        speaker.centroid([unit([1, 0]), unit([-1, 0])])
    with pytest.raises(ValueError):
        speaker.centroid([])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 6), reps=st.integers(1, 3))
def test_centroid_invariances(seed, n, reps):
    es = random_units(seed, n)
    c = speaker.centroid(es)
    assert abs(np.linalg.norm(c.vector) - 1) <= 1e-9
    np.testing.assert_allclose(speaker.centroid(es[::-1]).vector, c.vector, atol=1e-12)
    np.testing.assert_allclose(speaker.centroid(es * reps).vector, c.vector, atol=1e-12)


def test_cosine_cases():
    a = unit([1, 0, 0])
    assert speaker.cosine_similarity(a, a) == pytest.approx(1.0)
    assert speaker.cosine_similarity(a, unit([0, 1, 0])) == 0.0
    with pytest.raises(ValueError):
        speaker.cosine_similarity(a, unit([1, 0]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_cosine_symmetric_and_bounded(seed):
    a, b = random_units(seed, 2, d=16)
    s = speaker.cosine_similarity(a, b)
    assert s == speaker.cosine_similarity(b, a)
    assert -1 - 1e-9 <= s <= 1 + 1e-9


def test_same_speaker_threshold():
    assert speaker.same_speaker(0.71)
    assert not speaker.same_speaker(0.69)
    assert not speaker.same_speaker(0.70)


def test_embedding_rejects_non_unit():
    with pytest.raises(ValueError):
        SpeakerEmbedding(np.array([1.0, 1.0]))


def test_embedding_file_round_trip(tmp_path):
    es = {"spk0": speaker.centroid(random_units(3, 4)), "utt1": random_units(4, 1)[0]}
    speaker.save_embeddings(tmp_path / "e.ckpt", es)
    back = speaker.load_embeddings(tmp_path / "e.ckpt")
    assert set(back) == set(es)
    assert back["spk0"].level == "speaker" and back["utt1"].level == "utterance"
    np.testing.assert_allclose(back["spk0"].vector, es["spk0"].vector, atol=1e-15)
