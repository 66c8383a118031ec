import pytest

from masktts.pipeline.config import RunConfig

# small enough that every stage finishes in seconds
TINY_DOC = {
    "dsp": {"n_mels": 8},
    "enhancer": {"conv_channels": 6, "channels": 8, "hidden": 12, "dfsmn_layers": 1,
                 "lookback": 2, "lookahead": 1,
                 "train": {"steps": 80, "batch_size": 8, "lr": 5e-3, "log_every": 0}},
    "tts": {"embed_dim": 8, "enc_prenet": 12, "spk_highway": 4, "highway_layers": 1,
            "enc_rnn": 6, "dec_prenet": 12, "att_rnn": 16, "dec_rnn": 16, "mixtures": 2,
            "postnet_channels": 8, "init_kappa_step": 0.67, "max_frames": 40},
    "pipeline": {"n_speakers": 2, "texts_per_speaker": 4, "text_length": 2, "symbol_frames": 3,
                 "adapt_utterances": 4, "heldout_texts": 2, "enh_test_per_snr": 2,
                 "mask_mode": "ideal",
                 "pretrain": {"steps": 150, "lr": 5e-3, "batch_size": 8, "log_every": 0},
                 "adapt": {"steps": 60, "lr": 2e-3, "batch_size": 4, "log_every": 0}},
}


@pytest.fixture
def tiny_run() -> RunConfig:
    return RunConfig.from_dict(TINY_DOC)


# acceptance criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
