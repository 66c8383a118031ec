"""Command line entry point.

All subcommands share one working directory (``--out-dir``) and read the
outputs of earlier stages from it unless explicit paths are given::

    masktts datagen --config run.json --out-dir work
    masktts train-enhancer --out-dir work
    masktts eval-enhancer --out-dir work
    masktts pretrain --out-dir work
    masktts adapt --out-dir work
    masktts synth --out-dir work
    masktts eval-similarity --out-dir work
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp, maskkit, speaker
from .enhancer import EnhancerModel, train_enhancer
from .pipeline import evaluation
from .pipeline.config import RunConfig, StageConfig, load_config
from .pipeline.corpus import Corpus, augment, load_corpus, save_corpus
from .pipeline.experiment import build_corpus, reference_mels
from .pipeline.export import write_csv, write_pgm
from .pipeline.stages import run_adapt, run_infer, run_pretrain
from .ttscore.model import SymbolSequence, TtsModel

log = logging.getLogger("masktts")

CORPUS = "corpus"
ENHANCER = "enhancer.ckpt"
PRETRAIN = "tts_pretrain.ckpt"
ADAPTED = "tts_adapt.ckpt"
SPEAKERS = "speakers.ckpt"
SYNTH = "synth"


def _path(args, name: str, default: str) -> Path:
    given = getattr(args, name, None)
    return Path(given) if given else Path(args.out_dir) / default


def _enhancer_if_needed(args, run: RunConfig) -> EnhancerModel | None:
    if run.pipeline.mask_mode == "ideal":
        return None
    path = _path(args, "enhancer", ENHANCER)
    if not path.exists():
        raise SystemExit(f"{path} not found: run train-enhancer first or set "
                         f"pipeline.mask_mode to 'ideal'")
    return EnhancerModel.load(path)


def _loss_csv(path: Path, losses: list[float]) -> None:
    write_csv(path, ["step", "loss"], [[i, v] for i, v in enumerate(losses)])


def cmd_datagen(args, run: RunConfig) -> None:
    corpus = build_corpus(run, args.seed)
    save_corpus(corpus, _path(args, "corpus", CORPUS), wavs=not args.no_wav)
    print(f"wrote {len(corpus.utterances)} records to {_path(args, 'corpus', CORPUS)}")


def cmd_augment(args, run: RunConfig) -> None:
    src = load_corpus(args.input, with_wavs=True)
    clean = [u for u in src.utterances if u.is_clean]
    if not clean:
        raise SystemExit(f"{args.input} holds no clean records to augment")
    noisy = augment(clean, run.pipeline.noise_kinds, run.pipeline.snr_levels, src.dsp, args.seed)
    out = Corpus(src.speakers, src.utterances + noisy, src.dsp, src.symbol_frames)
    save_corpus(out, _path(args, "corpus", CORPUS))
    print(f"added {len(noisy)} noisy records")


def cmd_train_enhancer(args, run: RunConfig) -> None:
    corpus = load_corpus(_path(args, "corpus", CORPUS))
    pairs = [(u.noisy.bins, u.clean.bins) for u in corpus.select(split="train", clean=False)]
    if not pairs:
        raise SystemExit("corpus has no noisy training records")
    model = EnhancerModel(run.enhancer)
    train_cfg = run.enhancer_train
    train_cfg.seed = args.seed
    losses = train_enhancer(model, pairs, train_cfg)
    model.save(_path(args, "enhancer", ENHANCER), {"stage": "enhancer", "seed": str(args.seed)})
    _loss_csv(Path(args.out_dir) / "enhancer_loss.csv", losses)
    print(f"enhancer loss {losses[0]:.4f} -> {np.mean(losses[-50:]):.4f}")


def cmd_eval_enhancer(args, run: RunConfig) -> None:
    corpus = load_corpus(_path(args, "corpus", CORPUS))
    model = EnhancerModel.load(_path(args, "enhancer", ENHANCER))
    rows = evaluation.eval_enhancer(model, corpus.select(split="enh_test"))
    out = Path(args.out_dir) / "sisdr.csv"
    write_csv(out, evaluation.SISDR_HEADER, evaluation.sisdr_rows(rows))
    for r in rows:
        print(f"{r.snr_db:+.0f} dB: noisy {r.noisy:.3f} -> enhanced {r.enhanced:.3f}")


def cmd_pretrain(args, run: RunConfig) -> None:
    stage = StageConfig("pretrain", {"corpus": str(_path(args, "corpus", CORPUS))}, run, args.seed)
    corpus = load_corpus(stage.paths["corpus"])
    enhancer = _enhancer_if_needed(args, run)
    res = run_pretrain(corpus, run, enhancer, seed=stage.seed,
                       checkpoint=_path(args, "checkpoint_out", PRETRAIN))
    speaker.save_embeddings(_path(args, "embeddings", SPEAKERS), res.embeddings)
    _loss_csv(Path(args.out_dir) / "pretrain_loss.csv", res.losses)
    print(f"pretrain loss {res.losses[0]:.4f} -> {np.mean(res.losses[-50:]):.4f}")


def cmd_adapt(args, run: RunConfig) -> None:
    stage = StageConfig("adapt", {"corpus": str(_path(args, "corpus", CORPUS)),
                                  "checkpoint": str(_path(args, "checkpoint", PRETRAIN))},
                        run, args.seed)
    corpus = load_corpus(stage.paths["corpus"])
    model, meta = TtsModel.load(stage.paths["checkpoint"])
    enhancer = _enhancer_if_needed(args, run)
    res = run_adapt(model, meta, corpus.select(split="adapt"), run, enhancer, seed=stage.seed,
                    checkpoint=_path(args, "checkpoint_out", ADAPTED))
    emb_path = _path(args, "embeddings", SPEAKERS)
    embeddings = speaker.load_embeddings(emb_path) if emb_path.exists() else {}
    embeddings.update(res.embeddings)
    speaker.save_embeddings(emb_path, embeddings)
    _loss_csv(Path(args.out_dir) / "adapt_loss.csv", res.losses)
    if res.losses:
        print(f"adapt loss {res.losses[0]:.4f} -> {np.mean(res.losses[-50:]):.4f}")


def _parse_text(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _synth_models(args) -> tuple[dict[str, TtsModel], TtsModel]:
    """Per-speaker model choice: the adapted checkpoint serves the speaker it was adapted
    to, the pretrain checkpoint everyone else. ``--checkpoint`` forces one model for all."""
    if args.checkpoint:
        model, _ = TtsModel.load(args.checkpoint)
        return {}, model
    pre_path, ad_path = Path(args.out_dir) / PRETRAIN, Path(args.out_dir) / ADAPTED
    if not pre_path.exists() and not ad_path.exists():
        raise SystemExit(f"no TTS checkpoint in {args.out_dir}; run pretrain first")
    if not ad_path.exists():
        return {}, TtsModel.load(pre_path)[0]
    adapted, meta = TtsModel.load(ad_path)
    default = TtsModel.load(pre_path)[0] if pre_path.exists() else adapted
    return {meta["adapted"]: adapted}, default


def cmd_synth(args, run: RunConfig) -> None:
    StageConfig("infer", {"checkpoint": args.checkpoint or str(Path(args.out_dir) / PRETRAIN),
                          "embeddings": str(_path(args, "embeddings", SPEAKERS))}, run, args.seed)
    per_speaker, default = _synth_models(args)
    emb_path = _path(args, "embeddings", SPEAKERS)
    if not emb_path.exists():
        raise SystemExit(f"speaker embedding file {emb_path} not found")
    embeddings = speaker.load_embeddings(emb_path)
    wanted = args.speaker or sorted(embeddings)
    unknown = [s for s in wanted if s not in embeddings]
    if unknown:
        raise SystemExit(f"unknown speaker(s) {unknown}; known: {sorted(embeddings)}")
    if args.text:
        texts = [_parse_text(t) for t in args.text]
    else:
        corpus = load_corpus(_path(args, "corpus", CORPUS))
        texts = [u.symbols.ids[1:-1] for u in corpus.select(split="heldout")]
    ref_mask = maskkit.load_mask(args.mask_file) if args.mask == "reference" else None
    out_dir = Path(args.out_dir) / SYNTH
    index = []
    for spk in wanted:
        model = per_speaker.get(spk, default)
        for j, text in enumerate(texts):
            syn = run_infer(model, SymbolSequence.from_text(text), embeddings[spk], args.mask,
                            ref_mask, max_frames=args.max_frames)
            stem = f"{spk}_{j:03d}"
            # the container holds energies, so the log-mel output is exponentiated
            dsp.write_mels(out_dir / f"{stem}.mels", np.exp(syn.after_mel), run.dsp.sample_rate,
                           run.dsp.frame_hop)
            write_pgm(out_dir / f"{stem}.pgm", syn.after_mel.T)
            frames = np.repeat(syn.alignment, model.config.reduction, axis=0)[:syn.n_frames]
            write_pgm(out_dir / f"{stem}.align.pgm", frames.T)
            index.append({"speaker": spk, "text": list(text), "file": f"{stem}.mels",
                          "frames": syn.n_frames, "hit_max_frames": syn.hit_max_frames})
    (out_dir / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    print(f"synthesized {len(index)} utterances into {out_dir}")


def cmd_eval_similarity(args, run: RunConfig) -> None:
    synth_dir = Path(args.out_dir) / SYNTH
    index = json.loads((synth_dir / "index.json").read_text())
    synth: dict[str, list[np.ndarray]] = {}
    for e in index:
        bins = dsp.read_mels(synth_dir / e["file"], dsp.MELS_MAGIC).bins.astype(np.float64)
        synth.setdefault(e["speaker"], []).append(np.log(np.maximum(bins, run.dsp.log_floor)))
    corpus = load_corpus(_path(args, "corpus", CORPUS))
    enhancer = _enhancer_if_needed(args, run)
    reference = reference_mels(corpus, run, enhancer)
    rows = evaluation.similarity_table(synth, reference, run.pipeline.embed_seed)
    write_csv(Path(args.out_dir) / "similarity.csv", evaluation.SIMILARITY_HEADER,
              evaluation.similarity_rows(rows))
    for r in rows:
        print(f"{r.speaker_id}: cosine {r.cosine:.4f} same-speaker={r.same_speaker}")


COMMANDS = {
    "datagen": cmd_datagen,
    "augment": cmd_augment,
    "train-enhancer": cmd_train_enhancer,
    "eval-enhancer": cmd_eval_enhancer,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "synth": cmd_synth,
    "eval-similarity": cmd_eval_similarity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masktts", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".", help="working directory for all stage outputs")
        p.add_argument("--corpus", help="corpus directory (default <out-dir>/corpus)")
        p.add_argument("--enhancer", help="enhancer checkpoint")
        p.add_argument("--embeddings", help="speaker embedding file")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("adapt", "synth"):
            p.add_argument("--checkpoint", help="input TTS checkpoint")
        if name in ("pretrain", "adapt"):
            p.add_argument("--checkpoint-out", dest="checkpoint_out", help="output TTS checkpoint")
        if name == "datagen":
            p.add_argument("--no-wav", action="store_true", help="skip writing WAV files")
        if name == "augment":
            p.add_argument("--input", required=True, help="corpus directory with clean records")
        if name == "synth":
            p.add_argument("--speaker", action="append", help="speaker id (repeatable)")
            p.add_argument("--text", action="append",
                           help="comma separated letter ids 0..15 (repeatable)")
            p.add_argument("--mask", choices=("clean", "reference"), default="clean")
            p.add_argument("--mask-file", help="MASK file for reference mode")
            p.add_argument("--max-frames", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "synth" and args.mask == "reference" and not args.mask_file:
        raise SystemExit("--mask reference needs --mask-file")
    run = load_config(args.config)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    COMMANDS[args.command](args, run)
    return 0


if __name__ == "__main__":
    sys.exit(main())
