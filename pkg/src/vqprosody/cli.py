"""Command-line interface.  Each subcommand is a thin shell over a library call.

Exit status: 0 success, 1 usage error, 2 data error.  Output directories
default to ``$VQPROSODY_OUT`` (or ``./vqprosody_out``) when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dsp, metrics, persistence, plots, training, vq
from .errors import VQProsodyError

OUT_ENV = "VQPROSODY_OUT"
DEFAULT_OUT = "vqprosody_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}")


def format_value(v: float) -> str:
    """Filename-safe rendering of a manipulation value, e.g. -4 -> 'm4', 0.5 -> 'p0.5'."""
    s = f"{abs(v):g}"
    return ("m" if v < 0 else "p") + s


def _load_waves(path: Path):
    """A manifest (.jsonl) or a single WAV; returns [(id, Waveform, record-or-None)]."""
    if path.suffix == ".jsonl":
        return [(r.id, dsp.read_wav(r.audio), r) for r in persistence.read_manifest(path)]
    return [(path.stem, dsp.read_wav(path), None)]


def cmd_synth_data(args) -> int:
    out = _out_dir(args)
    corpus = training.generate_corpus(args.n, seed=args.seed)
    audio = out / "audio"
    audio.mkdir(exist_ok=True)
    records = []
    for u in corpus:
        dsp.write_wav(audio / f"{u.uid}.wav", u.wave)
        records.append(persistence.ManifestRecord(u.uid, f"audio/{u.uid}.wav", u.factors, None))
    persistence.write_manifest(records, out / "manifest.jsonl")
    print(f"wrote {len(records)} utterances to {out / 'manifest.jsonl'}")
    return 0


def cmd_extract(args) -> int:
    out = _out_dir(args)
    for uid, wave, _ in _load_waves(Path(args.input)):
        mel = dsp.mel_spectrogram(wave, n_mels=args.n_mels)
        mf = dsp.mfcc(mel, args.n_mfcc)
        track = dsp.yin_pitch(wave)
        persistence.write_container({"mel": mel.frames, "mfcc": mf.frames,
                                     "f0_hz": track.f0_hz, "voiced": track.voiced},
                                    out / f"{uid}.features.vqpc")
    print(f"features written to {out}")
    return 0


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(lr=args.lr, batch_size=args.batch_size, steps=args.steps,
                                beta=args.beta, seed=args.seed, counter_mode=args.counter_mode,
                                codebook_size=args.codebook_size,
                                codebook_scale=args.codebook_scale)


def cmd_train(args) -> int:
    out = _out_dir(args)
    waves = [w for _, w, _ in _load_waves(Path(args.manifest))]
    cfg = _train_config(args)
    meta = {"train": {k: getattr(cfg, k) for k in ("lr", "batch_size", "steps", "beta", "seed",
                                                    "codebook_scale", "codebook_size")}}

    def save(step, model):
        name = "checkpoint.vqpc" if step == cfg.steps else f"checkpoint_step{step:06d}.vqpc"
        persistence.save_checkpoint(model.params, model.book, model.counter, out / name,
                                    norm=model.norm, extra_meta=dict(meta, step=step))

    _, _, log_, _ = training.train(waves, cfg, checkpoint_every=args.checkpoint_every, on_checkpoint=save)
    log_.write_tsv(out / "train_log.tsv")
    print(f"final recon {log_.records[-1][1]:.6f}; checkpoint {out / 'checkpoint.vqpc'}")
    return 0


def counter_table(counter: vq.CodebookCounter) -> str:
    ranking = vq.rank_dimensions(counter)
    rank_of = {d: r for r, d in enumerate(ranking, 1)}
    lines = ["dimension\taccumulated_value\trank"]
    lines += [f"{d}\t{float(v)!r}\t{rank_of[d]}" for d, v in enumerate(counter.accum, 1)]
    return "\n".join(lines) + "\n"


def cmd_counter_report(args) -> int:
    out = _out_dir(args)
    ck = persistence.load_checkpoint(args.checkpoint)
    table = counter_table(ck.counter)
    (out / "counter.tsv").write_text(table)
    plots.write_svg(plots.counter_bar_chart(ck.counter.accum), out / "counter.svg")
    sys.stdout.write(table)
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    refs = {uid: w for uid, w, _ in _load_waves(Path(args.ref))}
    gens = {uid: w for uid, w, _ in _load_waves(Path(args.gen))}
    if len(refs) == 1 and len(gens) == 1:
        pairs = [(next(iter(refs)), next(iter(refs.values())), next(iter(gens.values())))]
    else:
        common = sorted(set(refs) & set(gens))
        if not common:
            raise VQProsodyError("no matching ids between reference and generated sets")
        pairs = [(uid, refs[uid], gens[uid]) for uid in common]
    rows = [(uid, metrics.evaluate_pair(r, g, use_dtw=not args.no_dtw)) for uid, r, g in pairs]
    summary = metrics.write_report(rows, out / "eval.tsv", out / "eval_summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _trained_model(path) -> training.TrainedModel:
    ck = persistence.load_checkpoint(path)
    if ck.norm is None:
        raise VQProsodyError(f"checkpoint {path} has no feature normalisation")
    return training.TrainedModel(ck.params, ck.book, ck.counter, ck.norm)


def cmd_manipulate(args) -> int:
    out = _out_dir(args)
    model = _trained_model(args.checkpoint)
    wave = dsp.read_wav(args.wav)
    results = training.style_control_demo(model, wave, args.dim, args.values, args.mode)
    lines = ["value\tspectral_centroid_hz\tframes\tpanel"]
    for r in results:
        name = f"panel_dim{args.dim}_{args.mode}_{format_value(r.value)}.svg"
        plots.write_svg(plots.spectrogram_grid([r.mel], [f"dim {args.dim} = {r.value:g}"]), out / name)
        lines.append(f"{r.value:g}\t{r.spectral_centroid_hz:.6f}\t{r.frames}\t{name}")
    grid = plots.spectrogram_grid([r.mel for r in results], [f"{r.value:g}" for r in results],
                                  title=f"dimension {args.dim} ({args.mode})")
    plots.write_svg(grid, out / f"grid_dim{args.dim}_{args.mode}.svg")
    text = "\n".join(lines) + "\n"
    (out / f"manipulate_dim{args.dim}_{args.mode}.tsv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_correlate(args) -> int:
    out = _out_dir(args)
    model = _trained_model(args.checkpoint)
    corpus = []
    for uid, wave, rec in _load_waves(Path(args.manifest)):
        if rec is None or not rec.factors or set(rec.factors) != set(training.FACTOR_NAMES):
            raise VQProsodyError(f"utterance {uid} lacks factor labels")
        corpus.append(training.SyntheticUtterance(wave, rec.factors, -1, [], uid))
    rep = training.disentangle_experiment(corpus, model)
    with open(out / "correlation.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["dimension", "counter_rank", *training.FACTOR_NAMES])
        rank_of = {d: r for r, d in enumerate(rep.counter_ranking, 1)}
        for d in range(1, rep.correlation.matrix.shape[0] + 1):
            w.writerow([d, rank_of[d], *[f"{v:.6f}" for v in rep.correlation.matrix[d - 1]]])
    lines = ["factor\ttop_dimension\tabs_r\tcounter_rank"]
    lines += [f"{n}\t{d}\t{r:.6f}\t{k}" for n, d, r, k in rep.rows()]
    lines.append(f"# top5_hits={rep.top5_hits} top3_overlap={rep.top3_overlap} {rep.flag}")
    text = "\n".join(lines) + "\n"
    (out / "correlate.tsv").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vqprosody", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth-data", cmd_synth_data, "generate a factor-labelled synthetic corpus")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("extract", cmd_extract, "WAV or manifest -> mel/MFCC/pitch feature containers")
    sp.add_argument("input")
    sp.add_argument("--n-mels", type=int, default=dsp.N_MELS)
    sp.add_argument("--n-mfcc", type=int, default=metrics.MCD_ORDER + 1)

    d = training.TrainConfig()
    sp = add("train", cmd_train, "train the prosody encoder on a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--seed", type=int, default=d.seed)
    sp.add_argument("--steps", type=int, default=d.steps)
    sp.add_argument("--lr", type=float, default=d.lr)
    sp.add_argument("--batch-size", type=int, default=d.batch_size)
    sp.add_argument("--beta", type=float, default=d.beta)
    sp.add_argument("--codebook-size", type=int, default=d.codebook_size)
    sp.add_argument("--codebook-scale", type=float, default=d.codebook_scale,
                    help="codebook step size as a multiple of --lr")
    sp.add_argument("--counter-mode", choices=vq.COUNTER_MODES, default=d.counter_mode)
    sp.add_argument("--checkpoint-every", type=int, default=0)

    sp = add("counter-report", cmd_counter_report, "counter table and bar chart from a checkpoint")
    sp.add_argument("checkpoint")

    sp = add("eval", cmd_eval, "GPE/FFE/MCD between reference and generated audio")
    sp.add_argument("--ref", required=True, help="WAV file or manifest")
    sp.add_argument("--gen", required=True, help="WAV file or manifest")
    sp.add_argument("--no-dtw", action="store_true", help="index-aligned MCD")

    sp = add("manipulate", cmd_manipulate, "sweep one latent dimension and render the decoder output")
    sp.add_argument("checkpoint")
    sp.add_argument("wav")
    sp.add_argument("--dim", type=int, required=True, help="1-indexed latent dimension")
    sp.add_argument("--values", type=_parse_values, default=[-4.0, -2.0, 0.0, 2.0, 4.0])
    sp.add_argument("--mode", choices=("override", "offset"), default="override")

    sp = add("correlate", cmd_correlate, "latent/factor correlation against the counter ranking")
    sp.add_argument("checkpoint")
    sp.add_argument("manifest")
    return p


def _join_negative_values(argv: list[str]) -> list[str]:
    # "--values -4,0,4" would otherwise be read as an unknown flag
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--values" and i + 1 < len(argv):
            out.append(f"--values={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VQProsodyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
