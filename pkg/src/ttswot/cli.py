"""Command-line entry point.

Exit status: 0 success, 2 usage or configuration problem, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import sys
from pathlib import Path

import numpy as np

from .abcd_vae import map_decode, read_units, span_first_rows, write_posterior, write_units
from .checkpoint import Checkpoint, checkpoint_from_result
from .config import TrainConfig, load_config
from .dsp import read_wav, write_wav
from .errors import ConvergenceError, NumericError, TrainingAborted, TTSWoTError
from .evaluation import abx_error, bitrate, dtw_kl, effective_categories, levenshtein
from .model import f0_tracks
from .remez import design_pairs
from .synthetic import generate_synthetic_corpus, read_gold
from .training import load_corpus, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXPORT_PEAK = 0.95


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_model(path):
    return Checkpoint.load(path).to_model()


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(args.corpus_dir)
    out = Path(args.out_checkpoint)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")

    def on_checkpoint(result):
        ckpt = checkpoint_from_result(result)
        if result.iteration == cfg.total_iters:
            ckpt.save(out)
        else:
            ckpt.save(out.with_name(f"{out.stem}.iter{result.iteration:06d}{out.suffix}"))

    train(corpus, cfg, log_path=log_path, on_checkpoint=on_checkpoint)
    return EXIT_OK


def cmd_encode(args) -> int:
    model = _load_model(args.checkpoint)
    wave = read_wav(args.wav_in)
    probs = model.posterior(wave)
    write_units(args.units_out, [(Path(args.wav_in).stem, map_decode(probs))])
    if args.posterior:
        write_posterior(args.posterior, span_first_rows(probs))
    return EXIT_OK


def cmd_synth(args) -> int:
    model = _load_model(args.checkpoint)
    entries = read_units(args.units_in)
    if args.utt is not None:
        entries = [e for e in entries if e[0] == args.utt]
    if not entries:
        print(f"error: no utterance found in {args.units_in}", file=sys.stderr)
        return EXIT_USAGE
    wave, _ = model.synthesize(entries[0][1], args.speaker, np.random.default_rng(_seed(args)))
    write_wav(args.wav_out, wave, peak_normalize=EXPORT_PEAK)
    return EXIT_OK


def _resolve(path: str, bases) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    for base in bases:
        if (base / p).exists():
            return base / p
    return bases[0] / p


def _read_triples(path, corpus_dir=None) -> list[tuple[Path, Path, Path]]:
    bases = [Path(corpus_dir)] if corpus_dir else []
    bases.append(Path(path).parent)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [tuple(_resolve(r[k], bases) for k in ("a_path", "b_path", "x_path")) for r in rows]


def cmd_eval_abx(args) -> int:
    triples = _read_triples(args.triples_csv, args.corpus)
    if args.gold:
        gold = read_gold(args.gold)
        reps = {p: gold[p.stem] for t in triples for p in t}
        results = {"abx_map": abx_error([tuple(reps[p] for p in t) for t in triples], levenshtein)}
    else:
        if not args.checkpoint:
            print("error: eval-abx needs --checkpoint or --gold", file=sys.stderr)
            return EXIT_USAGE
        model = _load_model(args.checkpoint)
        probs = {p: model.posterior(read_wav(p)) for t in triples for p in t}
        units = {p: map_decode(v).units.tolist() for p, v in probs.items()}
        spans = {p: span_first_rows(v) for p, v in probs.items()}
        results = {
            "abx_map": abx_error([tuple(units[p] for p in t) for t in triples], levenshtein),
            "abx_posterior": abx_error([tuple(spans[p] for p in t) for t in triples], dtw_kl),
        }
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for k, v in results.items():
        writer.writerow([k, f"{v:.4f}"])
    return EXIT_OK


def cmd_eval_bitrate(args) -> int:
    model = _load_model(args.checkpoint)
    corpus = load_corpus(args.corpus_dir)
    seqs = [model.encode(corpus.wave(i)) for i in range(len(corpus))]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerow(["bitrate_bits_per_sec", f"{bitrate(seqs, corpus.total_seconds()):.4f}"])
    writer.writerow(["effective_categories", f"{effective_categories(seqs):.4f}"])
    return EXIT_OK


def cmd_plot_f0(args) -> int:
    model = _load_model(args.checkpoint)
    tracks = f0_tracks(model, read_wav(args.wav_in), args.speaker, np.random.default_rng(_seed(args)))
    cols = ["time_sec", "f0_source_exp_c1", "f0_synth", "f0_target"]
    with open(args.csv_out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in zip(*(tracks[c] for c in cols)):
            writer.writerow([f"{row[0]:.4f}"] + [f"{v:.6f}" for v in row[1:]])
    return EXIT_OK


def cmd_design_fir(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    filters = design_pairs()
    names = [n for n in filters if args.pair == "all" or n.startswith(args.pair + "_")]
    for name in names:
        with open(out / f"{name}.csv", "w", encoding="utf-8", newline="\n") as fh:
            for tap in filters[name].taps:
                fh.write(f"{float(tap)!r}\n")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    generate_synthetic_corpus(_seed(args), args.speakers, args.phones, args.utts, args.out_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttswot", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a directory of WAV files")
    p.add_argument("corpus_dir")
    p.add_argument("out_checkpoint")
    p.add_argument("--log", default=None, help="CSV loss log (default: <checkpoint>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="WAV -> merged unit sequence")
    p.add_argument("checkpoint")
    p.add_argument("wav_in")
    p.add_argument("units_out")
    p.add_argument("--posterior", default=None, help="also dump span-first posterior rows")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="unit sequence -> WAV")
    p.add_argument("checkpoint")
    p.add_argument("units_in")
    p.add_argument("speaker")
    p.add_argument("wav_out")
    p.add_argument("--utt", default=None, help="utterance id to synthesize (default: first line)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval-abx", help="ABX error over a triple list")
    p.add_argument("triples_csv")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", default=None, help="directory the triple paths are relative to")
    p.add_argument("--gold", default=None, help="score gold transcriptions instead of a model")
    p.set_defaults(func=cmd_eval_abx)

    p = sub.add_parser("eval-bitrate", help="bitrate of MAP units over a corpus")
    p.add_argument("checkpoint")
    p.add_argument("corpus_dir")
    p.set_defaults(func=cmd_eval_bitrate)

    p = sub.add_parser("plot-f0", help="F0 contours (source, synthesis, target) as CSV")
    p.add_argument("checkpoint")
    p.add_argument("wav_in")
    p.add_argument("csv_out")
    p.add_argument("--speaker", default="0")
    p.set_defaults(func=cmd_plot_f0)

    p = sub.add_parser("design-fir", help="write voiced/voiceless FIR taps as CSV")
    p.add_argument("pair", choices=["voiced", "voiceless", "all"])
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_design_fir)

    p = sub.add_parser("synth-corpus", help="generate the synthetic pseudo-speech corpus")
    p.add_argument("out_dir")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--phones", type=int, default=6)
    p.add_argument("--utts", type=int, default=20)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            return args.func(args)
    except TrainingAborted as exc:
        print(f"error: training aborted at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TTSWoTError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
