"""Command-line front end.

Subcommands cover the whole pipeline: feature extraction (features, beats),
corpus work (synth, curate), the three training stages (train --stage),
generation (sample), metric reports (eval), and the inference-step sweep
(sweep-steps). Every run echoes its configuration to
<out-dir>/run_config.json; figures-grade outputs are CSV files.

Exit codes: 0 ok, 2 usage (argparse), 3 data error, 4 stage-order error.
VEM_SEED in the environment overrides the --seed default.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .audiofeat import SAMPLE_RATE, griffin_lim, load_wav, logmel, resample, save_wav
from .beatdet import detect_beats
from .container import load_tensors, save_tensors
from .curation import CurationRule, SynthConfig, gate, synth_corpus
from .errors import DataError, StageOrderError
from .evalsuite import StoryboardScores, frechet_distance, inception_score, mean_kld, tw_score
from .parsing import load_manifest, save_manifest
from .timeline import TimestampSet, beats_iou, save_events_json, transitions_beats_iou
from .training import (TrainConfig, generation_tb_iou, load_aligner, load_diffusion,
                       sample_mel, save_aligner, save_diffusion, train_stage_adapter,
                       train_stage_aligner, train_stage_diffusion)


def _default_seed():
    try:
        return int(os.environ.get("VEM_SEED", "0"))
    except ValueError:
        return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="vem",
        description="Video-to-music alignment toolkit: spectrogram features, beat "
                    "tracking, corpus curation, staged diffusion training, sampling, "
                    "and rhythmic evaluation metrics.")
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="master random seed (default: $VEM_SEED or 0)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-file stages (default 1)")
    p.add_argument("--out-dir", default="vem_out", help="output directory (default vem_out)")
    sub = p.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("features", help="log-mel spectrogram of a WAV file")
    q.add_argument("wav")
    q.add_argument("--mel-out", help="tensor-container output path (default <out-dir>/<stem>.mel.vemt)")

    q = sub.add_parser("beats", help="detect beats in a WAV file")
    q.add_argument("wav")
    q.add_argument("--json-out", help="events JSON output path (default <out-dir>/<stem>.beats.json)")

    q = sub.add_parser("curate", help="quality-gate a corpus directory of manifest+wav pairs")
    q.add_argument("corpus")
    q.add_argument("--min-snr-db", type=float, default=20.0)
    q.add_argument("--max-duration-s", type=float, default=120.0)
    q.add_argument("--max-shots", type=int, default=20)

    q = sub.add_parser("synth", help="generate a synthetic paired corpus")
    q.add_argument("--n", type=int, required=True, help="number of pairs")
    q.add_argument("--dur-min", type=float, default=10.0)
    q.add_argument("--dur-max", type=float, default=16.0)

    q = sub.add_parser("train", help="run one training stage on a corpus directory")
    q.add_argument("--stage", choices=("aligner", "diffusion", "adapter"), required=True)
    q.add_argument("--corpus", required=True)
    q.add_argument("--steps", type=int, help="override the stage's default step count")
    q.add_argument("--widths", default="64,128,256", help="denoiser channel widths")
    q.add_argument("--t-steps", type=int, default=1000, help="diffusion schedule length")

    q = sub.add_parser("sample", help="generate music for a manifest from a checkpoint")
    q.add_argument("ckpt")
    q.add_argument("manifest")
    q.add_argument("--steps", type=int, default=200, help="inference steps (default 200)")
    q.add_argument("--aligner", help="aligner checkpoint (default: aligner.vemt beside ckpt)")
    q.add_argument("--unconditional", action="store_true",
                   help="ablation: zero conditions, no storyboard mask, no aligner")
    q.add_argument("--wav-out", help="also reconstruct audio to this path")

    q = sub.add_parser("eval", help="metric CSV for a directory of manifest/ref/gen files")
    q.add_argument("dir")
    q.add_argument("--metrics", default="b_iou,tb_iou",
                   help="comma list from b_iou,tb_iou,tw,fad,is,kld")
    q.add_argument("--emb-a", help="tensor container with 'embeddings'/'probs' (set A)")
    q.add_argument("--emb-b", help="tensor container with 'embeddings'/'probs' (set B)")
    q.add_argument("--tol-s", type=float, default=0.5, help="matching tolerance (default 0.5)")

    q = sub.add_parser("sweep-steps", help="sample at several step counts, report errors")
    q.add_argument("ckpt")
    q.add_argument("manifest")
    q.add_argument("--steps", default="1,50,200", help="comma list of step counts")
    q.add_argument("--ref-wav", help="reference audio for reconstruction error")
    q.add_argument("--aligner")
    return p


def _echo_config(args):
    os.makedirs(args.out_dir, exist_ok=True)
    doc = {k: v for k, v in vars(args).items()}
    with open(os.path.join(args.out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, default=str)


def _load_wav_16k(path):
    w = load_wav(path)
    return w if w.sample_rate_hz == SAMPLE_RATE else resample(w, SAMPLE_RATE)


def _corpus_pairs(corpus_dir):
    names = sorted(f for f in os.listdir(corpus_dir) if f.endswith(".json")
                   and not f.endswith(".beats.json"))
    if not names:
        raise DataError(f"no manifests found in {corpus_dir}")
    pairs = []
    for name in names:
        stem = name[:-5]
        wav_path = os.path.join(corpus_dir, stem + ".wav")
        if not os.path.exists(wav_path):
            raise DataError(f"manifest {name} has no paired {stem}.wav")
        ann = load_manifest(os.path.join(corpus_dir, name))
        pairs.append((ann, _load_wav_16k(wav_path)))
    return pairs


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _pool_map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- subcommand bodies -----------------------------------------------------


def _cmd_features(args):
    w = _load_wav_16k(args.wav)
    mel = logmel(w)
    stem = os.path.splitext(os.path.basename(args.wav))[0]
    out = args.mel_out or os.path.join(args.out_dir, stem + ".mel.vemt")
    save_tensors(out, {"mel": mel.values},
                 {"hop": mel.hop, "sample_rate_hz": mel.sample_rate_hz, "n_mels": mel.n_mels})
    print(f"mel {mel.values.shape[0]}x{mel.values.shape[1]} -> {out}")
    return 0


def _cmd_beats(args):
    w = _load_wav_16k(args.wav)
    beats, bpm = detect_beats(logmel(w))
    stem = os.path.splitext(os.path.basename(args.wav))[0]
    out = args.json_out or os.path.join(args.out_dir, stem + ".beats.json")
    save_events_json(out, TimestampSet([b for b in beats if b <= w.duration_s], w.duration_s))
    print(f"{len(beats)} beats at {bpm:.1f} BPM -> {out}")
    return 0


def _cmd_curate(args):
    rules = CurationRule(min_snr_db=args.min_snr_db, max_duration_s=args.max_duration_s,
                         max_shots=args.max_shots)
    pairs = _corpus_pairs(args.corpus)

    def one(pair):
        ann, wav = pair
        passed, reasons = gate((ann, wav), rules)
        return [ann.video_id, "pass" if passed else "fail", "; ".join(reasons)]

    rows = _pool_map(one, pairs, args.threads)
    out = os.path.join(args.out_dir, "curation.csv")
    _write_csv(out, ["video_id", "status", "reasons"], rows)
    kept = sum(1 for r in rows if r[1] == "pass")
    print(f"{kept}/{len(rows)} pass -> {out}")
    return 0


def _cmd_synth(args):
    cfg = SynthConfig(duration_range_s=(args.dur_min, args.dur_max))
    corpus = synth_corpus(args.n, args.seed, cfg)
    corpus_dir = os.path.join(args.out_dir, "corpus")
    os.makedirs(corpus_dir, exist_ok=True)
    for i, (ann, wav) in enumerate(corpus):
        stem = os.path.join(corpus_dir, f"item_{i:03d}")
        save_manifest(stem + ".json", ann)
        save_wav(stem + ".wav", wav)
    print(f"{len(corpus)} pairs -> {corpus_dir}")
    return 0


def _cmd_train(args):
    pairs = _corpus_pairs(args.corpus)
    widths = tuple(int(x) for x in args.widths.split(","))
    cfg = TrainConfig(seed=args.seed, widths=widths, T=args.t_steps)
    if args.steps:
        cfg.aligner_steps = cfg.diffusion_steps = cfg.adapter_steps = args.steps
    os.makedirs(args.out_dir, exist_ok=True)
    aligner_path = os.path.join(args.out_dir, "aligner.vemt")
    diffusion_path = os.path.join(args.out_dir, "diffusion.vemt")
    adapter_path = os.path.join(args.out_dir, "adapter.vemt")

    if args.stage == "aligner":
        net, losses = train_stage_aligner(pairs, cfg)
        save_aligner(aligner_path, net, cfg)
        out, ckpt = losses, aligner_path
    elif args.stage == "diffusion":
        unet, temb, meta, losses = train_stage_diffusion(pairs, cfg)
        save_diffusion(diffusion_path, unet, temb, meta)
        out, ckpt = losses, diffusion_path
    else:
        if not os.path.exists(aligner_path):
            raise StageOrderError("adapter stage needs aligner.vemt (run --stage aligner first)")
        if not os.path.exists(diffusion_path):
            raise StageOrderError("adapter stage needs diffusion.vemt (run --stage diffusion first)")
        aligner, _ = load_aligner(aligner_path)
        unet, temb, meta = load_diffusion(diffusion_path)
        unet, temb, meta, losses = train_stage_adapter(pairs, cfg, aligner, unet, temb, meta)
        save_diffusion(adapter_path, unet, temb, meta)
        out, ckpt = losses, adapter_path

    _write_csv(os.path.join(args.out_dir, f"train_{args.stage}_loss.csv"),
               ["step", "loss"], [[i, f"{v:.6f}"] for i, v in enumerate(out)])
    print(f"stage {args.stage}: {len(out)} steps, final loss {out[-1]:.4f} -> {ckpt}")
    return 0


def _load_sampler(args):
    unet, temb, meta = load_diffusion(args.ckpt)
    aligner = None
    if unet.adapters is not None and not getattr(args, "unconditional", False):
        path = args.aligner or os.path.join(os.path.dirname(os.path.abspath(args.ckpt)),
                                            "aligner.vemt")
        if not os.path.exists(path):
            raise StageOrderError(f"checkpoint carries adapters but no aligner found at {path}")
        aligner, _ = load_aligner(path)
    return unet, temb, meta, aligner


def _cmd_sample(args):
    unet, temb, meta, aligner = _load_sampler(args)
    ann = load_manifest(args.manifest)
    mel = sample_mel(unet, temb, meta, ann, args.steps, args.seed, aligner=aligner,
                     conditioned=not args.unconditional)
    stem = os.path.splitext(os.path.basename(args.manifest))[0]
    out = os.path.join(args.out_dir, f"{stem}.gen.mel.vemt")
    save_tensors(out, {"mel": mel.values},
                 {"hop": mel.hop, "sample_rate_hz": mel.sample_rate_hz, "n_mels": mel.n_mels,
                  "steps": args.steps, "seed": args.seed})
    line = f"sampled {mel.values.shape[0]} windows ({args.steps} steps) -> {out}"
    if args.wav_out:
        save_wav(args.wav_out, griffin_lim(mel, iters=40))
        line += f" + {args.wav_out}"
    print(line)
    return 0


def _storyboard_tw(ann, gen_beats, tol_s):
    scores, durs = [], []
    for sb in ann.storyboards:
        tv = [t for t in ann.transitions.times_s if sb.start_s <= t < sb.end_s]
        bm = [b for b in gen_beats.times_s if sb.start_s <= b < sb.end_s]
        scores.append(transitions_beats_iou(TimestampSet(tv, ann.duration_s),
                                            TimestampSet(bm, ann.duration_s), tol_s))
        durs.append(sb.duration_s)
    return tw_score(StoryboardScores(scores, durs, ann.duration_s))


def _cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"b_iou", "tb_iou", "tw", "fad", "is", "kld"}
    bad = [m for m in metrics if m not in known]
    if bad:
        raise DataError(f"unknown metrics {bad}; choose from {sorted(known)}")
    names = sorted(f for f in os.listdir(args.dir) if f.endswith(".json")
                   and not f.endswith(".beats.json"))
    per_file = [m for m in metrics if m in ("b_iou", "tb_iou", "tw")]
    rows = []

    def one(name):
        stem = name[:-5]
        ann = load_manifest(os.path.join(args.dir, stem + ".json"))
        ref_path = os.path.join(args.dir, stem + ".wav")
        gen_path = os.path.join(args.dir, stem + ".gen.wav")
        if not os.path.exists(ref_path):
            raise DataError(f"{stem}.json has no reference {stem}.wav")
        ref_beats = _beats_of(_load_wav_16k(ref_path))
        gen_beats = _beats_of(_load_wav_16k(gen_path)) if os.path.exists(gen_path) else ref_beats
        out = []
        for m in per_file:
            if m == "b_iou":
                val = beats_iou(ref_beats, gen_beats, args.tol_s)
            elif m == "tb_iou":
                val = transitions_beats_iou(ann.transitions, gen_beats, args.tol_s)
            else:
                val = _storyboard_tw(ann, gen_beats, args.tol_s)
            out.append([ann.video_id, m, f"{val:.4f}"])
        return out

    if per_file:
        if not names:
            raise DataError(f"no manifests found in {args.dir}")
        for chunk in _pool_map(one, names, args.threads):
            rows.extend(chunk)

    corpus_metrics = [m for m in metrics if m in ("fad", "is", "kld")]
    if corpus_metrics:
        if not (args.emb_a and args.emb_b):
            raise DataError("fad/is/kld need --emb-a and --emb-b tensor containers")
        ta, _ = load_tensors(args.emb_a)
        tb, _ = load_tensors(args.emb_b)
        for m in corpus_metrics:
            if m == "fad":
                val = frechet_distance(_entry(ta, "embeddings", args.emb_a),
                                       _entry(tb, "embeddings", args.emb_b))
            elif m == "is":
                val = inception_score(_entry(ta, "probs", args.emb_a))
            else:
                val = mean_kld(_entry(ta, "probs", args.emb_a), _entry(tb, "probs", args.emb_b))
            rows.append(["(corpus)", m, f"{val:.4f}"])

    out = os.path.join(args.out_dir, "metrics.csv")
    _write_csv(out, ["video_id", "metric", "value"], rows)
    print(f"{len(rows)} metric rows -> {out}")
    return 0


def _entry(tensors, key, path):
    if key not in tensors:
        raise DataError(f"{path} has no {key!r} entry")
    return tensors[key]


def _beats_of(wav):
    beats, _ = detect_beats(logmel(wav))
    return TimestampSet([b for b in beats if b <= wav.duration_s], wav.duration_s)


def _cmd_sweep(args):
    unet, temb, meta, aligner = _load_sampler(args)
    ann = load_manifest(args.manifest)
    steps_list = [int(s) for s in args.steps.split(",")]
    ref_mel = logmel(_load_wav_16k(args.ref_wav)) if args.ref_wav else None
    rows = []
    for steps in steps_list:
        mel = sample_mel(unet, temb, meta, ann, steps, args.seed, aligner=aligner)
        if ref_mel is not None:
            n = min(mel.values.shape[0], ref_mel.values.shape[0])
            err = float(np.mean((mel.values[:n] - ref_mel.values[:n]) ** 2))
        else:
            err = float(np.mean(np.abs(mel.values)))
        tb = generation_tb_iou(mel, ann)
        rows.append([steps, f"{err:.6f}", f"{tb:.4f}"])
    out = os.path.join(args.out_dir, "sweep_steps.csv")
    _write_csv(out, ["steps", "recon_error", "tb_iou"], rows)
    print(f"{len(rows)} sweep rows -> {out}")
    return 0


_BODIES = {
    "features": _cmd_features, "beats": _cmd_beats, "curate": _cmd_curate,
    "synth": _cmd_synth, "train": _cmd_train, "sample": _cmd_sample,
    "eval": _cmd_eval, "sweep-steps": _cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _echo_config(args)
        return _BODIES[args.cmd](args)
    except StageOrderError as exc:
        print(f"error: stage-order: {exc}", file=sys.stderr)
        return 4
    except (DataError, FileNotFoundError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
