"""Command-line entry point.

Subcommands: gen-data, train, finetune-ladder, stream, bench, eval, verify.
Exit codes: 0 success, 1 usage error, 2 runtime error, 3 validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .data import (EngineConfig, SequenceStore, export_csv, gen_ar1_corpus,
                   gen_toy_corpus, load_config, load_sequence, save_sequence)
from .errors import ConfigError
from .model import MlpDenoiser, PaddedDenoiser, load_checkpoint, save_checkpoint
from .schedule import build_schedule, ladder_levels, reduce_steps, rolling_levels
from .stream import OfsConfig, StreamReport, make_cond_source, stream, stream_rdla
from .train import progressive_finetune, train_epochs

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VALIDATION = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="rollstream",
                description="Streaming rolling-diffusion engine")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--kind", choices=["toy", "ar1"], required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sequences", type=int, default=8)
    g.add_argument("--length", type=int, default=2000)
    g.add_argument("--dim", type=int, default=12)
    g.add_argument("--cond-dim", type=int, default=4)
    g.add_argument("--styles", type=int, default=3)
    g.add_argument("--phi", type=float, default=0.9)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--csv", action="store_true", help="also write CSV dumps")

    t = sub.add_parser("train", help="train the toy denoiser")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="directory of .rseq files")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, default=None, help="override config seed")
    t.add_argument("--log", default=None, help="loss log path (step, loss, wall seconds)")

    f = sub.add_parser("finetune-ladder", help="progressive ladder fine-tuning")
    f.add_argument("--config", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--checkpoint", required=True, help="starting weights")
    f.add_argument("--out", required=True, help="output prefix; stage files get _l<k>")
    f.add_argument("--ladder", default="2,4", help="comma list of ladder sizes")
    f.add_argument("--stage-contexts", default=None, help="comma list of context lengths")
    f.add_argument("--stage-epochs", default=None, help="comma list of epoch counts")
    f.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("stream", help="stream frames from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cond", required=True, help="sequence file supplying conditioning")
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--l", type=int, default=1)
    s.add_argument("--T-r", type=int, default=None, dest="T_r")
    s.add_argument("--mode", choices=["ddpm", "ddim"], default="ddpm")
    s.add_argument("--ofs-tau", type=float, default=None,
                   help="enable on-the-fly smoothing with this threshold")
    s.add_argument("--style", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None, help="config for schedule parameters")
    s.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="benchmark streaming throughput")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--config", default=None)
    b.add_argument("--frames", type=int, default=1000)
    b.add_argument("--l", default="1", help="comma list of ladder sizes")
    b.add_argument("--T-r", type=int, default=None, dest="T_r")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--dim", type=int, default=12)
    b.add_argument("--cond-dim", type=int, default=4)
    b.add_argument("--pad-size", type=int, default=0,
                   help="padding matmul size; 0 disables padding")
    b.add_argument("--pad-repeats", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV report path")

    e = sub.add_parser("eval", help="compare two sequence files")
    e.add_argument("--generated", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--out", default=None, help="CSV report path")

    v = sub.add_parser("verify", help="print schedule tables and run exhaustive checks")
    v.add_argument("--T", type=int, default=1000)
    v.add_argument("--N", type=int, default=100)
    v.add_argument("--beta1", type=float, default=4e-5)
    v.add_argument("--betaT", type=float, default=2e-2)
    v.add_argument("--l", type=int, default=None)
    v.add_argument("--T-r", type=int, default=None, dest="T_r")
    return p


# ---------------------------------------------------------------------------
# helpers


def _load_corpus(directory) -> list[SequenceStore]:
    paths = sorted(Path(directory).glob("*.rseq"))
    if not paths:
        raise ConfigError(f"no .rseq files in {directory}")
    return [load_sequence(p) for p in paths]


def _model_for(corpus: list[SequenceStore], cfg: EngineConfig) -> MlpDenoiser:
    n_styles = max(s.style for s in corpus) + 1
    return MlpDenoiser(dim=corpus[0].dim, cond_dim=corpus[0].c,
                       n_styles=max(n_styles, 1), n_cont=cfg.n_cont, window=cfg.N,
                       hidden=cfg.hidden_width, embed_dim=cfg.time_embed_dim,
                       seed=cfg.seed)


def bench_report(results: list[tuple[int, StreamReport, str]]) -> str:
    """CSV over runs: call counts, throughput, latency, speedup vs l = 1."""
    base_fps = {}
    for l, rep, _ in results:
        if l == 1 and 1 not in base_fps:
            base_fps[1] = rep.fps
    lines = ["l,T_r,frames,denoiser_calls,calls_per_frame,fps,"
             "p50_latency,p95_latency,speedup_vs_l1,output_sha256"]
    for l, rep, digest in results:
        speedup = rep.fps / base_fps[1] if base_fps.get(1) else float("nan")
        lines.append(
            f"{l},{rep.T_r},{rep.frames},{rep.steady_calls},{rep.calls_per_frame:.6g},"
            f"{rep.fps:.6g},{rep.latency_quantile(0.5):.6g},"
            f"{rep.latency_quantile(0.95):.6g},{speedup:.6g},{digest}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "toy":
        corpus = gen_toy_corpus(args.sequences, args.length, args.dim,
                                args.cond_dim, args.styles, args.seed)
        for i, store in enumerate(corpus):
            path = out / f"toy_{i:03d}.rseq"
            save_sequence(store, path)
            if args.csv:
                export_csv(store, str(path) + ".csv")
            print(path)
    else:
        store = gen_ar1_corpus(args.phi, args.sigma, args.length,
                               seed=args.seed, dim=args.dim)
        path = out / "ar1_000.rseq"
        save_sequence(store, path)
        if args.csv:
            export_csv(store, str(path) + ".csv")
        print(path)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    corpus = _load_corpus(args.data)
    sched = build_schedule(cfg.T, cfg.beta1, cfg.betaT)
    model = _model_for(corpus, cfg)
    log_lines = []

    def log(step, loss, wall):
        log_lines.append(f"{step} {loss:.10g} {wall:.3f}")

    result = train_epochs(model, corpus, cfg, sched, log=log)
    save_checkpoint(model, args.out)
    if args.log:
        Path(args.log).write_text("\n".join(log_lines) + "\n")
    print(f"trained {cfg.epochs} epochs; "
          f"first-epoch loss {result.epoch_losses[0]:.6g}, "
          f"final-epoch loss {result.epoch_losses[-1]:.6g}; wrote {args.out}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    corpus = _load_corpus(args.data)
    sched = build_schedule(cfg.T, cfg.beta1, cfg.betaT)
    model = load_checkpoint(args.checkpoint)
    ladder = [int(x) for x in args.ladder.split(",") if x]
    contexts = ([int(x) for x in args.stage_contexts.split(",")]
                if args.stage_contexts else None)
    epochs = ([int(x) for x in args.stage_epochs.split(",")]
              if args.stage_epochs else None)
    stages = progressive_finetune(model, corpus, cfg, sched, ladder_seq=ladder,
                                  stage_contexts=contexts, stage_epochs=epochs)
    for l, staged, result in stages:
        path = f"{args.out}_l{l}.ckpt"
        save_checkpoint(staged, path)
        print(f"stage l={l}: final-epoch loss {result.epoch_losses[-1]:.6g}; wrote {path}")
    return EXIT_OK


def _stream_common(args, model, cond_store: SequenceStore):
    cfg = load_config(args.config) if args.config else EngineConfig()
    sched = build_schedule(cfg.T, cfg.beta1, cfg.betaT)
    idle = cond_store.frames.mean(axis=0).astype(float)
    style = args.style if args.style is not None else cond_store.style
    source = make_cond_source(cond_store.cond)
    if args.l > 1:
        ofs = OfsConfig(enabled=args.ofs_tau is not None,
                        tau=args.ofs_tau if args.ofs_tau is not None else cfg.ofs_tau)
        return stream_rdla(model, sched, cfg.N, model.n_cont, idle, source,
                           cond_store.c, args.frames, l=args.l, mode=args.mode,
                           ofs=ofs, style=style, seed=args.seed)
    return stream(model, sched, cfg.N, model.n_cont, idle, source, cond_store.c,
                  args.frames, T_r=args.T_r, mode=args.mode, style=style,
                  seed=args.seed)


def _cmd_stream(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cond_store = load_sequence(args.cond)
    frames, report = _stream_common(args, model, cond_store)
    out = SequenceStore(frames=frames, cond=cond_store.cond[:len(frames)],
                        style=cond_store.style, fps=cond_store.fps)
    save_sequence(out, args.out)
    print(f"emitted {report.frames} frames with {report.steady_calls} denoiser calls "
          f"({report.calls_per_frame:.3g}/frame, +{report.bootstrap_calls} bootstrap); "
          f"{report.fps:.1f} fps; wrote {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = load_config(args.config) if args.config else EngineConfig()
    sched = build_schedule(cfg.T, cfg.beta1, cfg.betaT)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        dim, cond_dim = model.dim, model.cond_dim
    else:
        dim, cond_dim = args.dim, args.cond_dim
        model = MlpDenoiser(dim=dim, cond_dim=cond_dim, n_styles=1,
                            n_cont=cfg.n_cont, window=cfg.N,
                            hidden=cfg.hidden_width, embed_dim=cfg.time_embed_dim,
                            seed=cfg.seed, final_scale=0.01)
    denoiser = model
    if args.pad_size > 0:
        denoiser = PaddedDenoiser(model, args.pad_size, args.pad_repeats)
    ladders = [int(x) for x in args.l.split(",") if x]
    idle = np.zeros(dim)
    cond = np.zeros((args.frames + cfg.N + 1, cond_dim))
    results = []
    for l in ladders:
        for rep in range(args.repeats):
            if l > 1:
                frames, report = stream_rdla(denoiser, sched, cfg.N, model.n_cont,
                                             idle, make_cond_source(cond), cond_dim,
                                             args.frames, l=l, seed=args.seed)
            else:
                frames, report = stream(denoiser, sched, cfg.N, model.n_cont, idle,
                                        make_cond_source(cond), cond_dim,
                                        args.frames, T_r=args.T_r, seed=args.seed)
            digest = hashlib.sha256(np.ascontiguousarray(frames).tobytes()).hexdigest()[:16]
            results.append((l, report, digest))
    csv = bench_report(results)
    print(csv, end="")
    if args.out:
        Path(args.out).write_text(csv)
    return EXIT_OK


def _cmd_eval(args) -> int:
    gen = load_sequence(args.generated)
    ref = load_sequence(args.reference)
    rows = [("feature_space", "raw_pose_features")]
    for kind, tag in ((metrics.GEOMETRIC, "g"), (metrics.KINETIC, "k")):
        fd = metrics.frechet_distance(metrics.fit_distribution(gen.frames, kind),
                                      metrics.fit_distribution(ref.frames, kind))
        div = metrics.diversity(gen.frames, kind)
        rows.append((f"FD_{tag}", f"{fd:.8g}"))
        rows.append((f"Div_{tag}", f"{div:.8g}"))
    if gen.L == ref.L:
        mse_s, mse_k = metrics.mse_static_kinetic(gen.frames, ref.frames)
        rows.append(("MSE_s", f"{mse_s:.8g}"))
        rows.append(("MSE_k", f"{mse_k:.8g}"))
    else:
        rows.append(("MSE_s", "n/a (length mismatch)"))
        rows.append(("MSE_k", "n/a (length mismatch)"))
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    if args.out:
        Path(args.out).write_text("metric,value\n"
                                  + "\n".join(f"{k},{v}" for k, v in rows) + "\n")
    return EXIT_OK


def _cmd_verify(args) -> int:
    sched = build_schedule(args.T, args.beta1, args.betaT)
    s = args.T // args.N if args.T % args.N == 0 else None
    if s is None:
        raise ConfigError(f"T mod N != 0 (T={args.T}, N={args.N})")
    print(f"schedule T={args.T} beta1={args.beta1} betaT={args.betaT}")
    print(f"  alpha_bar[1]={sched.alpha_bar[1]:.8g} sigma2[1]={sched.sigma2[1]:.8g}")
    print(f"  alpha_bar[T]={sched.alpha_bar[args.T]:.8g} sigma2[T]={sched.sigma2[args.T]:.8g}")
    print(f"rolling window N={args.N} step s={s}")
    for t0 in (1, s):
        lv = rolling_levels(args.T, args.N, t0).levels
        head = ", ".join(str(x) for x in lv[:6])
        print(f"  t0={t0}: levels [{head}, ..., {lv[-1]}]")
    if args.T_r:
        red = reduce_steps(sched, args.T_r, args.N)
        print(f"reduced T_r={args.T_r} s_r={red.s_r}; "
              f"level_map[0..3]={red.level_map[:4].tolist()} ... map[T_r]={red.level_map[-1]}")
    if args.l:
        lad = ladder_levels(args.N, args.l, 1)
        print(f"ladder l={args.l} t0l=1: block levels {lad.block_levels[:6].tolist()}"
              f"{' ...' if len(lad.block_levels) > 6 else ''} top={lad.block_levels[-1]}")

    # exhaustive small-scale checks; each frame's level stays in its own
    # s-wide band, touching the top only at the bootstrap phase t0 = s
    checked = 0
    for T in (10, 20, 100):
        for N in (n for n in range(1, T + 1) if T % n == 0):
            step = T // N
            for t0 in range(1, step + 1):
                lv = rolling_levels(T, N, t0).levels
                n = np.arange(N)
                assert np.all(lv == t0 + n * step)
                assert np.all((lv > step * n) & (lv <= step * (n + 1)))
                checked += 1
    for N in (8, 16, 100):
        for l in (1, 2, 4):
            lad = ladder_levels(N, l, 1)
            assert lad.block_levels[-1] == N
            checked += 1
    assert np.all(np.diff(sched.alpha_bar) < 0)
    print(f"exhaustive checks passed ({checked} configurations)")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "finetune-ladder": _cmd_finetune,
    "stream": _cmd_stream,
    "bench": _cmd_bench,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
