"""``dccrn`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 verification failure. Every failure prints exactly one line
``dccrn-error: <category>: <message>`` on stderr. ``DCCRN_LOG_LEVEL``
(DEBUG, INFO, WARNING, ...) sets log verbosity; default WARNING.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category, self.code = category, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _fail(category: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    print(f"dccrn-error: {category}: {text}", file=sys.stderr)
    return code


# -- verbs ----------------------------------------------------------------------

def cmd_train(args) -> int:
    from .config import load_run_config
    from .train import train

    run = load_run_config(args.config)
    result = train(run, sink=print)
    print(f"best_val_sisnr={result.best_val_sisnr:.4f}")
    print(f"noisy_val_sisnr={result.noisy_val_sisnr:.4f}")
    print(f"improvement_db={result.improvement_db:.4f}")
    print(f"epochs={result.epochs_run} steps={result.steps} lr_halvings={result.lr_halvings}")
    print(f"checkpoint={result.best_checkpoint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    from . import checkpoint
    from .data import AudioClip, read_wav, write_wav
    from .streaming import enhance_stream

    model, _ = checkpoint.load(args.checkpoint)
    clip = read_wav(args.input, expected_rate=model.config.stft.sample_rate)
    wave = clip.samples.astype(np.float32)
    out = enhance_stream(model, wave) if args.streaming else model.enhance(wave)
    out = np.clip(np.asarray(out, np.float64), -1.0, 1.0)
    write_wav(args.output, AudioClip(out.astype(np.float32), clip.sample_rate), args.encoding)
    mode = "streaming" if args.streaming else "offline"
    print(f"mode={mode} samples={len(out)} output={args.output}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import checkpoint
    from .bench import bench
    from .model import ModelConfig, build

    if args.checkpoint in ("default", "tiny"):
        cfg = ModelConfig() if args.checkpoint == "default" else ModelConfig.tiny()
        model = build(cfg)
    else:
        model, _ = checkpoint.load(args.checkpoint)
    report = bench(model, seconds=args.seconds, seed=args.seed)
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run

    unknown = [s for s in args.suite if s not in SUITES]
    if unknown:
        raise CliError("usage", f"unknown suite {unknown[0]!r}; choose from {', '.join(SUITES)}", EXIT_USAGE)
    results = run(args.suite or None, report=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"summary passed={len(results) - len(failed)} failed={len(failed)}")
    if failed:
        return _fail("verify", f"{len(failed)} check(s) failed: {', '.join(r.name for r in failed)}", EXIT_VERIFY)
    return EXIT_OK


def cmd_param_count(args) -> int:
    from .config import load_run_config
    from .model import parameter_count

    run = load_run_config(args.config)
    print(f"variant={run.model.variant} parameters={parameter_count(run.model)}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dccrn", description="Complex-valued speech enhancement (DCCRN).")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train from a run config file")
    p.add_argument("config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--streaming", action="store_true", help="run frame by frame")
    p.add_argument("--encoding", choices=("float32", "pcm16"), default="float32")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("bench", help="streaming per-frame latency")
    p.add_argument("checkpoint", help="checkpoint path, or 'default' / 'tiny' for a fresh model")
    p.add_argument("--seconds", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("verify", help="run the self-check suite")
    p.add_argument("--suite", action="append", default=[], help="restrict to one suite (repeatable)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("param-count", help="parameter count of a run config's model")
    p.add_argument("config")
    p.set_defaults(fn=cmd_param_count)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("DCCRN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .data import DataError

    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except CliError as err:
        return _fail(err.category, err, err.code)
    except ConfigError as err:
        return _fail("config", err, EXIT_USAGE)
    except CheckpointError as err:
        return _fail("checkpoint", err, EXIT_DATA)
    except DataError as err:
        return _fail("data", err, EXIT_DATA)
    except (OSError, ValueError) as err:
        return _fail("data", err, EXIT_DATA)
    except KeyboardInterrupt:
        return _fail("interrupted", "stopped by user", EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
