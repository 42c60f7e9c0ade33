"""Command-line entry points: ``demod``, ``simulate``, ``analyze``, ``selftest``.

Exit status: 0 success, 1 usage error, 2 data or integrity error,
3 internal error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import acceptance
from .analysis import FitError, columnar_text, linear_fit, log_taus, overlapping_adev, welch_psd
from .config import load_scenario
from .dsp import (TWO_PI, DemodConfig, DemodPipeline, ParameterError, PhaseIncrementStream,
                  increments_to_frequency)
from .control import DdsModel
from .link import (AOM_NOMINAL, AlignedAcquisition, ExperimentError, UsageError,
                   combine_heterodyne, combine_self_heterodyne, run_two_board_experiment)
from .signals import AdcModel, ToneSpec, codes_to_volts, tone_samples
from .wire import AcquisitionFile, WireError, chunk_stream, scenario_hash

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

STREAMS = {"dnu1": 1, "dnu2": 2, "f_drift": 3}
DERIVED = ("fiber", "laser", "residual")


def _write_text(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


# -- demod -----------------------------------------------------------------------

def _parse_tone(text):
    try:
        carrier, amp = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--tone expects CARRIER,AMPLITUDE, got {text!r}") from None
    return carrier, amp


def cmd_demod(args) -> int:
    cfg = DemodConfig(f_int=args.fint, f_out=args.fout)
    pipe = DemodPipeline(cfg)
    parts = []
    if args.input:
        raw = np.load(args.input)
        if np.issubdtype(raw.dtype, np.integer):
            raw = codes_to_volts(raw, AdcModel())
        for s in range(0, len(raw), 2_000_000):
            parts.append(pipe.process(np.asarray(raw[s:s + 2_000_000], dtype=float)).output)
    else:
        if args.tone is None:
            raise UsageError("demod needs --tone or --input")
        carrier, amp = _parse_tone(args.tone)
        tone = ToneSpec(amp, carrier + args.offset)
        n = int(round(args.duration * cfg.f_smp))
        for s in range(0, n, 2_000_000):
            idx = np.arange(s, min(s + 2_000_000, n), dtype=np.int64)
            parts.append(pipe.process(tone_samples(tone, idx, cfg.f_smp)).output)
    parts = [p for p in parts if len(p)]
    if not parts:
        raise ParameterError("record too short to produce any output sample")
    out = PhaseIncrementStream.concatenate(parts)
    dnu = increments_to_frequency(out)
    t = out.index / cfg.f_out
    if args.out:
        _write_text(columnar_text({"t": t, "dnu": dnu, "amplitude": out.amplitudes}), args.out)
    print(f"samples {len(dnu)}  mean_dnu {np.mean(dnu):.9f} Hz  std_dnu {np.std(dnu):.3e} Hz  "
          f"mean_amplitude {np.mean(out.amplitudes):.6f} V")
    return EXIT_OK


# -- simulate --------------------------------------------------------------------

def acquisition_to_file(acq: AlignedAcquisition, exp, scenario_text: str, seed: int,
                        duration: float) -> AcquisitionFile:
    """Pack an aligned acquisition into frames (increments, amplitudes, drift)."""
    rate = acq.rate
    chunks = []
    inc = {"dnu1": acq.dnu1 * TWO_PI / rate, "dnu2": acq.dnu2 * TWO_PI / rate}
    amps = {"dnu1": acq.amplitude1, "dnu2": acq.amplitude2}
    for name in ("dnu1", "dnu2"):
        chunks += chunk_stream(inc[name], amps[name], STREAMS[name])
    if acq.f_drift_record is not None:
        dds = DdsModel()
        words = np.round((AOM_NOMINAL + acq.f_drift_record) / dds.lsb).astype(np.uint64)
        chunks += chunk_stream(acq.f_drift_record * TWO_PI / rate,
                               np.zeros(len(acq.f_drift_record)), STREAMS["f_drift"],
                               drift_words=words)
    header = {
        "format": "mcuphase-acquisition",
        "demod": exp.board1.demod.to_dict(),
        "scheme": acq.scheme,
        "rate": rate,
        "scenario_hash": scenario_hash(scenario_text),
        "seed": seed,
        "duration": duration,
        "start_time": acq.diagnostics["start2"],
        "common_time_origin": float(acq.common_time[0]),
        "shift": acq.shift,
        "residual_samples": acq.residual,
        "tau": exp.scenario.tau,
        "streams": STREAMS if acq.f_drift_record is not None else
        {k: v for k, v in STREAMS.items() if k != "f_drift"},
    }
    return AcquisitionFile(header, chunks, dict(acq.truth))


def cmd_simulate(args) -> int:
    exp, text = load_scenario(args.scenario)
    acq = run_two_board_experiment(exp, args.duration, args.seed)
    f = acquisition_to_file(acq, exp, text, args.seed, args.duration)
    f.write(args.out)
    print(f"wrote {args.out}: {len(acq)} samples/channel at {acq.rate:g} Hz, "
          f"{len(f.chunks)} chunks, shift {acq.shift}, residual {acq.residual:+.3f} samples")
    return EXIT_OK


# -- analyze ----------------------------------------------------------------------

def file_to_acquisition(f: AcquisitionFile) -> AlignedAcquisition:
    h = f.header
    rate = float(h["rate"])
    streams = h["streams"]
    data = {}
    for name, cid in streams.items():
        phase, amp, _ = f.stream(int(cid))
        data[name] = (phase * rate / TWO_PI, amp)
    n = len(data["dnu1"][0])
    t = h["common_time_origin"] + np.arange(n) / rate
    fd = data["f_drift"][0] if "f_drift" in data else None
    return AlignedAcquisition(data["dnu1"][0], data["dnu2"][0], t, rate, h["scheme"], fd,
                              h.get("shift", 0), h.get("residual_samples", 0.0),
                              data["dnu1"][1], data["dnu2"][1], f.truth)


def channel_series(acq: AlignedAcquisition, channel: str):
    if channel in ("dnu1", "dnu2"):
        return getattr(acq, channel)
    if channel == "f_drift":
        if acq.f_drift_record is None:
            raise UsageError("acquisition has no f_drift stream")
        return acq.f_drift_record
    if channel in DERIVED:
        if acq.scheme == "heterodyne":
            fiber, laser = combine_heterodyne(acq)
            table = {"fiber": fiber, "laser": laser, "residual": acq.dnu1 - acq.dnu2}
        else:
            fiber, resid = combine_self_heterodyne(acq)
            table = {"fiber": fiber, "residual": resid}
        if channel not in table:
            raise UsageError(f"channel {channel!r} undefined for the {acq.scheme} scheme")
        return table[channel]
    if channel.startswith("truth:"):
        key = channel[6:]
        if key not in acq.truth:
            raise UsageError(f"no truth channel {key!r}")
        return acq.truth[key]
    raise UsageError(f"unknown channel {channel!r}")


def cmd_analyze(args) -> int:
    f = AcquisitionFile.read(args.file)
    for cid, gaps in f.gaps.items():
        for after, missing in gaps:
            print(f"warning: stream {cid}: {missing} chunk(s) missing after seq {after}",
                  file=sys.stderr)
    acq = file_to_acquisition(f)
    x = channel_series(acq, args.channel)
    if args.kind == "psd":
        est = welch_psd(x, acq.rate, segment=min(args.segment, len(x)))
        text = columnar_text({"f_Hz": est.frequencies, "S_Hz2_per_Hz": est.values})
    elif args.kind == "adev":
        taus = log_taus(acq.rate, args.tau_min or 1.0 / acq.rate,
                        args.tau_max or len(x) / acq.rate / 3.0)
        ad = overlapping_adev(x, acq.rate, taus)
        text = columnar_text({"tau_s": ad.taus, "adev_Hz": ad.sigma, "count": ad.counts})
    else:
        fit = linear_fit(acq.common_time[:len(x)], x)
        text = columnar_text({"slope_Hz_per_s": [fit.slope], "slope_err": [fit.slope_uncertainty],
                              "intercept_Hz": [fit.intercept],
                              "intercept_err": [fit.intercept_uncertainty]})
    _write_text(text, args.out)
    return EXIT_OK


# -- selftest ---------------------------------------------------------------------

def cmd_selftest(args) -> int:
    results = acceptance.run_all(args.only or None)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_OK if not failed else EXIT_DATA


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcuphase", description="MCU phase-analyzer simulation tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("demod", help="demodulate a raw record or a synthesized tone")
    d.add_argument("--tone", help="CARRIER,AMPLITUDE of a synthesized tone (Hz,V)")
    d.add_argument("--offset", type=float, default=0.0, help="added to the tone carrier (Hz)")
    d.add_argument("--input", help=".npy raw samples (float volts or integer ADC codes)")
    d.add_argument("--fint", type=float, default=100e3)
    d.add_argument("--fout", type=float, default=4e3)
    d.add_argument("--duration", type=float, default=1.0, help="tone length (s)")
    d.add_argument("--out", help="write t, dnu, amplitude columns here")
    d.set_defaults(func=cmd_demod)

    s = sub.add_parser("simulate", help="run a two-board link scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--duration", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="PSD, ADEV or drift fit of an acquisition channel")
    a.add_argument("kind", choices=("psd", "adev", "fit"))
    a.add_argument("file")
    a.add_argument("--channel", default="dnu1",
                   help="dnu1, dnu2, f_drift, fiber, laser, residual or truth:<name>")
    a.add_argument("--segment", type=int, default=4096)
    a.add_argument("--tau-min", type=float)
    a.add_argument("--tau-max", type=float)
    a.add_argument("--out", help="output file (default stdout)")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("selftest", help="run the acceptance suite")
    t.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    t.set_defaults(func=cmd_selftest)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) closed early; not an error
        sys.stdout = None
        return EXIT_OK
    except UsageError as exc:
        print(f"mcuphase: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WireError, ParameterError, ExperimentError, FitError, OSError, ValueError) as exc:
        print(f"mcuphase: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        print(f"mcuphase: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
