#!/usr/bin/env python3
"""Measure streaming real-time factor per config on this machine.

Per-frame compute is itemized into DSP (framing/FFT/overlap-add) and model
cost so the 10 ms hop budget can be attributed either way.
"""

import argparse

from fbse import model, streaming


def profile(name, cfg, seconds, seed):
    m = model.Enhancer(cfg, seed=seed)
    rep = streaming.measure_rtf(m, seconds=seconds, seed=seed)
    print(f"{name:10s} params {m.param_count / 1e6:8.3f}M  "
          f"per-frame {rep.per_frame_compute_ms:7.3f} ms  rtf {rep.rtf:6.3f}  "
          f"(dsp {rep.stage_ms['dsp']:.3f} ms, model {rep.stage_ms['model']:.3f} ms)  "
          f"algorithmic latency {rep.algorithmic_ms:.0f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seconds", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="profile one config file instead of the presets")
    ap.add_argument("--full", action="store_true",
                    help="also profile the full-size config (slow in this engine)")
    args = ap.parse_args()

    if args.config:
        profile("custom", model.load_config(args.config), args.seconds, args.seed)
        return
    profile("tiny", model.ModelConfig.tiny(), args.seconds, args.seed)
    if args.full:
        profile("default", model.ModelConfig.default(), args.seconds, args.seed)


if __name__ == "__main__":
    main()
