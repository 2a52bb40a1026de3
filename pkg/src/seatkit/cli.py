"""Command-line interface.

    seatkit <command> [--config file.json] [--seed N] [--out DIR] [...]

Commands: theta, coeffs, predict, simulate, phase-compare, capture-prob,
scaling, selftest.  Config is flat JSON, e.g.
{"system": "duffing_eight", "z0": 0.1, "gamma": 1.0, "nu": 0.0}.
Exit codes: 0 success, 1 invariant failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
from dataclasses import asdict, is_dataclass

import numpy as np

from . import averaging, chart, experiments, flow, separatrix, simulate
from .errors import ConfigError, SeatkitError
from .experiments import ExperimentConfig, build_system, manifest, write_csv


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _emit_json(payload, out_dir, name):
    text = json.dumps(_jsonable(payload), indent=2)
    if out_dir:
        path = os.path.join(out_dir, name)
        with open(path, "w") as f:
            f.write(text + "\n")
        print(f"wrote {path}")
    else:
        print(text)


def _load_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        with open(args.config) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad config JSON: {exc}") from exc
    if args.seed is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def cmd_theta(cfg, args):
    sys_ = build_system(cfg)
    ss = separatrix.separatrix_set(sys_, [cfg.z0])
    separatrix.compute_theta(sys_, [cfg.z0])  # sign validation
    payload = {
        "theta1": ss.theta1, "theta2": ss.theta2, "theta3": ss.theta3,
        "tail_estimate": ss.tail_estimate,
        "closest_approach": (ss.loop1.closest_approach,
                             ss.loop2.closest_approach),
        "delta_sad": ss.delta_sad,
        "meta": manifest(cfg, {"command": "theta"}),
    }
    _emit_json(payload, args.out, "theta.json")
    return 0


def cmd_coeffs(cfg, args):
    sys_ = build_system(cfg)
    w0 = np.array([cfg.z0])
    hs = np.geomspace(args.h_min, args.h_max, args.n_h)
    chart.build_orbits(sys_, hs, w0)
    rows = []
    for h in hs:
        co = averaging.hat_coefficients(sys_, h, w0)
        rows.append((h, co.fbar_h1, co.omega1, co.fbar_h2,
                     *co.fbar_w2.tolist(), co.u_h1_at0, co.I_diag))
    header = ("h", "fbar_h1", "omega1", "fbar_h2", "fbar_w2", "u_h1_at_phi0",
              "I_diag")
    meta = manifest(cfg, {"command": "coeffs"})
    if args.out:
        path = os.path.join(args.out, "coeffs.csv")
        write_csv(path, header, rows, meta)
        print(f"wrote {path}")
    else:
        write_csv(_sys.stdout, header, rows, meta)
    return 0


def cmd_predict(cfg, args):
    sys_ = build_system(cfg)
    w0 = args.w0 if args.w0 is not None else cfg.z0
    pred = flow.predict_pseudo_phase(
        sys_, (args.h0, [w0]), args.phi0, args.eps,
        h_cut_scale=args.h_cut_scale)
    payload = _jsonable(pred)
    payload["meta"] = manifest(cfg, {"command": "predict", "eps": args.eps,
                                     "h0": args.h0, "phi0": args.phi0})
    _emit_json(payload, args.out, "predict.json")
    return 0


def cmd_simulate(cfg, args):
    sys_ = build_system(cfg)
    z0 = args.z0 if args.z0 is not None else cfg.z0
    x0 = np.array([args.q0, args.p0, z0])
    if args.eps == 0.0:
        h = float(sys_.hamiltonian(args.p0, args.q0, np.array([z0])))
        orb = chart.orbit(sys_, h, [z0])
        rows = [(t, q, p, h_) for t, q, p, h_ in zip(
            orb.t_nodes, orb.q, orb.p,
            sys_.hamiltonian(orb.p, orb.q, np.array([[z0]])))]
        header = ("t", "q", "p", "H")
        meta = manifest(cfg, {"command": "simulate", "eps": 0.0, "T": orb.T})
        if args.out:
            path = os.path.join(args.out, "orbit.csv")
            write_csv(path, header, rows, meta)
            print(f"wrote {path}")
        else:
            write_csv(_sys.stdout, header, rows, meta)
        return 0
    res = simulate.measure_pseudo_phase(sys_, x0, args.eps, c1=cfg.guard_c1)
    ps = simulate.integrate_perturbed(sys_, x0, args.eps, h_stop=0.0)
    ts = np.linspace(0.0, ps.t_end, args.n_samples_out)
    ys = ps.sol(ts)
    rows = [(t, *ys[:, i],
             float(sys_.hamiltonian(ys[1, i], ys[0, i], ys[2:, i])))
            for i, t in enumerate(ts)]
    header = ("t", "q", "p", *(f"z{j}" for j in range(ys.shape[0] - 2)), "H")
    meta = manifest(cfg, {"command": "simulate", "eps": args.eps})
    if args.out:
        path = os.path.join(args.out, "trajectory.csv")
        write_csv(path, header, rows, meta)
        print(f"wrote {path}")
        _emit_json(res, args.out, "capture.json")
    else:
        _emit_json(res, None, "")
    return 0


def cmd_phase_compare(cfg, args):
    out = experiments.cmd_phase_compare(cfg)
    for s in out["summary"]:
        print(f"eps={s['eps']:.3g}: median={s['median_err']:.4f} "
              f"q90={s['q90_err']:.4f} n={s['n_used']} guard={s['n_guard']}")
    if args.out:
        path = os.path.join(args.out, "phase_compare.csv")
        write_csv(path, out["header"], out["rows"], out["meta"])
        _emit_json({"summary": out["summary"], "meta": out["meta"]},
                   args.out, "phase_compare_summary.json")
    return 0


def cmd_capture_prob(cfg, args):
    payloads = {}
    if args.definition in ("anosov", "both"):
        payloads["anosov"] = experiments.cmd_capture_prob_anosov(cfg)
    if args.definition in ("arnold", "both"):
        payloads["arnold"] = experiments.cmd_capture_prob_arnold(cfg)
    for name, pl in payloads.items():
        e = pl["estimate"]
        se = "n/a" if e.std_error is None else f"{e.std_error:.4f}"
        print(f"{name}: p(G1) = {e.estimate:.4f} +- {se} "
              f"(predicted {e.predicted_ratio:.4f}, N={e.n_samples})")
    _emit_json(payloads, args.out, "capture_prob.json")
    return 0


def cmd_scaling(cfg, args):
    rep = experiments.cmd_scaling(cfg)
    print(f"T slope vs ln(1/h): {rep['T_slope']:.4f} "
          f"(expected {rep['T_slope_expected']:.4f}, "
          f"rel dev {rep['T_slope_rel_dev']:.3%})")
    print(f"max|u_h1| range ratio: {rep['uh1_range_ratio']:.3f}")
    print(f"max|u_phi1| * h ln(1/h) <= {rep['uphi1_scaled_max']:.4f}")
    print(f"max|omega1| * h <= {rep['omega1_times_h_max']:.4f}")
    _emit_json(rep, args.out, "scaling.json")
    return 0


def cmd_selftest(cfg, args):
    ok, checks = experiments.cmd_selftest(cfg)
    for name, good, detail in checks:
        print(f"[{'PASS' if good else 'FAIL'}] {name}: {detail}")
    print("selftest:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="seatkit", description=__doc__)
    ap.add_argument("--config", help="flat JSON config file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("theta")

    p = sub.add_parser("coeffs")
    p.add_argument("--h-min", type=float, default=1e-3)
    p.add_argument("--h-max", type=float, default=0.5)
    p.add_argument("--n-h", type=int, default=25)

    p = sub.add_parser("predict")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--h0", type=float, default=0.5)
    p.add_argument("--phi0", type=float, default=0.0)
    p.add_argument("--w0", type=float, default=None)
    p.add_argument("--h-cut-scale", type=float, default=1.0)

    p = sub.add_parser("simulate")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--q0", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=1.0)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--n-samples-out", type=int, default=2000)

    sub.add_parser("phase-compare")

    p = sub.add_parser("capture-prob")
    p.add_argument("--definition", choices=("anosov", "arnold", "both"),
                   default="both")

    sub.add_parser("scaling")
    sub.add_parser("selftest")

    args = ap.parse_args(argv)
    handlers = {
        "theta": cmd_theta,
        "coeffs": cmd_coeffs,
        "predict": cmd_predict,
        "simulate": cmd_simulate,
        "phase-compare": cmd_phase_compare,
        "capture-prob": cmd_capture_prob,
        "scaling": cmd_scaling,
        "selftest": cmd_selftest,
    }
    try:
        cfg = _load_config(args)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    except SeatkitError as exc:
        print(f"invariant failure: {type(exc).__name__}: {exc}",
              file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
