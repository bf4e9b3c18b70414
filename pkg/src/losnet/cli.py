"""Command-line entry point.

Every subcommand writes ``manifest.json``, ``results.csv`` (rows
``n,nu,seed,quantity,value``) and ``summary.json`` into ``--out``.
Exit status: 0 success, 1 invalid input (nothing written), 2 the run
finished but one of its checks failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import beamform, channel, netgeom, scaling, spectral
from .config import CONFIG_KEYS, ConfigError, SimulationConfig, load_config

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunOutput:
    rows: list = field(default_factory=list)  # (n, nu, seed, quantity, value)
    checks: list = field(default_factory=list)  # (name, passed, detail)
    derived: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> writer(path)
    lines: list = field(default_factory=list)
    config: SimulationConfig | None = None

    def add(self, cfg_or_key, quantity, value):
        n, nu, seed = cfg_or_key
        self.rows.append((int(n), float(nu), int(seed), quantity, float(value)))

    def check(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))


def _key(cfg: SimulationConfig):
    return (cfg.n, cfg.nu, cfg.seed)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _config(args, out: RunOutput, need=True) -> SimulationConfig | None:
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS}
    if args.config:
        out.config = load_config(args.config, **overrides)
    elif need:
        for key in ("n", "nu"):
            if overrides[key] is None:
                raise ConfigError(key, "required (pass --config or --" + key + ")")
        out.config = SimulationConfig(**{k: v for k, v in overrides.items() if v is not None})
    return out.config


def _seeds(cfg: SimulationConfig, trials: int):
    return [cfg.with_overrides(seed=cfg.seed + k) for k in range(trials)]


def _parse_expect(items):
    out = []
    for item in items or []:
        try:
            name, rng = item.split("=", 1)
            lo, hi = rng.split(":", 1)
            out.append((name, float(lo) if lo else -math.inf, float(hi) if hi else math.inf))
        except ValueError:
            raise UsageError(f"--expect: malformed {item!r}, want quantity=lo:hi") from None
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args, out: RunOutput):
    cfg = _config(args, out)
    nodes = netgeom.generate_network(cfg)
    out.add(_key(cfg), "node_count", len(nodes))
    out.add(_key(cfg), "side", nodes.side)
    out.files["nodes.csv"] = nodes.write_csv
    if args.matrix:
        h = channel.network_channel_matrix(nodes).entries
        out.files["channel.losm"] = lambda p: channel.write_matrix(p, h)
    out.derived.update(L=cfg.side, area=cfg.area, P=cfg.power)
    out.lines.append(f"generated {len(nodes)} nodes on side {nodes.side:.6g}")


def cmd_spectral(args, out: RunOutput):
    cfg = _config(args, out)
    for c in _seeds(cfg, args.trials):
        nodes = netgeom.generate_network(c)
        H = channel.network_channel_matrix(nodes).entries
        est = spectral.spectral_norm(H, method=args.method, seed=c.seed)
        out.add(_key(c), "norm", est.value)
        out.add(_key(c), "norm_sq", est.value**2)
        out.add(_key(c), "max_entry", spectral.max_entry_lower_bound(H))
        out.add(_key(c), "capacity_bound", spectral.capacity_upper_bound(c.power, est))
        out.add(_key(c), "norm_bound_prediction", spectral.norm_bound_prediction(c.n, c.nu, c.epsilon))
        out.lines.append(f"seed {c.seed}: ||H|| = {est.value:.6g} ({est.method})")


def cmd_gershgorin(args, out: RunOutput):
    cfg = _config(args, out)
    for c in _seeds(cfg, args.trials):
        nodes = netgeom.generate_network(c)
        H = channel.network_channel_matrix(nodes).entries
        cells = [b for b in netgeom.square_layout(nodes, args.cells_per_side).flat_cells() if b.size]
        norm = spectral.spectral_norm(H, method=args.method, seed=c.seed).value
        block = spectral.block_gershgorin_bound(H, cells)
        scalar = spectral.scalar_gershgorin_bound(H)
        out.add(_key(c), "norm", norm)
        out.add(_key(c), "gersh_block", block)
        out.add(_key(c), "gersh_scalar", scalar)
        out.check(f"norm<=block[seed={c.seed}]", norm <= block * (1 + 1e-10), f"{norm:.6g} <= {block:.6g}")
        out.check(f"norm<=scalar[seed={c.seed}]", norm <= scalar * (1 + 1e-10), f"{norm:.6g} <= {scalar:.6g}")


def cmd_beamform(args, out: RunOutput):
    cfg = _config(args, out)
    traces = []
    for c in _seeds(cfg, args.trials):
        nodes = netgeom.generate_network(c)
        sched = netgeom.build_pair_schedule(netgeom.scheme_layout(nodes, c), c)
        p = beamform.design_scheme(nodes, sched, c)
        tr = beamform.run_back_and_forth(nodes, sched, p, c)
        rate = beamform.achieved_broadcast_rate(tr, p.tau, p.rounds_total)
        k = _key(c)
        for name, value in (
            ("rate", rate),
            ("min_sinr", tr.final_sinr.min()),
            ("fraction_rate_ge_0.1", np.mean(tr.rates >= 0.1)),
            ("t", p.t),
            ("tau", p.tau),
            ("amp_factor", p.amp_factor),
            ("k1", p.k1),
            ("k2", p.k2),
            ("snr_floor", p.snr_floor),
            ("max_noise_over_t_plus_1", tr.noise_constant),
            ("power_ratio", p.power_ratio),
        ):
            out.add(k, name, value)
        out.check(
            f"noise<=2(t+1)[seed={c.seed}]",
            tr.final_noise.max() <= 2 * (p.t + 1),
            f"max noise {tr.final_noise.max():.6g}, t={p.t}",
        )
        out.check(f"noise-monotone[seed={c.seed}]", tr.noise_monotone)
        traces.append(tr)
        if c.seed == cfg.seed:
            out.derived.update(
                L=c.side, M=p.cluster_area, d=p.d, N_C=p.n_pairs, t=p.t, tau=p.tau, A=p.amp_factor,
                rounds_total=p.rounds_total, flags=list(p.flags),
            )
        out.lines.append(f"seed {c.seed}: rate {rate:.6g} bits/slot, t={p.t}, tau={p.tau}, min SINR {tr.final_sinr.min():.4g}")
    out.files["trace.csv"] = traces[0].write_csv


def cmd_lemma(args, out: RunOutput):
    which = args.which
    if which == "1":
        cfg = _config(args, out)
        M = args.M if args.M is not None else float(cfg.n) ** (cfg.nu / 2)
        res = netgeom.empirical_count_deviation(cfg, M, args.delta, args.trials, args.threads)
        k = _key(cfg)
        out.add(k, "deviation_frequency", res.frequency)
        out.add(k, "chernoff_bound", res.bound)
        out.add(k, "binomial_stderr", res.stderr)
        out.check("frequency<=bound+3se", res.within_bound, f"{res.frequency:.6g} vs {res.bound:.6g} + 3*{res.stderr:.3g}")
        out.lines.append(f"empirical {res.frequency:.6g}, bound {res.bound:.6g}")
    elif which == "2":
        cfg = _config(args, out)
        for c in _seeds(cfg, args.trials):
            nodes = netgeom.generate_network(c)
            sched = netgeom.build_pair_schedule(netgeom.scheme_layout(nodes, c), c)
            chk = beamform.cosine_bound_check(nodes, sched, c.c1)
            out.add(_key(c), "fraction_above_cosine_bound", chk.fraction_within)
            out.add(_key(c), "max_distance_deviation", chk.max_deviation)
            out.add(_key(c), "mean_gain_ratio", np.mean(beamform.gain_ratios(nodes, sched)))
            out.check(f"cosine-bound[seed={c.seed}]", chk.fraction_within == 1.0)
            out.check(
                f"distance-sandwich[seed={c.seed}]",
                chk.min_deviation >= -1e-9 and chk.max_deviation <= 1 / (2 * c.c1**2) + 1e-12,
            )
    elif which == "3":
        cfg = _config(args, out)
        res = beamform.sample_interference_integrals(cfg, args.samples, l=args.l)
        k = _key(cfg)
        out.add(k, "fraction_within_bound", res.fraction_within)
        out.add(k, "max_abs_over_bound", float(np.max(np.abs(res.values) / res.bounds)))
        out.check("quadrature<=bound", res.fraction_within >= 0.999, f"{res.fraction_within:.4f}")
        for c in _seeds(cfg, args.trials):
            nodes = netgeom.generate_network(c)
            sched = netgeom.build_pair_schedule(netgeom.scheme_layout(nodes, c), c)
            out.add(_key(c), "mean_interference_ratio", np.mean(beamform.interference_ratios(nodes, sched)))
    elif which == "5":
        m, ell = args.m, args.ell
        A = args.area
        d = args.d if args.d is not None else 3 * math.sqrt(A)
        seed = args.seed or 0
        est = spectral.trace_moment(m, A, d, ell, args.trials, seed, args.threads)
        key = (m, 0.0, seed)
        out.add(key, f"moment_l{ell}", est.mean)
        out.add(key, f"moment_l{ell}_stderr", est.stderr)
        out.add(key, f"moment_bound_l{ell}", spectral.moment_bound(m, A, d, ell))
        if ell == 1:
            oracle = m * m * spectral.inverse_square_expectation(A, d)
            out.add(key, "quadrature_oracle", oracle)
            out.check("moment-matches-quadrature", abs(est.mean - oracle) <= 3 * est.stderr,
                      f"{est.mean:.6g} vs {oracle:.6g} (se {est.stderr:.3g})")
        out.derived.update(m=m, A=A, d=d, ell=ell)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown lemma {which}")


def cmd_sweep(args, out: RunOutput):
    base = _config(args, out, need=False)
    if base is None:
        if args.nu is None and not args.nus:
            raise ConfigError("nu", "required (pass --config, --nu or --nus)")
        base = SimulationConfig(
            n=args.n or 2, nu=args.nu or args.nus[0],
            **{k: getattr(args, k) for k in ("epsilon", "gamma", "c1", "c2", "seed") if getattr(args, k) is not None},
        )
        out.config = base
    ns = args.ns or [base.n]
    nus = args.nus or [base.nu]
    grid = [base.with_overrides(n=n, nu=nu) for nu in nus for n in ns]
    res = scaling.sweep(grid, args.quantities, trials=args.trials, threads=args.threads, norm_method=args.method)
    out.rows.extend(res.rows)
    out.summary.update(res.summary())
    for (q, nu), f in res.fitted.items():
        out.lines.append(f"{q} nu={nu}: slope {f.slope:.4f} (r2 {f.r_squared:.3f})")
    out.check("capacity-dominance", not res.dominance_violations, f"{len(res.dominance_violations)} violations")
    if res.failed:
        out.lines.append(f"{len(res.failed)} cells failed")
    out.derived["slopes"] = {f"{q}@{nu}": f.slope for (q, nu), f in res.fitted.items()}


def cmd_duality(args, out: RunOutput):
    if args.n is None:
        raise ConfigError("n", "required")
    if args.area_exp is None:
        raise ConfigError("area-exp", "required")
    if args.snr is None:
        raise ConfigError("snr", "required")
    n = args.n
    A = float(n) ** args.area_exp
    try:
        prod = scaling.duality_product(n, A, args.snr)
    except scaling.RegimeError as exc:
        raise ConfigError("area-exp", str(exc)) from None
    key = (n, args.area_exp, args.seed or 0)
    out.add(key, "unicast_throughput", scaling.predicted_unicast_throughput(n, A, args.snr))
    out.add(key, "broadcast_rate", scaling.predicted_broadcast_rate(n, A, args.snr))
    out.add(key, "duality_product", prod)
    out.check("product==n", abs(prod - n) <= 1e-12 * n, f"{prod!r}")
    out.lines.append(f"product {prod:.12g}")


def cmd_baseline(args, out: RunOutput):
    cfg = _config(args, out)
    closed = scaling.tdma_baseline_rate(cfg.n, cfg.nu, cfg.power)
    for c in _seeds(cfg, args.trials):
        sim = scaling.simulated_tdma_rate(netgeom.generate_network(c), c.power)
        out.add(_key(c), "tdma_closed_form", closed)
        out.add(_key(c), "tdma_simulated", sim)
        if closed < 1:
            out.check(f"within-factor-2[seed={c.seed}]", closed / 2 <= sim <= 2 * closed, f"{sim:.6g} vs {closed:.6g}")
        out.lines.append(f"seed {c.seed}: simulated {sim:.6g}, closed form {closed:.6g}")


COMMANDS = {
    "generate": cmd_generate,
    "spectral": cmd_spectral,
    "gershgorin": cmd_gershgorin,
    "beamform": cmd_beamform,
    "lemma": cmd_lemma,
    "sweep": cmd_sweep,
    "duality": cmd_duality,
    "baseline": cmd_baseline,
}


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--n", type=int)
    common.add_argument("--nu", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--c1", type=float)
    common.add_argument("--c2", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int, default=1)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="losnet-out")
    common.add_argument("--expect", action="append", metavar="QUANTITY=LO:HI",
                        help="fail with exit 2 unless every value (or slope:QUANTITY fit) lies in [LO, HI]")

    p = _Parser(prog="losnet", description="Broadcast scaling in line-of-sight wireless networks")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("generate", parents=[common])
    g.add_argument("--matrix", action="store_true", help="also dump the channel matrix")
    for name in ("spectral", "gershgorin"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--method", default="auto", choices=["auto", "exact", "power-iteration", "lanczos"])
        if name == "gershgorin":
            s.add_argument("--cells-per-side", type=int, default=4)
    sub.add_parser("beamform", parents=[common])
    lem = sub.add_parser("lemma", parents=[common])
    lem.add_argument("which", choices=["1", "2", "3", "5"])
    lem.add_argument("--M", type=float)
    lem.add_argument("--delta", type=float, default=0.5)
    lem.add_argument("--samples", type=int, default=1000)
    lem.add_argument("--l", type=int)
    lem.add_argument("--m", type=int, default=16)
    lem.add_argument("--ell", type=int, default=1)
    lem.add_argument("--area", type=float, default=256.0)
    lem.add_argument("--d", type=float)
    sw = sub.add_parser("sweep", parents=[common])
    sw.add_argument("--ns", type=_csv_list(int))
    sw.add_argument("--nus", type=_csv_list(float))
    sw.add_argument("--quantities", type=_csv_list(str), default=list(scaling.QUANTITIES))
    sw.add_argument("--method", default="lanczos", choices=["exact", "power-iteration", "lanczos"])
    du = sub.add_parser("duality", parents=[common])
    du.add_argument("--area-exp", type=float)
    du.add_argument("--snr", type=float)
    sub.add_parser("baseline", parents=[common])
    return p


def _validate(args):
    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    if args.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    if args.command == "sweep":
        bad = set(args.quantities) - set(scaling.QUANTITIES)
        if bad:
            raise ConfigError("quantities", f"unknown {sorted(bad)}")


def _apply_expectations(out: RunOutput, expectations):
    slopes = out.derived.get("slopes", {})
    for name, lo, hi in expectations:
        if name.startswith("slope:"):
            q = name[len("slope:"):]
            vals = [v for k, v in slopes.items() if k.split("@")[0] == q]
        else:
            vals = [v for *_, q, v in out.rows if q == name]
        ok = bool(vals) and all(lo <= v <= hi for v in vals)
        out.check(f"expect {name} in [{lo}, {hi}]", ok, f"{len(vals)} values")


def _write_outputs(outdir: Path, args, argv, out: RunOutput, cfg_snapshot, started, elapsed):
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"results": "results.csv", "summary": "summary.json"}
    with open(outdir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(scaling.RESULT_HEADER)
        for n, nu, seed, q, v in out.rows:
            w.writerow([n, repr(nu), seed, q, repr(v)])
    for name, writer in out.files.items():
        writer(outdir / name)
        paths[Path(name).stem] = name
    summary = {
        "command": args.command,
        "checks": [{"name": n, "passed": p, "detail": d} for n, p, d in out.checks],
        "passed": all(p for _, p, _ in out.checks),
        **out.summary,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": cfg_snapshot,
        "derived": out.derived,
        "version": _version(),
        "started": started,
        "wall_clock_seconds": elapsed,
        "outputs": {**paths, "manifest": "manifest.json"},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        expectations = _parse_expect(args.expect)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    out = RunOutput()
    try:
        COMMANDS[args.command](args, out)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _apply_expectations(out, expectations)

    snapshot = out.config.to_dict() if out.config else {k: getattr(args, k) for k in CONFIG_KEYS if getattr(args, k, None) is not None}
    _write_outputs(Path(args.out), args, argv, out, snapshot, started, time.perf_counter() - t0)
    for line in out.lines:
        print(line)
    failed = [c for c in out.checks if not c[1]]
    for name, _, detail in failed:
        print(f"check failed: {name} {detail}".rstrip(), file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
