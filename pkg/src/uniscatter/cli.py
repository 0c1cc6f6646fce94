"""Command-line front end: ``uniscatter {spectrum,verify,waveops,smatrix,report}``.

Exit codes: 0 success, 1 configuration error, 2 precondition violated
(no-wrap, threshold proximity, ...), 3 numerical failure or failed
verification, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy
import scipy.sparse as sp

from . import __version__
from .config import RunConfig, StateSpec, parse_config
from .errors import ConfigError, NumericalError, PreconditionError, ThresholdProximityError, UniscatterError
from .operators import DirectSumState, hs_norm
from .resolvent import RadialPoint, delta_apply, poisson_mass, resolvent_apply
from .scattering import coefficients, modulus_distance, pm_bis_check, smatrix_formula, smatrix_packet, u_fiber
from .spectral import TWO_PI, channel_for
from .walk import WalkModel, localized_eigenphases
from .waveops import stationary_wave_apply, strong_wave_apply

logger = logging.getLogger("uniscatter")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def angle(x: float) -> str:
    return f"{x:.9g}"


def num(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)


# ---------------------------------------------------------------------------
# helpers shared by subcommands


def _arc_midpoints(model: WalkModel) -> list[float]:
    arcs = model.free.core_spectrum().arcs
    return [float(np.mod(0.5 * (a + b), TWO_PI)) for a, b in arcs]


def _state(model: WalkModel, spec: StateSpec) -> DirectSumState:
    fiber = model.free.fiber_at(spec.theta)
    return model.free.wave_packet(model.window, channel_for(fiber, spec.side, spec.direction), spec.theta,
                                  spec.sigma, spec.x0)


def _default_states(model: WalkModel) -> list[StateSpec]:
    mids = _arc_midpoints(model)
    return [StateSpec("l", 1, mids[0], 0.15)] if mids else []


def _thetas(args, cfg: RunConfig, model: WalkModel) -> list[float]:
    if args.theta:
        return [float(t) for t in args.theta.split(",") if t.strip()]
    if cfg.run.theta:
        return list(cfg.run.theta)
    return _arc_midpoints(model)


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))  # results come back in input order
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(cfg: RunConfig, model: WalkModel, out: Path, args) -> dict:
    free = model.free
    rows = []
    for (side, branch), band in sorted(free.bands.items()):
        for k, ph, v in zip(band.k, band.phase, band.velocity):
            rows.append([side, branch, angle(k), angle(float(np.mod(ph, TWO_PI))), num(v)])
    _write_csv(out / "bands.csv", ["side", "branch", "k", "phase", "velocity"], rows)
    _write_csv(out / "thresholds.csv", ["index", "theta"], [[i, angle(t)] for i, t in enumerate(free.thresholds)])
    core = free.core_spectrum()
    _write_csv(out / "arcs.csv", ["start", "stop", "multiplicity"],
               [[angle(a), angle(b), m] for a, b, m in core.intervals])
    print("thresholds: " + " ".join(angle(t) for t in free.thresholds))
    return {"thresholds": list(free.thresholds), "intervals": [list(i) for i in core.intervals],
            "max_speed": free.max_speed}


def verify_checks(cfg: RunConfig, model: WalkModel, seed: int) -> list[Check]:
    """Identity suite on the configured model."""
    rng = np.random.default_rng(seed)
    window = model.window
    checks: list[Check] = []
    L = window.half_width
    inner = max(1, L // 4)

    def interior_vec(dim_slots: int) -> np.ndarray:
        v = np.zeros((dim_slots, window.site_count, 2), dtype=complex)
        sl = slice(L - inner, L + inner + 1)
        v[:, sl] = rng.standard_normal((dim_slots, 2 * inner + 1, 2)) + 1j * rng.standard_normal((dim_slots, 2 * inner + 1, 2))
        v = v.reshape(-1)
        return v / np.linalg.norm(v)

    v = interior_vec(1)
    v0 = interior_vec(2)
    checks.append(Check("unitarity U", abs(np.linalg.norm(model.U.matvec(v)) - 1.0), 1e-12))
    checks.append(Check("unitarity U0", abs(np.linalg.norm(model.U0.matvec(v0)) - 1.0), 1e-12))

    fac = model.factorization
    checks.append(Check("factorization V = G* G0", fac.residual, 1e-12))
    JJ = model.J.sparse().conj().T @ model.J.sparse()
    jl = (window.flat_sites() < 0).astype(float)
    gap = abs(JJ - sp.diags(np.concatenate([jl, 1 - jl]))).max()
    checks.append(Check("J*J = diag(j_l, j_r)", float(gap), 0.0))
    expected = 2.0 * 2.0 * float(np.sum((1.0 + window.sites.astype(float) ** 2) ** (-fac.s)))
    checks.append(Check("hs_norm(G0)^2 truncated sum", abs(hs_norm(fac.G0) ** 2 - expected) / expected, 1e-12))

    def rand_z(inside: bool) -> complex:
        r = rng.uniform(0.3, 0.9)
        return (r if inside else 1.0 / r) * np.exp(1j * rng.uniform(0, TWO_PI))

    U = model.U
    z1, z2 = rand_z(True), rand_z(False)
    r1 = resolvent_apply(U, z1, v).x
    r2 = resolvent_apply(U, z2, v).x
    mix = resolvent_apply(U, z1, U.rmatvec(r2)).x
    res = np.linalg.norm(r1 - r2 - (z1 - z2) * mix)
    checks.append(Check("first resolvent equation", float(res), cfg.numerics.tolerance))
    z = rand_z(True)
    lhs = resolvent_apply(U, 1.0 / np.conj(z), v, adjoint=True).x
    rhs = -z * U.rmatvec(resolvent_apply(U, z, v).x)
    checks.append(Check("inside/outside relation", float(np.linalg.norm(lhs - rhs)), cfg.numerics.tolerance))
    # exact on the periodic window when the seam entries of V are kept
    zz = 0.8 * np.exp(0.9j)
    r0 = resolvent_apply(model.U0, zz, v0).x
    term = model.J.matvec(r0) - resolvent_apply(U, zz, model.J.matvec(v0)).x
    corr = zz * resolvent_apply(U, zz, U.rmatvec(model.V_window.matvec(model.U0.rmatvec(r0)))).x
    checks.append(Check("second resolvent equation", float(np.linalg.norm(term + corr)), cfg.numerics.tolerance))
    theta = rng.uniform(0, TWO_PI)
    d_in = delta_apply(U, RadialPoint(0.3, 1, theta), v)
    d_out = delta_apply(U, RadialPoint(0.3, -1, theta), v)
    checks.append(Check("delta symmetry", float(np.linalg.norm(d_in + d_out)), cfg.numerics.tolerance))
    mass = poisson_mass(U, 0.9, v, 512)
    checks.append(Check("Poisson unit mass", abs(mass - 1.0), cfg.numerics.tolerance))

    mids = _arc_midpoints(model)
    if mids:
        spec = StateSpec("r", -1, mids[0], 0.15)
        try:
            psi = _state(model, spec)
        except PreconditionError:
            psi = None
        if psi is not None:
            n = 1024
            total = 0.0
            core = model.free.core_spectrum()
            for t in TWO_PI * (np.arange(n) + 0.5) / n:
                if model.free.nearest_threshold(t)[0] < 1e-3 or not core.contains(t):
                    continue
                f = model.free.fiber_at(t, exclusion=0.0)
                if f.dim:
                    total += float(np.sum(np.abs(model.free.f0_apply(psi, t, f).coefficients) ** 2))
            checks.append(Check("Parseval for F0", abs(total * TWO_PI / n - psi.norm() ** 2), 1e-6))
            u0psi = model.U0.matvec(psi.flat)
            diag = 0.0
            for t in mids[0] + np.linspace(-0.1, 0.1, 5):
                a = model.free.f0_apply(u0psi, t).coefficients
                b = model.free.f0_apply(psi, t).coefficients
                diag = max(diag, float(np.abs(a - np.exp(1j * t) * b).max()))
            checks.append(Check("F0 diagonalizes U0", diag, 1e-8))
    return checks


def cmd_verify(cfg: RunConfig, model: WalkModel, out: Path, args) -> dict:
    checks = verify_checks(cfg, model, args.seed)
    rows = []
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: residual {c.residual:.3e} (tol {c.tolerance:.1e})")
        rows.append([c.name, num(c.residual), num(c.tolerance), int(c.passed)])
    _write_csv(out / "verify.csv", ["check", "residual", "tolerance", "passed"], rows)
    summary = {"checks": [dict(asdict(c), passed=c.passed) for c in checks],
               "all_passed": all(c.passed for c in checks)}
    return summary


def cmd_waveops(cfg: RunConfig, model: WalkModel, out: Path, args) -> dict:
    specs = list(cfg.run.states) or _default_states(model)
    rows, trace_rows, results = [], [], []
    for i, spec in enumerate(specs):
        psi = _state(model, spec)
        for eps, N in cfg.numerics.wave_schedule:
            strong = strong_wave_apply(model, +1, psi, N)
            stat = stationary_wave_apply(model, +1, psi, eps, cfg.numerics.n_theta, args.threads)
            dist = float(np.linalg.norm(strong.vector - stat.vector))
            rows.append([i, "+", num(eps), N, cfg.numerics.n_theta, num(dist), num(strong.norm), num(stat.norm),
                         num(strong.trace[-1] if strong.trace else 0.0), num(strong.leakage), num(stat.leakage)])
            trace_rows += [[i, num(eps), N, j, num(d)] for j, d in enumerate(strong.trace)]
            results.append({"state": i, "eps": eps, "N": N, "distance": dist})
            print(f"state {i} eps={eps:g} N={N}: |strong - stationary| = {dist:.3e}")
    _write_csv(out / "waveops.csv", ["state", "sign", "eps", "N", "n_theta", "distance", "strong_norm",
                                     "stationary_norm", "cauchy_last", "strong_leakage", "stationary_leakage"], rows)
    _write_csv(out / "waveops_trace.csv", ["state", "eps", "N", "checkpoint", "cauchy_delta"], trace_rows)
    return {"comparisons": results}


def _smatrix_one(model: WalkModel, cfg: RunConfig, theta: float) -> dict:
    sched = cfg.numerics.sched
    sigmas = cfg.numerics.sigma_schedule
    up = u_fiber(model, theta, +1, sigmas, cfg.numerics.horizon)
    um = u_fiber(model, theta, -1, sigmas, cfg.numerics.horizon)
    plus = smatrix_formula(model, theta, +1, sched, sigmas, u=up)
    minus = smatrix_formula(model, theta, -1, sched, sigmas, u=um)
    packet = smatrix_packet(model, theta, sigmas, cfg.numerics.horizon)
    fiber = plus.fiber
    pm = {}
    outgoing = [c for c in fiber.channels if not c.incoming]
    incoming = [c for c in fiber.channels if c.incoming]
    if outgoing and incoming:
        psi = model.free.wave_packet(model.window, outgoing[0], theta, 0.2)
        phi = model.free.wave_packet(model.window, incoming[0], theta, 0.2)
        pm["plus"] = pm_bis_check(model, theta, psi, phi, sched, +1, plus, up).residual
        pm["minus"] = pm_bis_check(model, theta, psi, phi, sched, -1, minus, um).residual
    return {"theta": theta, "samples": (plus, minus, packet),
            "plus_minus": modulus_distance(plus, minus), "packet": modulus_distance(plus, packet), "pm_bis": pm}


def cmd_smatrix(cfg: RunConfig, model: WalkModel, out: Path, args) -> dict:
    thetas = _thetas(args, cfg, model)
    eig = localized_eigenphases(model)
    for t in thetas:
        d, nearest = model.free.nearest_threshold(t)
        if d < cfg.numerics.exclusion:
            raise ThresholdProximityError(f"theta={angle(t)} is {d:.3g} rad from threshold {angle(nearest)}", t, nearest)
        for e in eig:
            if abs(np.angle(np.exp(1j * (t - e)))) < cfg.numerics.exclusion:
                raise ThresholdProximityError(f"theta={angle(t)} is close to eigenphase {angle(e)}", t, e)
    results = _pmap(lambda t: _smatrix_one(model, cfg, t), thetas, args.threads)
    rows, coef_rows, summary = [], [], []
    for res in results:
        labels = res["samples"][0].labels
        d = len(labels)
        for sample in res["samples"]:
            for b in range(d):
                for a in range(d):
                    z = complex(sample.matrix[b, a])
                    rows.append([angle(res["theta"]), d, d * d, sample.source, b, a, labels[b], labels[a], num(z.real),
                                 num(z.imag), num(abs(z)), num(res["plus_minus"]), num(res["packet"]),
                                 num(res["pm_bis"].get("plus", float("nan"))),
                                 num(res["pm_bis"].get("minus", float("nan")))])
        co = coefficients(res["samples"][0])
        for kind, table in (("transmission", co.transmission), ("reflection", co.reflection)):
            for pair, p in sorted(table.items()):
                coef_rows.append([angle(res["theta"]), kind, pair, num(p)])
        summary.append({"theta": res["theta"], "dim": d, "labels": list(labels),
                        "plus_minus_distance": res["plus_minus"], "packet_distance": res["packet"],
                        "pm_bis_residual": res["pm_bis"], "row_sums": list(co.row_sums),
                        "gauge": res["samples"][0].gauge_record(),
                        "diagnostics": {s.source: s.diagnostics for s in res["samples"]}})
        print(f"theta={angle(res['theta'])} d={d}: plus/minus {res['plus_minus']:.2e}, "
              f"formula/packet {res['packet']:.2e}, pm_bis {res['pm_bis']}")
    _write_csv(out / "smatrix.csv", ["theta", "dim", "dim_squared", "source", "row", "col", "row_label", "col_label", "re", "im",
                                     "abs", "plus_minus_distance", "packet_distance", "pm_bis_plus",
                                     "pm_bis_minus"], rows)
    _write_csv(out / "coefficients.csv", ["theta", "kind", "pair", "probability"], coef_rows)
    return {"samples": summary, "eigenphases": list(eig)}


def cmd_report(cfg: RunConfig, model: WalkModel, out: Path, args) -> dict:
    bundle = {"spectrum": cmd_spectrum(cfg, model, out, args), "verify": cmd_verify(cfg, model, out, args)}
    bundle["smatrix"] = cmd_smatrix(cfg, model, out, args)
    if cfg.run.states:
        bundle["waveops"] = cmd_waveops(cfg, model, out, args)
    return bundle


COMMANDS = {"spectrum": cmd_spectrum, "verify": cmd_verify, "waveops": cmd_waveops,
            "smatrix": cmd_smatrix, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uniscatter", description="Scattering of one-dimensional quantum walks.")
    p.add_argument("--version", action="version", version=f"uniscatter {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--theta", help="comma-separated angles in radians")
        sp.add_argument("--out", help="output directory (default from config)")
        sp.add_argument("--threads", type=int, help="worker threads for angle sweeps")
        sp.add_argument("--seed", type=int, help="seed for random test vectors")
    return p


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("UNISCATTER_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run_command(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit code."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = parse_config(args.config)
        args.threads = args.threads or cfg.run.threads
        args.seed = cfg.run.seed if args.seed is None else args.seed
        out = Path(args.out or cfg.run.output)
        out.mkdir(parents=True, exist_ok=True)
        model = cfg.build_model()
        result = COMMANDS[args.command](cfg, model, out, args)
        provenance = {"config_sha256": cfg.digest, "command": args.command, "uniscatter": __version__,
                      "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version(),
                      "threads": args.threads, "seed": args.seed}
        _write_json(out / f"{args.command}.json", {"provenance": provenance, "result": result})
    except ConfigError as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return exc.exit_code
    except UniscatterError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        logger.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    if args.command == "verify" and not result["all_passed"]:
        return NumericalError.exit_code
    if args.command == "report" and not result["verify"]["all_passed"]:
        return NumericalError.exit_code
    return 0


def main() -> None:
    sys.exit(run_command())
