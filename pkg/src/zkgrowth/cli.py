"""Command line: ``zkgrowth {simulate, verify, fit-growth, spectrum}``.

Exit status is 0 on success, 1 when a check or the computation fails and
2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import grid as _grid
from .errors import ZKError

log = logging.getLogger("zkgrowth")

INIT_KINDS = ("gaussian", "modes", "file")


class CheckFailed(Exception):
    """A verification assertion did not hold."""


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------
@dataclass
class SimulationConfig:
    """Flat JSON run description.

    ``init`` selects the initial data: ``gaussian`` uses ``amplitude``,
    ``width_x``, ``width_y``, ``center_x``, ``center_y`` (``None`` centres
    it in the box); ``modes`` sums ``amp * cos(xi_j x + mu_k y + phase)``
    over rows ``[j, k, amp, phase]``, drawing a phase from ``seed`` where it
    is ``None``; ``file`` reads a binary snapshot from ``file``.
    """

    nx: int = 256
    ny: int = 256
    box_x: float = 32 * np.pi
    box_y: float = 32 * np.pi
    init: str = "gaussian"
    amplitude: float = 1.0
    width_x: float = 2.0
    width_y: float = 2.0
    center_x: float | None = None
    center_y: float | None = None
    modes: list = field(default_factory=list)
    file: str | None = None
    dt: float = 1e-2
    cfl: float = 1.0
    t_end: float = 10.0
    snapshot_every: float = 1.0
    s_list: list = field(default_factory=lambda: [1, 2])
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("nx", "ny"):
            v = getattr(self, name)
            if int(v) != v or v < 8 or v % 2:
                raise ConfigError(f"{name} must be an even integer >= 8")
        for name in ("box_x", "box_y", "dt", "cfl", "snapshot_every", "width_x", "width_y"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.cfl > 1:
            raise ConfigError("cfl must not exceed 1")
        if self.t_end < 0:
            raise ConfigError("t_end must be non-negative")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}")
        if self.init == "file" and not self.file:
            raise ConfigError("init 'file' needs a file path")
        if not self.s_list or any(int(s) != s or s < 1 for s in self.s_list):
            raise ConfigError("s_list must hold integers >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def grid(self) -> _grid.SpectralGrid:
        return _grid.SpectralGrid(int(self.nx), int(self.ny), float(self.box_x),
                                  float(self.box_y))

    def initial_data(self) -> _grid.RealField2D:
        g = self.grid()
        if self.init == "file":
            u = _grid.read_snapshot(self.file)
            if u.grid.shape != g.shape:
                raise ConfigError("snapshot grid does not match the config grid")
            return _grid.RealField2D(g, u.values)
        x, y = g.coordinates()
        if self.init == "gaussian":
            cx = g.box_length_x / 2 if self.center_x is None else self.center_x
            cy = g.box_length_y / 2 if self.center_y is None else self.center_y
            v = self.amplitude * np.exp(-(x - cx) ** 2 / (2 * self.width_x ** 2)
                                        - (y - cy) ** 2 / (2 * self.width_y ** 2))
            return _grid.RealField2D(g, v)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 1])))
        v = np.zeros(g.shape)
        for row in self.modes:
            j, k, amp, phase = row
            if phase is None:
                phase = rng.uniform(0, 2 * np.pi)
            v += amp * np.cos(2 * np.pi * j / g.box_length_x * x
                              + 2 * np.pi * k / g.box_length_y * y + phase)
        return _grid.RealField2D(g, v)


# --- simulate ----------------------------------------------------------------------
def cmd_simulate(cfg: SimulationConfig, out: Path) -> int:
    from .dynamics import Solver, write_trajectory
    from .dyadic import shell_spectrum
    from .invariants import ConservedRecord, DiagnosticsWriter

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    u0 = cfg.initial_data()
    solver = Solver(u0.grid)
    state = solver.initial_state(u0, dt=cfg.dt, cfl=cfg.cfl)
    s_top = max(cfg.s_list)
    with DiagnosticsWriter(out / "diagnostics.csv") as diag, \
            open(out / "norms.csv", "w", newline="") as nf, \
            open(out / "spectrum.csv", "w", newline="") as sf:
        norms = csv.writer(nf)
        norms.writerow(["t"] + [f"h{s}" for s in cfg.s_list])
        spec = csv.writer(sf)
        spec.writerow(["t", "N", "energy"])

        def record(st):
            diag.write(ConservedRecord.of(st.t, st.u, s_top))
            norms.writerow([repr(float(st.t))]
                           + [repr(_grid.sobolev_norm(st.u, s)) for s in cfg.s_list])
            for N, e in shell_spectrum(st.u):
                spec.writerow([repr(float(st.t)), N, repr(e)])

        write_trajectory(out, solver, state, cfg.t_end,
                         cfg.snapshot_every if cfg.t_end > 0 else None, on_sample=record)
    log.info("wrote %s", out)
    return 0


# --- verify --------------------------------------------------------------------------
def _require(ok: bool, what: str):
    if not ok:
        raise CheckFailed(what)


def suite_linear(params: dict, out: Path, seed: int):
    from .bourgain import SpaceTimeField, hb_norm_phi, write_report, xsb_norm

    n = params.get("n", 64)
    box = params.get("box", 16 * np.pi)
    g = _grid.SpectralGrid(n, n, box, box)
    x, y = g.coordinates()
    c = box / 2
    f0 = _grid.RealField2D(g, np.exp(-((x - c) ** 2 + (y - c) ** 2) / 8))
    rows = []
    for T in params.get("T", [1, 0.5, 0.25]):
        flow = SpaceTimeField.linear_flow(f0, T)
        for s in params.get("s", [0, 1, 2]):
            for b in params.get("b", [0, 5 / 12, 1 / 2, 3 / 5]):
                r = xsb_norm(flow, s, b) / (hb_norm_phi(T, b) * _grid.sobolev_norm(f0, s))
                rows.append({"estimate_name": "linear_identity", "s": s, "b": b,
                             "bprime": "", "T": T, "grid": f"{n}x{n}", "ratio": r})
    write_report(out / "linear.csv", rows)
    for r in rows:
        _require(0.98 <= r["ratio"] <= 1.02,
                 f"linear identity at s={r['s']}, b={r['b']:.4g}, T={r['T']}: "
                 f"ratio {r['ratio']:.6f} outside [0.98, 1.02]")


def suite_bilinear(params: dict, out: Path, seed: int):
    from .bilinear import (bilinear_constant, block_product_ratio, exhaustive_block_max,
                           summarize, write_summary, write_trial_ledger)
    from .dyadic import DyadicBlockSpec as B

    p = {"rho": params.get("rho", 0.4), "delta": params.get("delta", 1 / 24)}
    trials = params.get("trials", 200)
    coarse, fine = [], []
    c0 = bilinear_constant("b2", p, trials, n=params.get("n", 32), seed=seed,
                           records=coarse, strict=False)
    c1 = bilinear_constant("b2", p, trials, n=params.get("n_refined", 48), seed=seed,
                           records=fine, strict=False)
    write_trial_ledger(out / "bilinear_trials.csv", coarse + fine)
    summary = {"b2": {"max": c0, "max_refined": c1, "increase": c1 / c0 - 1}}
    block_trials = params.get("block_trials", 100)
    blocks = {}
    for mode, s1, s2, ss in (("measure", B(1, 1), B(1, 1), None),
                             ("measure2", B(1, 1), B(4, 1), None),
                             ("measure3", B(4, 1), B(4, 1), "S1")):
        r = block_product_ratio(s1, s2, mode, block_trials, n=24, seed=seed, sign_set=ss)
        e = exhaustive_block_max(s1, s2, mode, n=16, sign_set=ss)
        blocks[mode] = {"trials_24": r, "exhaustive_16": e}
    summary["blocks"] = blocks
    summary["trials"] = summarize(coarse)
    write_summary(out / "bilinear_summary.json", summary)
    _require(np.isfinite(c0) and c1 <= 1.25 * c0,
             f"b2 max ratio {c0:.4g} -> {c1:.4g} under refinement exceeds +25%")
    for mode, v in blocks.items():
        q = v["trials_24"] / v["exhaustive_16"]
        _require(0.5 <= q <= 2.0, f"{mode}: trial max / exhaustive max = {q:.3g} not within 2x")


def measure_sample(count: int, seed: int):
    """Queries with the output frequency built from two cone points in the sign set."""
    from .bilinear import MeasureQuery, resonance
    from .grid import omega

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9])))
    out = []
    for k in range(count):
        N = int(rng.choice([4, 8, 16]))
        L1, L2 = (int(v) for v in rng.choice([1, 2, 4, 8], 2))
        ss = ("S1", "S2")[k % 2]
        r1, r2 = rng.uniform(0.8, 1.3, 2) * N
        sg = rng.choice([-1.0, 1.0])
        a = np.array([r1 / np.sqrt(6), sg * r1 / np.sqrt(2)])
        if ss == "S1":
            b = np.array([r2 / np.sqrt(6), -sg * r2 / np.sqrt(2)])
        else:
            b = -np.array([r2 / np.sqrt(6), sg * r2 / np.sqrt(2)])
        xi, mu = a + b
        tau = omega(xi, mu) - resonance(a[0], a[1], b[0], b[1]) + rng.uniform(-1, 1)
        out.append(MeasureQuery(float(xi), float(mu), float(tau), N, N, L1, L2, N / 16, ss))
    return out


def measure_chain_table(queries):
    """Chain ratios at ``h`` and ``h/2`` for each query.

    ``modulation_ratio`` is ``max(|tau - omega(xi, mu)|, L1, L2) / N1^3``; it
    records which side of the high-modulation regime each query lands on,
    without asserting that only one side occurs.
    """
    from dataclasses import replace as _replace

    from .bilinear import chain_ratio
    from .grid import omega

    rows = []
    for q in queries:
        r = [chain_ratio(q), chain_ratio(_replace(q, h=q.h / 2))]
        mod = max(abs(q.tau - omega(q.xi, q.mu)), q.L1, q.L2) / q.N1 ** 3
        rows.append({"N": q.N1, "L1": q.L1, "L2": q.L2, "sign_set": q.sign_set,
                     "chain_h": r[0], "chain_h2": r[1], "modulation_ratio": float(mod)})
    return rows


def suite_measures(params: dict, out: Path, seed: int):
    rows = measure_chain_table(measure_sample(params.get("count", 50), seed))
    with open(out / "measures.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        a, b = r["chain_h"], r["chain_h2"]
        _require(np.isfinite(a) and np.isfinite(b), f"non-finite chain ratio in {r}")
        if a == 0 and b == 0:
            continue
        _require(min(a, b) > 0 and max(a, b) / min(a, b) <= 2.0,
                 f"resolution doubling changed the chain ratio {a:.4g} -> {b:.4g} ({r})")


def suite_lemma13(params: dict, out: Path, seed: int):
    from .growth import convexity_holds, lemma13_constants, lemma13_margins

    k_max = params.get("k_max", 10 ** 5)
    envs = [lemma13_constants(K1, eps, f / eps)
            for K1 in params.get("K1", [0.1, 1, 10])
            for eps in params.get("eps", [0.3, 0.5, 0.9])
            for f in params.get("d_factor", [1.1, 2, 5])]
    margins = lemma13_margins(envs, k_max)
    conv = {d: convexity_holds(d, params.get("k_conv", 10 ** 6)) for d in (2, 3, 5)}
    doc = [{"K1": e.K1, "eps": e.eps, "d": e.d, "N": e.N, "log_K2": e.log_K2,
            "min_log_margin": float(m), "verified_to_k": k_max} for e, m in zip(envs, margins)]
    (out / "lemma13.json").write_text(json.dumps({"envelopes": doc, "convexity": conv},
                                                 indent=2))
    for row in doc:
        _require(row["min_log_margin"] >= 0, f"growth lemma bound violated for {row}")
    for d, ok in conv.items():
        _require(ok, f"convexity step fails for d={d}")


def suite_increments(params: dict, out: Path, seed: int):
    from .bourgain import SpaceTimeField
    from .dynamics import Solver
    from .growth import increment_decomposition

    n = params.get("n", 128)
    g = _grid.SpectralGrid(n, n, params.get("box", 16 * np.pi), params.get("box", 16 * np.pi))
    x, y = g.coordinates()
    c = g.box_length_x / 2
    u0 = _grid.RealField2D(g, np.exp(-((x - c) ** 2 + (y - c) ** 2) / 8))
    dt = params.get("dt", 1e-3)
    solver = Solver(g)
    st = solver.initial_state(u0, dt, 1.0)
    samples = [s for s in solver.run(st, 21 * dt, sample_every=dt)]
    traj = SpaceTimeField.from_snapshots(g, [s.t for s in samples],
                                         np.array([s.u.values for s in samples]))
    rows = []
    for s in params.get("s", [2, 3]):
        for t in (5 * dt, 10 * dt, 15 * dt):
            rep = increment_decomposition(traj, s, t)
            rows.append(dict(asdict(rep), s=s, I0_relative=rep.I0_relative))
    with open(out / "increments.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        _require(r["I0_relative"] <= 1e-10, f"I0 not negligible: {r}")
        rel = abs(r["total"] - r["hs_derivative"]) / abs(r["total"])
        _require(rel <= 1e-4, f"bookkeeping total vs finite difference off by {rel:.2e}: {r}")


SUITES = {"linear": suite_linear, "bilinear": suite_bilinear, "measures": suite_measures,
          "lemma13": suite_lemma13, "increments": suite_increments}


def cmd_verify(suite: str, params: dict, out: Path, seed: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    SUITES[suite](params, out, seed)
    log.info("suite %s passed", suite)
    return 0


# --- fit-growth and spectrum ------------------------------------------------------------
def read_history(manifest: Path, s: int):
    """``(t, ||u||_{H^s})`` from ``norms.csv`` beside the manifest, else from the snapshots."""
    norms = manifest.parent / "norms.csv"
    col = f"h{s}"
    if norms.exists():
        with open(norms, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and col in rows[0]:
            return [(float(r["t"]), float(r[col])) for r in rows]
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["t"]), _grid.sobolev_norm(
        _grid.read_snapshot(manifest.parent / r["snapshot_path"]), s)) for r in rows]


def cmd_fit_growth(manifest: Path, beta_grid, s: int, out: Path) -> int:
    from .growth import BETA_GRID, below_threshold, fit_growth, growth_report

    if not manifest.exists():
        raise FileNotFoundError(f"manifest {manifest} not found")
    history = read_history(manifest, s)
    beta, C = fit_growth(history, beta_grid or BETA_GRID)
    out.mkdir(parents=True, exist_ok=True)
    doc = growth_report(out / "growth.json", s=s, A=None, T_window=None, C0_measured=None,
                        beta_best=beta, envelope_C=C)
    doc["below_asymptotic_threshold"] = below_threshold(beta, s)
    (out / "growth.json").write_text(json.dumps(doc, indent=2))
    log.info("beta_best=%s C=%s", beta, C)
    return 0


def cmd_spectrum(snapshot: Path, out: Path, sharp: bool) -> int:
    from .dyadic import shell_spectrum

    u = _grid.read_snapshot(snapshot)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "shell_spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "energy"])
        for N, e in shell_spectrum(u, sharp=sharp):
            w.writerow([N, repr(e)])
    return 0


# --- entry point ----------------------------------------------------------------------
def _beta_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad beta grid {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration or parameter file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="64-bit seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for FFTs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="zkgrowth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the solver and write diagnostics")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES))
    f = sub.add_parser("fit-growth", parents=[common], help="fit a growth envelope")
    f.add_argument("manifest", type=Path)
    f.add_argument("--beta-grid", type=_beta_list, default=None,
                   help="comma separated exponents")
    f.add_argument("--s", type=int, default=2, help="Sobolev index of the history")
    sp = sub.add_parser("spectrum", parents=[common], help="dyadic shell spectrum of a snapshot")
    sp.add_argument("snapshot", type=Path)
    sp.add_argument("--sharp", action="store_true", help="weights that sum to the L2 norm")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    _grid.FFT_WORKERS = args.threads
    try:
        if args.command == "simulate":
            if args.config is None:
                parser.error("simulate needs --config")
            cfg = SimulationConfig.load(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
                cfg.validate()
            return cmd_simulate(cfg, args.out)
        if args.command == "verify":
            params = json.loads(args.config.read_text()) if args.config else {}
            seed = 0 if args.seed is None else args.seed
            return cmd_verify(args.suite, params, args.out, seed)
        if args.command == "fit-growth":
            return cmd_fit_growth(args.manifest, args.beta_grid, args.s, args.out)
        return cmd_spectrum(args.snapshot, args.out, args.sharp)
    except CheckFailed as e:
        print(f"FAILED: {e}", file=sys.stderr)
        return 1
    except (ZKError, ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
