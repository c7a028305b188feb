"""``mgpshrink`` command line: prior tables, shrinkage diagnostics, simulation study."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .factor_model import BASELINE, PAPER_SETTINGS, FactorModelConfig, PriorSetting, compare_settings
from .prior import MgpHyperparams, full_support_probe, lemma1_witness, tau_mean, theta_moment, MomentDoesNotExist
from .report import RunManifest, write_csv, write_json
from .shrinkage import DEFAULT_CAP, DEFAULT_TOL, estimate_quantile_table, lemma2_limit_check, shrinkage_region
from .specfun import DomainError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TABLE2_SETTINGS = ((1.0, 1.0), (1.0, 2.0), (1.0, 3.0), (2.0, 1.0), (2.0, 2.0), (2.0, 3.0))
WORKERS_ENV = "MGP_WORKERS"


class ConfigError(ValueError):
    """Invalid command-line or config-file input; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError([f"{WORKERS_ENV} must be an integer, got {raw!r}"]) from exc


def _outputs(args, stem: str, manifest: RunManifest, rows, payload, decimals=2, columns=None):
    out = Path(args.out)
    if args.format == "csv":
        path = out / f"{stem}.csv"
        manifest.outputs = [str(path)]
        manifest.stop()
        write_csv(path, rows, manifest, columns=columns, decimals=decimals)
    else:
        path = out / f"{stem}.json"
        manifest.outputs = [str(path)]
        manifest.stop()
        write_json(path, payload, manifest)
    return path


def _hp(args, default_a1, default_a2, default_k) -> MgpHyperparams:
    a1 = default_a1 if args.a1 is None else args.a1
    a2 = default_a2 if args.a2 is None else args.a2
    k = default_k if args.k is None else args.k
    try:
        return MgpHyperparams(a1, a2, k=k)
    except DomainError as exc:
        raise ConfigError([str(exc)]) from exc


# ---------------------------------------------------------------------------
# table1
# ---------------------------------------------------------------------------


def cmd_table1(args) -> int:
    hp = _hp(args, 1.0, 1.1, 4)
    n = args.samples or 1_000_000
    man = RunManifest("table1", {"a1": hp.a1, "a2": hp.a2, "k": hp.k}, seed=args.seed, samples=n)
    table = estimate_quantile_table(hp, n=n, seed=args.seed)
    rows = table.rows()
    path = _outputs(args, "table1", man, rows, {"rows": rows, "probs": table.probs})
    for r in rows:
        print("  ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# table2
# ---------------------------------------------------------------------------


def _parse_settings(items) -> list[tuple[float, float]]:
    out, problems = [], []
    for item in items:
        try:
            a1, a2 = (float(v) for v in item.split(","))
            MgpHyperparams(a1, a2)
            out.append((a1, a2))
        except (ValueError, DomainError):
            problems.append(f"bad setting {item!r}: expected 'a1,a2' with both > 0")
    if problems:
        raise ConfigError(problems)
    return out


def _region_job(job):
    a1, a2, k, n, cap, tol, seed = job
    return shrinkage_region(MgpHyperparams(a1, a2, k=k), n=n, cap=cap, tol=tol, seed=seed)


def cmd_table2(args) -> int:
    if args.settings:
        settings = _parse_settings(args.settings)
    elif args.a1 is not None or args.a2 is not None:
        settings = [(args.a1 or 1.0, args.a2 or 1.0)]
    else:
        settings = list(TABLE2_SETTINGS)
    k = args.k or 5
    n = args.samples or 1_000_000
    if k < 2:
        raise ConfigError(["table2 needs k >= 2"])
    if not args.cap > 1e-4 or not args.tol > 0:
        raise ConfigError(["cap must exceed 1e-4 and tol must be > 0"])
    man = RunManifest("table2", {"settings": settings, "k": k, "cap": args.cap, "tol": args.tol}, seed=args.seed, samples=n)
    jobs = [(a1, a2, k, n, args.cap, args.tol, args.seed) for a1, a2 in settings]
    nw = workers()
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(nw) as pool:
            regions = list(pool.map(_region_job, jobs))
    else:
        regions = [_region_job(j) for j in jobs]
    rows, payload = [], []
    for (a1, a2), reg in zip(settings, regions):
        row = {"a1": a1, "a2": a2}
        for b in reg.bounds:
            row[f"h{b.h}"] = b.render(2)
        row["intersection"] = reg.render_intersection(2)
        rows.append(row)
        payload.append({
            "a1": a1, "a2": a2,
            "bounds": [{"h": b.h, "bound": b.value(), "exceeds_cap": b.exceeds_cap, "indeterminate": b.indeterminate,
                        "min_z": b.min_z} for b in reg.bounds],
            "intersection": reg.intersection,
        })
        print(f"a1={a1:g} a2={a2:g}: " + "  ".join(b.render(2) for b in reg.bounds) + f"  | {reg.render_intersection(2)}")
    path = _outputs(args, "table2", man, rows, {"rows": payload, "cap": args.cap})
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _moment_rows(hp: MgpHyperparams) -> list[dict]:
    rows = []
    for h in range(1, hp.k + 1):
        try:
            e_theta = theta_moment(h, 1.0, hp)
        except MomentDoesNotExist:
            e_theta = math.inf
        rows.append({"h": h, "E_tau": tau_mean(h, hp), "E_theta": e_theta})
    return rows


def diagnose(hp: MgpHyperparams, n: int = 200_000, cap: float = DEFAULT_CAP, tol: float = DEFAULT_TOL, seed: int = 0) -> dict:
    """Collect the hyperparameter checks and a one-line verdict."""
    region = shrinkage_region(hp, n=n, cap=cap, tol=tol, seed=seed) if hp.k >= 2 else None
    moments = _moment_rows(hp)
    witness = None
    if hp.a2 > 1 and hp.a1 >= hp.a2:
        m = lemma1_witness(hp)
        witness = {"m": m, "E_theta1_m": theta_moment(1, m, hp), "E_theta2_m": theta_moment(2, m, hp)}
    lemma2 = {h: lemma2_limit_check(hp, h).verdict for h in range(1, min(hp.k, 3))}
    quart = estimate_quantile_table(hp, n=max(n, 10_000), seed=seed)
    medians = quart.theta_q[:, 1]

    if region is None:
        head = "single column: no ordering to check"
    elif region.exceeds_cap:
        head = f"shrinkage region exceeds cap (>{cap:g})"
    else:
        head = f"cumulative shrinkage only on (0, {region.intersection:.2f}]"
    flags = []
    if hp.k >= 2 and np.all(np.diff(medians) > 0):
        flags.append("theta quartiles increase with h (apparent anti-shrinkage)")
    e_theta = np.array([r["E_theta"] for r in moments])
    if hp.k >= 2 and np.all(np.isfinite(e_theta)) and np.all(np.diff(e_theta) > 0):
        flags.append("E(theta_h) increases with h")
    if region is not None and region.indeterminate:
        flags.append("some bounds are within Monte Carlo noise")
    verdict = "; ".join([head] + flags)
    return {
        "verdict": verdict,
        "region": None if region is None else {
            "bounds": [b.value() for b in region.bounds],
            "rendered": [b.render(2) for b in region.bounds],
            "intersection": region.intersection,
        },
        "moments": moments,
        "theta_quartiles": quart.theta_q.tolist(),
        "lemma1_witness": witness,
        "lemma2": lemma2,
    }


def cmd_diagnose(args) -> int:
    hp = _hp(args, 2.0, 3.0, 5)
    n = args.samples or 200_000
    man = RunManifest("diagnose", {"a1": hp.a1, "a2": hp.a2, "k": hp.k, "cap": args.cap}, seed=args.seed, samples=n)
    result = diagnose(hp, n=n, cap=args.cap, tol=args.tol, seed=args.seed)
    rows = [dict(r, lemma2=result["lemma2"].get(r["h"], "")) for r in result["moments"]]
    path = _outputs(args, "diagnose", man, rows, result, decimals=4)
    if result["region"]:
        print("bounds:", " ".join(result["region"]["rendered"]))
    if result["lemma1_witness"]:
        w = result["lemma1_witness"]
        print(f"lemma 1 witness m={w['m']:.4f}: E(theta_2^m)={w['E_theta2_m']:.4f} > E(theta_1^m)={w['E_theta1_m']:.4f}")
    print("verdict:", result["verdict"])
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# support-probe and density-check
# ---------------------------------------------------------------------------


def cmd_support_probe(args) -> int:
    hp = _hp(args, 3.0, 3.0, 3)
    n = args.samples or 10_000_000
    targets = []
    problems = []
    for t in args.target or ["0.5,0.25,0.125", "1,1,1", "10,10,10"]:
        try:
            v = [float(x) for x in t.split(",")]
        except ValueError:
            v = []
        if len(v) != hp.k or not all(x > 0 for x in v):
            problems.append(f"target {t!r} must list {hp.k} positive values")
        targets.append(v)
    if problems:
        raise ConfigError(problems)
    if not args.eps > 0:
        raise ConfigError(["eps must be > 0"])
    man = RunManifest("support-probe", {"a1": hp.a1, "a2": hp.a2, "k": hp.k, "eps": args.eps, "targets": targets},
                      seed=args.seed, samples=n)
    rows = []
    for v in targets:
        freq = full_support_probe(v, args.eps, n, hp, seed=args.seed)
        rows.append({"target": " ".join(f"{x:g}" for x in v), "eps": args.eps, "hits": int(round(freq * n)), "frequency": freq})
        print(f"target ({', '.join(f'{x:g}' for x in v)}): {rows[-1]['hits']} hits, frequency {freq:.3e}")
    path = _outputs(args, "support_probe", man, rows, {"rows": rows}, decimals=None)
    print(f"wrote {path}")
    return 0


def cmd_density_check(args) -> int:
    hp = _hp(args, 2.0, 3.0, 3)
    hs = args.h or [1, 2]
    man = RunManifest("density-check", {"a1": hp.a1, "a2": hp.a2, "h": hs}, seed=None)
    rows, payload = [], {}
    for h in hs:
        v = lemma2_limit_check(hp, h)
        payload[h] = {"verdict": v.verdict, "traces": [
            {"theta_prev": tr.theta_prev, "theta": tr.thetas, "log_ratio": tr.log_ratio} for tr in v.traces]}
        for tr in v.traces:
            for t, lr in zip(tr.thetas, tr.log_ratio):
                rows.append({"h": h, "theta_prev": tr.theta_prev, "theta": float(t), "log_ratio": float(lr), "verdict": v.verdict})
        print(f"h={h}: {v.verdict}")
    path = _outputs(args, "density_check", man, rows, payload, decimals=None)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# simstudy
# ---------------------------------------------------------------------------

PRESETS = {
    "full": {"iterations": 35_000, "burnin": 5_000},
    "desk": {"iterations": 2_500, "burnin": 500},
}


@dataclass
class SimStudyConfig:
    p: int = 10
    n: int = 100
    k0: list = field(default_factory=lambda: [2, 6])
    k_trunc: int = 10
    a_sigma: float = 1.0
    b_sigma: float = 0.3
    upsilon: float = 3.0
    iterations: int = 35_000
    burnin: int = 5_000
    seed: int = 0
    replicates: int = 1
    settings: list = field(default_factory=lambda: [
        {"label": s.label, "kind": s.kind, "a1": s.a1, "a2": s.a2} for s in (*PAPER_SETTINGS, BASELINE)])

    def validate(self) -> None:
        """Raise ConfigError listing every problem; called before any sampling."""
        problems = []
        for name in ("p", "n", "k_trunc", "iterations", "replicates"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                problems.append(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.burnin, int) or self.burnin < 0:
            problems.append(f"burnin must be a nonnegative integer, got {self.burnin!r}")
        elif isinstance(self.iterations, int) and self.iterations <= self.burnin:
            problems.append("iterations must exceed burnin")
        for name in ("a_sigma", "b_sigma", "upsilon"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                problems.append(f"{name} must be > 0, got {v!r}")
        if not isinstance(self.k0, list) or not self.k0 or not all(isinstance(k, int) and k >= 0 for k in self.k0):
            problems.append("k0 must be a nonempty list of nonnegative integers")
        if not self.settings:
            problems.append("settings must list at least one prior setting")
        labels = []
        for i, s in enumerate(self.settings or []):
            try:
                ps = PriorSetting(**s)
                if ps.kind == "mgp":
                    MgpHyperparams(ps.a1, ps.a2)
                elif not (ps.shape > 0 and ps.rate > 0):
                    raise DomainError("baseline shape and rate must be > 0")
                labels.append(ps.label)
            except (TypeError, DomainError) as exc:
                problems.append(f"settings[{i}]: {exc}")
        if len(set(labels)) != len(labels):
            problems.append("setting labels must be unique")
        if problems:
            raise ConfigError(problems)

    def prior_settings(self) -> list[PriorSetting]:
        return [PriorSetting(**s) for s in self.settings]

    def base(self) -> FactorModelConfig:
        return FactorModelConfig(
            p=self.p, n=self.n, k0=self.k0[0], k_trunc=self.k_trunc,
            hp=MgpHyperparams(2.0, 3.0, k=self.k_trunc, upsilon=self.upsilon),
            a_sigma=self.a_sigma, b_sigma=self.b_sigma, iterations=self.iterations, burnin=self.burnin, seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_simstudy_config(path=None, preset: str = "full", overrides: dict | None = None) -> SimStudyConfig:
    """Preset values, then the config file (TOML or JSON), then overrides."""
    if preset not in PRESETS:
        raise ConfigError([f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
    values = dict(PRESETS[preset])
    if path is not None:
        path = Path(path)
        try:
            text = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        try:
            data = tomllib.loads(text.decode()) if path.suffix == ".toml" else json.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
        known = {f.name for f in fields(SimStudyConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if isinstance(values.get("k0"), int):
        values["k0"] = [values["k0"]]
    cfg = SimStudyConfig(**values)
    cfg.validate()
    return cfg


def run_simstudy(cfg: SimStudyConfig):
    cfg.validate()
    settings = cfg.prior_settings()
    mgp_labels = [s.label for s in settings if s.kind == "mgp"] or [s.label for s in settings]
    return compare_settings(settings, k0_list=cfg.k0, replicates=cfg.replicates, seed=cfg.seed,
                            base=cfg.base(), count_among=mgp_labels, workers=workers())


def cmd_simstudy(args) -> int:
    overrides = {"seed": args.seed if args.seed_given else None}
    if args.samples:
        base = load_simstudy_config(args.config, args.preset)
        overrides["iterations"] = base.burnin + args.samples
    if args.replicates:
        overrides["replicates"] = args.replicates
    cfg = load_simstudy_config(args.config, args.preset, overrides)
    man = RunManifest("simstudy", cfg.to_dict(), seed=cfg.seed, samples=cfg.iterations - cfg.burnin)
    cmp = run_simstudy(cfg)
    summary = []
    for k0 in cmp.k0_list:
        for rep in range(cmp.replicates):
            for s in cmp.settings:
                summary.append({
                    "setting": s.label, "k0": k0, "replicate": rep,
                    "best_count": cmp.best_counts.get((s.label, k0, rep)),
                    "median_d": cmp.median(s.label, k0, rep),
                })
    for k0 in cmp.k0_list:
        meds = "  ".join(f"{s.label}: {cmp.median_of_medians(s.label, k0):.3f}" for s in cmp.settings)
        print(f"k0={k0}  {meds}")
        print(f"       best counts {cmp.total_best_counts(k0)}")
    out = Path(args.out)
    man.stop()
    if args.format == "csv":
        summary_path = out / "simstudy_summary.csv"
        d_path = out / "simstudy_d.csv"
        man.outputs = [str(summary_path), str(d_path)]
        d_rows = []
        for (label, k0, rep), r in cmp.reports.items():
            d_rows.extend({"setting": label, "k0": k0, "replicate": rep, **row} for row in r.rows())
        write_csv(summary_path, summary, man, decimals=None)
        write_csv(d_path, d_rows, man, decimals=None)
    else:
        path = out / "simstudy.json"
        man.outputs = [str(path)]
        reports = [{
            "setting": label, "k0": k0, "replicate": rep, "median_d": r.median_d, "d": r.d,
            "mean_theta": r.mean_theta, "ess": r.ess, "metadata": r.metadata,
        } for (label, k0, rep), r in cmp.reports.items()]
        write_json(path, {"summary": summary, "reports": reports}, man)
    print("wrote", ", ".join(man.outputs))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _shared(p: argparse.ArgumentParser):
    p.add_argument("--a1", type=float, default=None)
    p.add_argument("--a2", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="truncation level")
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo size (retained sweeps for simstudy)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgpshrink", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table1", help="quartiles of tau_h, theta_h and loading IQRs")
    _shared(p)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("table2", help="shrinkage-region bounds per transition")
    _shared(p)
    p.add_argument("--settings", nargs="+", metavar="A1,A2")
    p.add_argument("--cap", type=float, default=DEFAULT_CAP)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_table2)

    p = sub.add_parser("diagnose", help="hyperparameter checks with a one-line verdict")
    _shared(p)
    p.add_argument("--cap", type=float, default=DEFAULT_CAP)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simstudy", help="factor-model simulation study")
    _shared(p)
    p.add_argument("--config", default=None, help="TOML or JSON file with study settings")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--replicates", type=int, default=None)
    p.set_defaults(func=cmd_simstudy)

    p = sub.add_parser("support-probe", help="box-event frequencies around target variance vectors")
    _shared(p)
    p.add_argument("--target", action="append", metavar="T1,...,Tk")
    p.add_argument("--eps", type=float, default=1.5)
    p.set_defaults(func=cmd_support_probe)

    p = sub.add_parser("density-check", help="small-theta density ratio traces")
    _shared(p)
    p.add_argument("--h", type=int, action="append")
    p.set_defaults(func=cmd_density_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"error: {msg}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
