"""``quadpursuit`` command line.

Exit status is 0 on success, 2 when inputs fail validation and 3 when a run
fails at runtime (numeric blow-up, I/O, a league locked by another process).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from ._util import atomic_write, derive_seed, stable_hash
from .config import ConfigError, LabConfig, load_config
from .distill import distill_heuristic
from .env import OBS_DIM, ROLES, PursuitEvasionBatch, other_role, trajectory_rows, write_trajectory_csv
from .league import LeagueLockedError, LeagueManifest, load_manifest, run_league
from .policies import GaussianPolicy, Heuristic, PolicyFileError, PolicyRecord, load_policy, save_policy
from .ppo import NonFiniteLossError, train_stage
from .simcheck import run_sim_checks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
HEURISTICS = ("hover", "circular", "repel")
MANEUVER_ID = "scripted.full_tilt"


class UsageError(ValueError):
    pass


def heuristic_record(kind: str, role: str) -> PolicyRecord:
    # a scripted pursuer holds the arena center, matching the league's seed pursuer
    h = Heuristic(kind, hold="center") if role == "pursuer" and kind == "hover" else Heuristic(kind)
    return PolicyRecord(f"{role}.{kind}", role, "heuristic", 0, heuristic=h)


def resolve_policy(spec: str, role: str, manifest: LeagueManifest | None = None) -> PolicyRecord:
    """A league id, a heuristic name or a path to a PEPO file."""
    if manifest is not None:
        try:
            rec = manifest.record(spec)
        except KeyError:
            pass
        else:
            if rec.role != role:
                raise UsageError(f"{spec!r} is a {rec.role}, expected a {role}")
            return rec
    if spec in HEURISTICS:
        return heuristic_record(spec, role)
    if Path(spec).is_file():
        return load_policy(spec, expected_role=role)
    raise UsageError(f"unknown policy {spec!r}: not a league id, heuristic name or policy file")


def _manifest(directory) -> LeagueManifest | None:
    return load_manifest(directory) if directory else None


def write_provenance(path: Path, cfg: LabConfig, args, **extra) -> None:
    """Sidecar ``<path>.meta.json`` for outputs whose column layout is fixed."""
    # output locations are left out so identical runs in different places match bitwise
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "dir", "report", "config")}
    doc = {"config_hash": cfg.hash(), "command": args.command, "flags": flags, **extra}
    atomic_write(Path(f"{path}.meta.json"), (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _report_format(path: Path, fmt: str | None) -> str:
    return fmt or ("json" if path.suffix == ".json" else "csv")


def cmd_sim_check(args, cfg: LabConfig) -> int:
    results = run_sim_checks(cfg.quad, cfg.dt_s)
    if args.json:
        print(json.dumps({"config_hash": cfg.hash(), "checks": [
            {"name": r.name, "value": r.value, "tolerance": r.tolerance, "passed": r.passed} for r in results]},
            indent=2))
    else:
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name} = {r.value:.3e} (< {r.tolerance:g})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def initial_learner(cfg: LabConfig, role: str, init: str, seed: int) -> GaussianPolicy:
    modality = cfg.league.modality
    if init == "distill":
        teacher = heuristic_record("hover", role).heuristic
        return distill_heuristic(teacher, role, modality, cfg.env_config(), OBS_DIM[role], seed)
    return GaussianPolicy.init(OBS_DIM[role], modality, np.random.default_rng(seed),
                               log_std=cfg.ppo.init_log_std)


def cmd_train_stage(args, cfg: LabConfig) -> int:
    ppo = cfg.ppo if args.steps is None else dataclasses.replace(cfg.ppo, total_env_steps=args.steps)
    opponent = resolve_policy(args.opponent, other_role(args.role), _manifest(args.dir))
    init = args.init or ("distill" if cfg.league.distill_seed_policies else "fresh")
    env_config = cfg.env_config()
    learner = initial_learner(cfg, args.role, init, derive_seed(args.seed, 0))
    result = train_stage(args.role, learner, lambda rng: opponent, env_config, ppo, derive_seed(args.seed, 1))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_hash = stable_hash(cfg.to_dict(), ppo, init, opponent.id)
    record = PolicyRecord(f"{args.role}.trained", args.role, cfg.league.modality, 1, policy=result.policy,
                          metadata={"seed": str(args.seed), "config_hash": config_hash, "opponent": opponent.id})
    save_policy(record, out / "policy.pepo")
    result.curve.to_csv(out / "curve.csv")
    write_provenance(out / "curve.csv", cfg, args, stage_hash=config_hash)
    print(f"wrote {out / 'policy.pepo'} and {out / 'curve.csv'} (config {config_hash})")
    return EXIT_OK


def cmd_league_run(args, cfg: LabConfig) -> int:
    settings = cfg.league if args.p_old is None else dataclasses.replace(cfg.league, p_old=args.p_old)
    ppo = cfg.ppo if args.steps is None else dataclasses.replace(cfg.ppo, total_env_steps=args.steps)
    stages = cfg.run.stages if args.stages is None else args.stages
    if stages < 0:
        raise UsageError("--stages must be >= 0")
    seed = cfg.run.master_seed if args.seed is None else args.seed

    def progress(m):
        e = m.stage_log[-1]
        print(f"stage {e.stage_index} ({e.role}) -> {e.policy_id or 'rejected'}", flush=True)

    m = run_league(args.dir, stages, cfg.env_config(), ppo, settings, seed, resume=args.resume, on_stage=progress)
    print(f"league at {args.dir}: {len(m.stage_log)} stages, "
          f"{len(m.pursuer_population)} pursuers, {len(m.evader_population)} evaders")
    return EXIT_OK


def cmd_eval(args, cfg: LabConfig) -> int:
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    env_config = cfg.env_config()
    manifest = _manifest(args.dir)
    out = Path(args.out)

    if args.matrix:
        if manifest is None:
            raise UsageError("--matrix needs --dir")
        ids = args.benchmarks.split(",") if args.benchmarks else None
        report = bench.capture_matrix(manifest, ids, args.episodes, args.seed, env_config)
        header, rows = bench.staircase_table(manifest, report, ids)
        bench.write_staircase_csv(header, rows, out)
        write_provenance(out, cfg, args, report_hash=report.config_hash)
        if args.report:
            bench.emit_report(report, args.report, _report_format(Path(args.report), args.format))
        for row in rows:
            print(" ".join(["-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in row]))
        return EXIT_OK

    if args.cross:
        specs = (args.rate_pursuer, args.vel_pursuer, args.rate_evader, args.vel_evader)
        if not all(specs):
            raise UsageError("--cross needs --rate-pursuer, --vel-pursuer, --rate-evader and --vel-evader")
        roles = ("pursuer", "pursuer", "evader", "evader")
        recs = [resolve_policy(s, r, manifest) for s, r in zip(specs, roles)]
        report = bench.cross_modality_suite(*recs, args.episodes, args.seed, env_config)
    else:
        report = bench.EvalReport(args.seed, cfg.hash())
        maneuver = bench.full_tilt_maneuver(cfg.quad, dt_s=cfg.dt_s)
        report.max_speed[MANEUVER_ID] = (maneuver.peak_speed_mps, maneuver.peak_body_rate_radps)
        where = ("never" if maneuver.distance_at_threshold_m is None
                 else f"after {maneuver.distance_at_threshold_m:.2f} m")
        print(f"{MANEUVER_ID}: peak {maneuver.peak_speed_mps:.2f} m/s, 12.9 m/s reached {where}")
        specs = args.policy or []
        for spec in specs:
            role = args.role or (manifest.record(spec).role if manifest and _has(manifest, spec) else "pursuer")
            rec = resolve_policy(spec, role, manifest)
            v, w = bench.max_speed_probe(rec, args.duration, args.seed, n_rollouts=args.episodes,
                                         env_config=env_config)
            report.max_speed[rec.id] = (v, w)
            print(f"{rec.id}: max |v| {v:.2f} m/s, max |w| {w:.2f} rad/s")

    bench.emit_report(report, out, _report_format(out, args.format))
    for p in report.pairs:
        print(f"{p.pursuer_id} vs {p.evader_id}: capture rate {p.capture_rate:.4f} ({p.captures}/{p.episodes})")
    return EXIT_OK


def _has(manifest: LeagueManifest, policy_id: str) -> bool:
    try:
        manifest.record(policy_id)
    except KeyError:
        return False
    return True


def cmd_replay_export(args, cfg: LabConfig) -> int:
    manifest = _manifest(args.dir)
    pursuer = resolve_policy(args.policy_p, "pursuer", manifest)
    evader = resolve_policy(args.policy_e, "evader", manifest)
    env = PursuitEvasionBatch(cfg.env_config(), 1, seed=args.seed, auto_reset=False)
    rows = np.arange(1)
    records = []
    while not env.done[0]:
        out = env.step(pursuer.command(env, rows), evader.command(env, rows))
        records.extend(trajectory_rows(env, out))
    write_trajectory_csv(records, args.out)
    write_provenance(Path(args.out), cfg, args)
    print(f"wrote {len(records)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadpursuit", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="lab configuration JSON (default: shipped defaults)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim-check", help="integrator self-check")
    s.add_argument("--json", action="store_true", help="machine-readable output")
    s.set_defaults(func=cmd_sim_check)

    s = sub.add_parser("train-stage", help="train one policy against a fixed opponent")
    s.add_argument("--role", required=True, choices=ROLES)
    s.add_argument("--opponent", required=True, help="heuristic name, league id (with --dir) or policy file")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--dir", help="league directory for resolving opponent ids")
    s.add_argument("--steps", type=int, help="override total env steps")
    s.add_argument("--init", choices=("fresh", "distill"), help="starting weights")
    s.set_defaults(func=cmd_train_stage)

    s = sub.add_parser("league-run", help="alternating self-play league")
    s.add_argument("--dir", required=True)
    s.add_argument("--stages", type=int)
    s.add_argument("--p-old", type=float, dest="p_old")
    s.add_argument("--seed", type=int, help="master seed")
    s.add_argument("--steps", type=int, help="override env steps per stage")
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_league_run)

    s = sub.add_parser("eval", help="benchmarks")
    mode = s.add_mutually_exclusive_group(required=True)
    mode.add_argument("--matrix", action="store_true", help="staircase capture matrix")
    mode.add_argument("--cross", action="store_true", help="cross-modality matchups")
    mode.add_argument("--max-speed", action="store_true", dest="max_speed", help="peak speed probe")
    s.add_argument("--dir", help="league directory")
    s.add_argument("--episodes", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "json"))
    s.add_argument("--report", help="with --matrix: also write the full report here")
    s.add_argument("--benchmarks", help="with --matrix: comma-separated evader ids")
    s.add_argument("--rate-pursuer")
    s.add_argument("--vel-pursuer")
    s.add_argument("--rate-evader")
    s.add_argument("--vel-evader")
    s.add_argument("--policy", action="append", help="with --max-speed: policy to probe (repeatable)")
    s.add_argument("--role", choices=ROLES, help="with --max-speed: role of policies given by name")
    s.add_argument("--duration", type=float, default=5.0, help="with --max-speed: seconds per rollout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("replay-export", help="one seeded episode as a trajectory CSV")
    s.add_argument("--policy-p", required=True, dest="policy_p")
    s.add_argument("--policy-e", required=True, dest="policy_e")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dir", help="league directory for resolving ids")
    s.set_defaults(func=cmd_replay_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError, PolicyFileError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LeagueLockedError, NonFiniteLossError, FloatingPointError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
