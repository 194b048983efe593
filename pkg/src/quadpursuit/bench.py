"""Evaluation harness: capture rates, staircase matrices, speed probes, reports.

Both sides act deterministically in every evaluation. An episode counts as a
capture or a timeout; ground contact is tallied separately in ``crashes`` but
does not end the episode, so a crashed uncaptured episode is also a timeout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from ._util import atomic_write, stable_hash
from .control import ActionCommand, InnerLoop
from .dynamics import QuadParams, QuadState, step
from .env import EnvConfig, PursuitEvasionBatch, role_index
from .policies import RATE, VELOCITY, PolicyRecord

REPORT_SCHEMA_VERSION = 1
PAIR_COLUMNS = ("pursuer_id", "evader_id", "episodes", "captures", "timeouts", "crashes",
                "mean_capture_time_s", "capture_rate")
CSV_COLUMNS = ("kind", *PAIR_COLUMNS, "policy_id", "max_linear_mps", "max_angular_radps",
               "seed", "config_hash")

# published cross-modality rates; carried as labelled reference rows only
CROSS_MODALITY_REFERENCE = (("rate", "velocity", 0.5703), ("velocity", "rate", 0.1367))
RETENTION_REFERENCE = {"hover_stage6_p_old_0.75": 0.9766, "hover_stage6_p_old_0.0": 0.6445,
                       "hover_stage1": 0.9805}


@dataclass(frozen=True)
class PairResult:
    pursuer_id: str
    evader_id: str
    episodes: int
    captures: int
    timeouts: int
    crashes: int
    mean_capture_time_s: float | None
    capture_rate: float

    def __post_init__(self):
        if self.captures + self.timeouts != self.episodes:
            raise ValueError("captures + timeouts must equal episodes")


@dataclass
class EvalReport:
    seed: int
    config_hash: str
    pairs: list[PairResult] = field(default_factory=list)
    max_speed: dict[str, tuple[float, float]] = field(default_factory=dict)
    references: list[dict] = field(default_factory=list)
    policy_mode: str = "deterministic"

    def pair(self, pursuer_id: str, evader_id: str) -> PairResult:
        for p in self.pairs:
            if (p.pursuer_id, p.evader_id) == (pursuer_id, evader_id):
                return p
        raise KeyError((pursuer_id, evader_id))

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "policy_mode": self.policy_mode,
            "pairs": [asdict(p) for p in self.pairs],
            "max_speed": [{"policy_id": k, "max_linear_mps": v[0], "max_angular_radps": v[1]}
                          for k, v in self.max_speed.items()],
            "references": list(self.references),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        validate_report(d)
        return cls(
            seed=d["seed"], config_hash=d["config_hash"], policy_mode=d["policy_mode"],
            pairs=[PairResult(**p) for p in d["pairs"]],
            max_speed={m["policy_id"]: (m["max_linear_mps"], m["max_angular_radps"]) for m in d["max_speed"]},
            references=list(d["references"]),
        )


_NUM_OR_NULL = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "config_hash", "policy_mode", "pairs", "max_speed", "references"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "config_hash": {"type": "string"},
        "policy_mode": {"enum": ["deterministic", "stochastic"]},
        "pairs": {"type": "array", "items": {
            "type": "object",
            "required": list(PAIR_COLUMNS),
            "properties": {
                "pursuer_id": {"type": "string"}, "evader_id": {"type": "string"},
                "episodes": {"type": "integer", "minimum": 1}, "captures": {"type": "integer", "minimum": 0},
                "timeouts": {"type": "integer", "minimum": 0}, "crashes": {"type": "integer", "minimum": 0},
                "mean_capture_time_s": _NUM_OR_NULL,
                "capture_rate": {"type": "number", "minimum": 0, "maximum": 1},
            },
        }},
        "max_speed": {"type": "array", "items": {
            "type": "object", "required": ["policy_id", "max_linear_mps", "max_angular_radps"]}},
        "references": {"type": "array"},
    },
}


def validate_report(d: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``d`` is not a report document."""
    jsonschema.validate(d, REPORT_SCHEMA)


def _eval_config(config: EnvConfig | None) -> EnvConfig:
    return config or EnvConfig()


def evaluate_pair(pursuer: PolicyRecord, evader: PolicyRecord, n_episodes: int, seed: int,
                  env_config: EnvConfig | None = None) -> PairResult:
    if pursuer.role != "pursuer" or evader.role != "evader":
        raise ValueError(f"need a pursuer and an evader, got {pursuer.role} {pursuer.id!r} "
                         f"and {evader.role} {evader.id!r}")
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    cfg = _eval_config(env_config)
    env = PursuitEvasionBatch(cfg, n_episodes, seed=seed, auto_reset=False)
    rows = np.arange(n_episodes)
    captured = np.zeros(n_episodes, dtype=bool)
    crashed = np.zeros(n_episodes, dtype=bool)
    capture_step = np.zeros(n_episodes)
    while not env.done.all():
        out = env.step(pursuer.command(env, rows), evader.command(env, rows))
        crashed |= out.crashed_pursuer
        captured |= out.captured
        capture_step = np.where(out.captured, env.t, capture_step)
    captures = int(captured.sum())
    mean_time = float(capture_step[captured].mean() * cfg.dt_s) if captures else None
    return PairResult(pursuer.id, evader.id, n_episodes, captures, n_episodes - captures,
                      int((crashed & ~captured).sum()), mean_time, captures / n_episodes)


def _admission(record: PolicyRecord) -> int:
    return int(record.stage_index)


def staircase_rows(manifest, benchmark_ids=None) -> list[tuple[int, PolicyRecord, list[PolicyRecord]]]:
    """(stage, newest pursuer after that stage, benchmarks introduced by then) per logged stage."""
    evaders = {r.id: r for r in manifest.evader_population}
    if benchmark_ids is None:
        benchmark_ids = [r.id for r in sorted(manifest.evader_population, key=_admission)]
    unknown = [b for b in benchmark_ids if b not in evaders]
    if unknown:
        raise KeyError(f"unknown benchmark id(s): {', '.join(unknown)}")
    out = []
    for entry in manifest.stage_log:
        k = entry.stage_index
        pursuers = [p for p in manifest.pursuer_population if _admission(p) <= k]
        newest = max(pursuers, key=_admission)
        available = [evaders[b] for b in benchmark_ids if _admission(evaders[b]) <= k]
        out.append((k, newest, available))
    return out


def capture_matrix(manifest, benchmark_ids, n_episodes: int, seed: int,
                   env_config: EnvConfig | None = None) -> EvalReport:
    """Evaluate each stage's newest pursuer against every benchmark introduced by that stage."""
    report = EvalReport(seed, stable_hash(_eval_config(env_config), manifest.p_old))
    done: dict[tuple[str, str], PairResult] = {}
    for _, pursuer, available in staircase_rows(manifest, benchmark_ids):
        for evader in available:
            key = (pursuer.id, evader.id)
            if key not in done:
                done[key] = evaluate_pair(pursuer, evader, n_episodes, seed, env_config)
                report.pairs.append(done[key])
    return report


def staircase_table(manifest, report: EvalReport, benchmark_ids=None) -> tuple[list[str], list[list]]:
    """Header and rows ``[stage, pursuer_id, rate or None per benchmark]``; None marks 'not introduced'."""
    if benchmark_ids is None:
        benchmark_ids = [r.id for r in sorted(manifest.evader_population, key=_admission)]
    rates = {(p.pursuer_id, p.evader_id): p.capture_rate for p in report.pairs}
    rows = []
    for k, pursuer, available in staircase_rows(manifest, benchmark_ids):
        ids = {e.id for e in available}
        rows.append([k, pursuer.id] + [rates.get((pursuer.id, b)) if b in ids else None for b in benchmark_ids])
    return ["stage", "pursuer_id", *benchmark_ids], rows


def write_staircase_csv(header, rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["-" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def _pin_opponent(env: PursuitEvasionBatch, learner: int, offset: np.ndarray) -> None:
    opp = 1 - learner
    s = env.state
    s.position_m[:, opp] = s.position_m[:, learner] + offset
    s.velocity_mps[:, opp] = 0.0
    s.rotation[:, opp] = np.eye(3)
    s.body_rates_radps[:, opp] = 0.0
    rel = s.position_m[:, 1] - s.position_m[:, 0]
    env.history[:] = rel[:, None, :]
    env.prev_distance[:] = np.linalg.norm(rel, axis=-1)


def max_speed_probe(policy: PolicyRecord, duration_s: float, seed: int, n_rollouts: int = 256,
                    env_config: EnvConfig | None = None, offset_m=(6.0, 0.0, 0.0)) -> tuple[float, float]:
    """Peak |v| and |w| of ``policy`` in free flight.

    The opponent is pinned at a fixed offset from the probed vehicle every
    step, so its relative-position observation stays finite and constant and
    capture can never trigger. Bounds penalties are off and the episode
    horizon is stretched to ``duration_s``.
    """
    base = _eval_config(env_config)
    steps = max(1, int(round(duration_s / base.dt_s)))
    arena = replace(base.arena, max_steps=steps + 1)
    cfg = replace(base, arena=arena, bounds_penalty=False)
    env = PursuitEvasionBatch(cfg, n_rollouts, seed=seed, auto_reset=False)
    i = role_index(policy.role)
    sign = 1.0 if i == 0 else -1.0
    offset = sign * np.asarray(offset_m, dtype=float)
    _pin_opponent(env, i, offset)
    rows = np.arange(n_rollouts)
    still = ActionCommand.velocity(np.zeros((n_rollouts, 3)))
    v_max = w_max = 0.0
    for _ in range(steps):
        mine = policy.command(env, rows)
        env.step(mine, still) if i == 0 else env.step(still, mine)
        _pin_opponent(env, i, offset)
        v_max = max(v_max, float(np.linalg.norm(env.state.velocity_mps[:, i], axis=-1).max()))
        w_max = max(w_max, float(np.linalg.norm(env.state.body_rates_radps[:, i], axis=-1).max()))
    return v_max, w_max


@dataclass(frozen=True)
class ManeuverResult:
    peak_speed_mps: float
    peak_body_rate_radps: float
    distance_at_threshold_m: float | None
    speeds: np.ndarray
    distances: np.ndarray


def full_tilt_maneuver(params: QuadParams | None = None, tilt_rad: float = np.radians(70.0),
                       pitch_rate: float = 10.0, duration_s: float = 1.5, threshold_mps: float = 12.9,
                       dt_s: float = 0.016) -> ManeuverResult:
    """Scripted open-loop dash: pitch over at a fixed rate, then hold full thrust.

    Rate commands go through the normal inner loop; nothing is fed back from
    position or velocity.
    """
    params = params or QuadParams()
    loop = InnerLoop(params)
    s = QuadState.at_rest((0.0, 0.0, 2.0))
    start = s.position_m.copy()
    tilt_steps = int(round(tilt_rad / pitch_rate / dt_s))
    speeds, dists = [], []
    hit = None
    w_max = 0.0
    for k in range(int(round(duration_s / dt_s))):
        if k < tilt_steps:
            cmd = ActionCommand.rate(np.array([0.0, pitch_rate, 0.0]), params.gravity_mps2)
        else:
            cmd = ActionCommand.rate(np.zeros(3), params.max_thrust_norm)
        s = step(s, loop.rotor_speeds(cmd, s, dt_s), params, dt_s=dt_s)
        speeds.append(float(np.linalg.norm(s.velocity_mps)))
        w_max = max(w_max, float(np.linalg.norm(s.body_rates_radps)))
        dists.append(float(np.linalg.norm(s.position_m - start)))
        if hit is None and speeds[-1] >= threshold_mps:
            hit = dists[-1]
    return ManeuverResult(max(speeds), w_max, hit, np.array(speeds), np.array(dists))


def cross_modality_suite(rate_pursuer: PolicyRecord, vel_pursuer: PolicyRecord, rate_evader: PolicyRecord,
                         vel_evader: PolicyRecord, n_episodes: int, seed: int,
                         env_config: EnvConfig | None = None) -> EvalReport:
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    slots = ((rate_pursuer, "pursuer", RATE), (vel_pursuer, "pursuer", VELOCITY),
             (rate_evader, "evader", RATE), (vel_evader, "evader", VELOCITY))
    for rec, role, modality in slots:
        if rec.role != role or rec.modality != modality:
            raise ValueError(f"{rec.id!r} is a {rec.modality} {rec.role}; slot needs a {modality} {role}")
    report = EvalReport(seed, stable_hash(_eval_config(env_config)))
    report.pairs.append(evaluate_pair(rate_pursuer, vel_evader, n_episodes, seed, env_config))
    report.pairs.append(evaluate_pair(vel_pursuer, rate_evader, n_episodes, seed, env_config))
    report.references = [{"pursuer_modality": p, "evader_modality": e, "capture_rate": r, "source": "published"}
                         for p, e, r in CROSS_MODALITY_REFERENCE]
    return report


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def emit_report(report: EvalReport, path, fmt: str) -> None:
    d = report.to_dict()
    validate_report(d)
    if fmt == "json":
        atomic_write(path, (json.dumps(d, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    elif fmt == "csv":
        rows = []
        base = {"seed": report.seed, "config_hash": report.config_hash}
        for p in d["pairs"]:
            rows.append({"kind": "pair", **p, **base})
        for m in d["max_speed"]:
            rows.append({"kind": "max_speed", **m, **base})
        for ref in d["references"]:
            rows.append({"kind": "reference", "pursuer_id": ref.get("pursuer_modality", ""),
                         "evader_id": ref.get("evader_modality", ""), "capture_rate": ref.get("capture_rate"), **base})
        lines = [",".join(CSV_COLUMNS)]
        for r in rows:
            lines.append(",".join(_quote(_csv_cell(r.get(c))) for c in CSV_COLUMNS))
        atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _quote(v) -> str:
    s = str(v)
    return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\n') else s


def read_report(path) -> EvalReport:
    path = Path(path)
    if path.suffix == ".json":
        return EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no report rows")
    num = lambda s: None if s == "" else float(s)  # noqa: E731
    d = {"schema_version": REPORT_SCHEMA_VERSION, "seed": int(rows[0]["seed"]),
         "config_hash": rows[0]["config_hash"], "policy_mode": "deterministic",
         "pairs": [], "max_speed": [], "references": []}
    for r in rows:
        if r["kind"] == "pair":
            d["pairs"].append({
                "pursuer_id": r["pursuer_id"], "evader_id": r["evader_id"],
                **{k: int(r[k]) for k in ("episodes", "captures", "timeouts", "crashes")},
                "mean_capture_time_s": num(r["mean_capture_time_s"]), "capture_rate": float(r["capture_rate"]),
            })
        elif r["kind"] == "max_speed":
            d["max_speed"].append({"policy_id": r["policy_id"], "max_linear_mps": float(r["max_linear_mps"]),
                                   "max_angular_radps": float(r["max_angular_radps"])})
        else:
            d["references"].append({"pursuer_modality": r["pursuer_id"], "evader_modality": r["evader_id"],
                                    "capture_rate": float(r["capture_rate"]), "source": "published"})
    return EvalReport.from_dict(d)


def retention_rows(label: str, seed: int, header: list[str], rows: list[list]) -> list[dict]:
    """Long-format (variant, seed, stage, opponent_id, capture_rate) records from a staircase table."""
    out = []
    for row in rows:
        for opp, rate in zip(header[2:], row[2:]):
            if rate is not None:
                out.append({"variant": label, "seed": seed, "stage": row[0], "opponent_id": opp,
                             "capture_rate": rate})
    return out


def write_retention_csv(records: list[dict], path) -> None:
    cols = ("variant", "seed", "stage", "opponent_id", "capture_rate")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in records:
            w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols})
        for name, rate in RETENTION_REFERENCE.items():
            w.writerow({"variant": "published", "seed": "", "stage": "", "opponent_id": name, "capture_rate": rate})

