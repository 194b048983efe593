"""Alternating population-based self-play.

A league directory holds ``manifest.json`` plus one PEPO file per policy.
Weight files are immutable once written and are always written before the
manifest that references them, so replacing the manifest by rename is the
single commit point of a stage.

manifest.json keys:

* ``schema_version``: integer, currently 1
* ``p_old``: probability of sampling an older opponent
* ``settings``: the league settings the stages were run with
* ``pursuer_population`` / ``evader_population``: ordered lists of
  ``{"id", "file", "stage_index", "modality"}``; ``stage_index`` is the
  admission stage (0 for the cold-start seeds)
* ``scheduled``: heuristic evaders waiting for their introduction stage
* ``stage_log``: ``{"stage_index", "role", "policy_id", "opponent_ids", "seed", "config_hash"}``
  where ``opponent_ids`` maps opponent id to the number of training episodes
  it was drawn for
* ``evaluation_matrix``: ``{"pursuer_id", "evader_id", "capture_rate", "episodes"}`` rows
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._util import atomic_write, derive_seed, jsonable, stable_hash
from .bench import evaluate_pair
from .distill import distill_heuristic
from .env import OBS_DIM, EnvConfig, other_role
from .policies import RATE, VELOCITY, GaussianPolicy, Heuristic, PolicyRecord, load_policy, save_policy
from .policies.records import encode_record
from .ppo import PpoConfig, train_stage

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
LOCK = "league.lock"


class ManifestError(ValueError):
    pass


class LeagueLockedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LeagueSettings:
    """Knobs of the stage loop.

    ``heuristic_schedule`` gives the stage at which each scripted evader joins
    the population; stage 0 means part of the cold start.
    """

    p_old: float = 0.75
    modality: str = RATE
    warm_start: bool = True
    distill_seed_policies: bool = True
    resample_per_episode: bool = True
    eval_episodes: int = 256
    eval_seed: int = 7
    admission_threshold: float | None = None
    heuristic_schedule: tuple[tuple[str, int], ...] = (("hover", 0), ("circular", 3), ("repel", 5))

    def __post_init__(self):
        if not 0.0 <= self.p_old <= 1.0:
            raise ValueError(f"p_old must lie in [0, 1], got {self.p_old}")
        if self.modality not in (RATE, VELOCITY):
            raise ValueError(f"learned modality must be rate or velocity, got {self.modality!r}")
        if self.eval_episodes <= 0:
            raise ValueError("eval_episodes must be positive")
        if self.admission_threshold is not None and not 0.0 <= self.admission_threshold <= 1.0:
            raise ValueError("admission_threshold must lie in [0, 1]")
        kinds = [k for k, _ in self.heuristic_schedule]
        if len(set(kinds)) != len(kinds) or not kinds:
            raise ValueError("heuristic_schedule needs distinct, non-empty kinds")
        for kind, stage in self.heuristic_schedule:
            Heuristic(kind)
            if stage < 0:
                raise ValueError("heuristic introduction stages must be >= 0")
        if not any(stage == 0 for _, stage in self.heuristic_schedule):
            raise ValueError("at least one scripted evader must be part of the cold start")


@dataclass(frozen=True)
class StageEntry:
    stage_index: int
    role: str
    policy_id: str
    opponent_ids: dict[str, int]
    seed: int
    config_hash: str


@dataclass
class LeagueManifest:
    pursuer_population: list[PolicyRecord]
    evader_population: list[PolicyRecord]
    stage_log: list[StageEntry] = field(default_factory=list)
    p_old: float = 0.75
    evaluation_matrix: dict[tuple[str, str], float] = field(default_factory=dict)
    scheduled: list[PolicyRecord] = field(default_factory=list)
    settings: LeagueSettings = field(default_factory=LeagueSettings)

    def population(self, role: str) -> list[PolicyRecord]:
        return self.pursuer_population if role == "pursuer" else self.evader_population

    def record(self, policy_id: str) -> PolicyRecord:
        for r in self.pursuer_population + self.evader_population + self.scheduled:
            if r.id == policy_id:
                return r
        raise KeyError(f"no policy with id {policy_id!r}")

    @property
    def next_stage(self) -> int:
        return self.stage_log[-1].stage_index + 1 if self.stage_log else 1

    def check(self) -> None:
        ids = [r.id for r in self.pursuer_population + self.evader_population + self.scheduled]
        if len(set(ids)) != len(ids):
            raise ManifestError("policy ids must be unique within a league")
        for role in ("pursuer", "evader"):
            for r in self.population(role):
                if r.role != role:
                    raise ManifestError(f"{r.id} is a {r.role} listed in the {role} population")
        roles = [e.role for e in self.stage_log]
        for a, b in zip(roles, roles[1:]):
            if a == b:
                raise ManifestError(f"stage log trains the {a} twice in a row")
        for key, rate in self.evaluation_matrix.items():
            if not 0.0 <= rate <= 1.0:
                raise ManifestError(f"capture rate {rate} for {key} outside [0, 1]")


def seed_policy_id(role: str, kind: str) -> str:
    return f"{role}.{kind}"


def cold_start(settings: LeagueSettings | None = None) -> LeagueManifest:
    """Scripted seeds: a pursuer hovering at the arena center and the scheduled evaders."""
    settings = settings or LeagueSettings()
    pursuers = [PolicyRecord(seed_policy_id("pursuer", "hover"), "pursuer", "heuristic", 0,
                             heuristic=Heuristic("hover", hold="center"))]
    evaders, scheduled = [], []
    for kind, stage in settings.heuristic_schedule:
        rec = PolicyRecord(seed_policy_id("evader", kind), "evader", "heuristic", stage, heuristic=Heuristic(kind))
        (evaders if stage == 0 else scheduled).append(rec)
    m = LeagueManifest(pursuers, evaders, p_old=settings.p_old, scheduled=scheduled, settings=settings)
    m.check()
    return m


def select_stage(manifest: LeagueManifest) -> str:
    manifest.check()
    if not manifest.stage_log:
        return "pursuer"
    return other_role(manifest.stage_log[-1].role)


def sample_opponent(manifest: LeagueManifest, learner_role: str, rng: np.random.Generator) -> PolicyRecord:
    """Newest opponent with probability 1 - p_old, otherwise a uniform pick among the older ones."""
    pool = manifest.population(other_role(learner_role))
    if not pool:
        raise ManifestError(f"the {other_role(learner_role)} population is empty")
    if len(pool) == 1:
        return pool[0]
    if rng.random() < manifest.p_old:
        return pool[int(rng.integers(len(pool) - 1))]
    return pool[-1]


def _introduce_scheduled(m: LeagueManifest, stage: int) -> None:
    for rec in [r for r in m.scheduled if r.stage_index <= stage]:
        m.scheduled.remove(rec)
        m.evader_population.append(rec)


def _fill_matrix(m: LeagueManifest, env_config: EnvConfig) -> None:
    """Evaluate every admitted pursuer/evader pair that has no entry yet."""
    for p in m.pursuer_population:
        for e in m.evader_population:
            if (p.id, e.id) not in m.evaluation_matrix:
                _evaluate_into(m, p, e, env_config)


def _evaluate_into(m: LeagueManifest, pursuer: PolicyRecord, evader: PolicyRecord, env_config: EnvConfig) -> float:
    result = evaluate_pair(pursuer, evader, m.settings.eval_episodes, m.settings.eval_seed, env_config)
    m.evaluation_matrix[(pursuer.id, evader.id)] = result.capture_rate
    return result.capture_rate


def _initial_policy(m: LeagueManifest, role: str, env_config: EnvConfig, seed: int) -> GaussianPolicy:
    s = m.settings
    rng = np.random.default_rng(seed)
    latest = next((r for r in reversed(m.population(role)) if r.policy is not None and r.modality == s.modality),
                  None)
    if s.warm_start and latest is not None:
        return latest.policy.astype(np.float64)
    if s.warm_start and s.distill_seed_policies:
        scripted = next(r for r in reversed(m.population(role)) if r.heuristic is not None)
        return distill_heuristic(scripted.heuristic, role, s.modality, env_config, OBS_DIM[role], seed)
    return GaussianPolicy.init(OBS_DIM[role], s.modality, rng)


def stage_config_hash(m: LeagueManifest, env_config: EnvConfig, ppo_config: PpoConfig) -> str:
    return stable_hash(env_config, ppo_config, m.settings)


def run_stage(manifest: LeagueManifest, env_config: EnvConfig, ppo_config: PpoConfig, seed: int) -> LeagueManifest:
    """One select / sample / train / evaluate cycle. Returns a new manifest; the input is not modified."""
    m = copy.copy(manifest)
    m.pursuer_population = list(manifest.pursuer_population)
    m.evader_population = list(manifest.evader_population)
    m.scheduled = list(manifest.scheduled)
    m.stage_log = list(manifest.stage_log)
    m.evaluation_matrix = dict(manifest.evaluation_matrix)

    role = select_stage(m)
    stage = m.next_stage
    _introduce_scheduled(m, stage)
    _fill_matrix(m, env_config)
    init_seed, train_seed, once_seed = (derive_seed(seed, k) for k in range(3))
    learner = _initial_policy(m, role, env_config, init_seed)

    if m.settings.resample_per_episode:
        provider = lambda rng: sample_opponent(m, role, rng)  # noqa: E731
    else:
        fixed = sample_opponent(m, role, np.random.default_rng(once_seed))
        provider = lambda rng: fixed  # noqa: E731
    result = train_stage(role, learner, provider, env_config, ppo_config, train_seed)

    new_id = f"{role}.s{stage}"
    record = PolicyRecord(new_id, role, m.settings.modality, stage, policy=result.policy,
                          metadata={"seed": seed, "config_hash": stage_config_hash(m, env_config, ppo_config)})
    rates = []
    for opp in m.population(other_role(role)):
        p, e = (record, opp) if role == "pursuer" else (opp, record)
        rates.append(_evaluate_into(m, p, e, env_config))

    threshold = m.settings.admission_threshold
    admitted = threshold is None or _stage_success(role, rates) >= threshold
    if admitted:
        m.population(role).append(record)
    else:
        for opp in m.population(other_role(role)):
            key = (record.id, opp.id) if role == "pursuer" else (opp.id, record.id)
            m.evaluation_matrix.pop(key, None)
    m.stage_log.append(StageEntry(stage, role, new_id if admitted else "", dict(sorted(result.opponent_counts.items())),
                                  int(seed), stage_config_hash(m, env_config, ppo_config)))
    m.check()
    return m


def _stage_success(role: str, rates: list[float]) -> float:
    mean = float(np.mean(rates)) if rates else 0.0
    return mean if role == "pursuer" else 1.0 - mean


def _policy_file(rec: PolicyRecord) -> str:
    return f"{rec.id}.pepo"


def manifest_to_dict(m: LeagueManifest) -> dict:
    def entry(r):
        return {"id": r.id, "file": _policy_file(r), "stage_index": r.stage_index, "modality": r.modality}

    return {
        "schema_version": SCHEMA_VERSION,
        "p_old": m.p_old,
        "settings": jsonable(m.settings),
        "pursuer_population": [entry(r) for r in m.pursuer_population],
        "evader_population": [entry(r) for r in m.evader_population],
        "scheduled": [entry(r) for r in m.scheduled],
        "stage_log": [asdict(e) for e in m.stage_log],
        "evaluation_matrix": [{"pursuer_id": p, "evader_id": e, "capture_rate": rate,
                               "episodes": m.settings.eval_episodes}
                              for (p, e), rate in sorted(m.evaluation_matrix.items())],
    }


def save_manifest(m: LeagueManifest, directory) -> None:
    """Write missing weight files, then swap in the new manifest by rename."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m.check()
    for rec in m.pursuer_population + m.evader_population + m.scheduled:
        path = directory / _policy_file(rec)
        data = encode_record(rec)
        if not path.exists() or path.read_bytes() != data:
            save_policy(rec, path)
    text = json.dumps(manifest_to_dict(m), indent=2, sort_keys=True) + "\n"
    atomic_write(directory / MANIFEST, text.encode("utf-8"))


def _settings_from_dict(d: dict) -> LeagueSettings:
    d = dict(d)
    d["heuristic_schedule"] = tuple((k, int(s)) for k, s in d["heuristic_schedule"])
    return LeagueSettings(**d)


def load_manifest(directory) -> LeagueManifest:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise ManifestError(f"no {MANIFEST} in {directory}")
    d = json.loads(path.read_text(encoding="utf-8"))
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(f"manifest schema version {d.get('schema_version')!r}, expected {SCHEMA_VERSION}")

    def records(entries, role):
        out = []
        for e in entries:
            file = directory / e["file"]
            if not file.exists():
                raise ManifestError(f"weight file for policy {e['id']!r} is missing ({e['file']})")
            rec = load_policy(file, expected_role=role)
            if rec.id != e["id"]:
                raise ManifestError(f"{e['file']} holds policy {rec.id!r}, manifest expects {e['id']!r}")
            out.append(rec)
        return out

    m = LeagueManifest(
        pursuer_population=records(d["pursuer_population"], "pursuer"),
        evader_population=records(d["evader_population"], "evader"),
        stage_log=[StageEntry(**e) for e in d["stage_log"]],
        p_old=float(d["p_old"]),
        evaluation_matrix={(r["pursuer_id"], r["evader_id"]): float(r["capture_rate"])
                           for r in d["evaluation_matrix"]},
        scheduled=records(d["scheduled"], "evader"),
        settings=_settings_from_dict(d["settings"]),
    )
    m.check()
    return m


class LeagueLock:
    """Exclusive lock file holding the owner's pid; a lock left by a dead process is taken over."""

    def __init__(self, directory):
        self.path = Path(directory) / LOCK

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._owner_alive():
                    raise LeagueLockedError(f"{self.path.parent} is in use by another process") from None
                self.path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            return self
        raise LeagueLockedError(f"could not acquire {self.path}")

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)

    def _owner_alive(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return False
        if pid == os.getpid():
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return False
        except PermissionError:
            return True
        return True


def run_league(directory, stages: int, env_config: EnvConfig, ppo_config: PpoConfig,
               settings: LeagueSettings | None = None, master_seed: int = 0, resume: bool = False,
               on_stage=None) -> LeagueManifest:
    """Run stages until the log holds ``stages`` entries, committing after each one.

    With ``resume`` an existing manifest is continued (its own settings win);
    otherwise the directory must not already hold a league.
    """
    directory = Path(directory)
    with LeagueLock(directory):
        if (directory / MANIFEST).exists():
            if not resume:
                raise ManifestError(f"{directory} already holds a league; pass resume to continue it")
            m = load_manifest(directory)
        else:
            m = cold_start(settings)
            save_manifest(m, directory)
        while len(m.stage_log) < stages:
            m = run_stage(m, env_config, ppo_config, derive_seed(master_seed, m.next_stage))
            save_manifest(m, directory)
            if on_stage is not None:
                on_stage(m)
        return m
