"""Config-driven pipeline: solve, certify, audit, decide, and write reports.

Configs are TOML or JSON with the same structure::

    name = "bernoulli_hull"
    seed = 0
    probes = "vertices"              # or {random = 20}, or a list of dists
    [loss]
    name = "log"
    bound = 20.0
    [envelope]
    kind = "hull"                    # hull | kl_ball | chi2_ball | tv_ball | cvar
    vertices = [ {probs = [[0.8, 0.2]]}, "other.json" ]
    [solver]
    gap_tol = 1e-9
    [audit]
    disparity_steps = 11
    lipschitz_samples = 40
    [decision]
    cost_matrix = {actions = ["a", "b"], costs = [[0, 1], [1, 0]]}

Distributions and cost matrices may be given inline or as paths relative to
the config file.  Every float written to disk is rounded to 12 significant
digits so reruns compare byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .audit import disparity_curve, lipschitz_check, audit_envelope, tradeoff_ledger
from .decision import induced_rule, threshold_from_costs, verify_worstcase_optimality, DegenerateCosts
from .dist import FiniteJoint, Predictor
from .envelopes import ConvexHullEnvelope, DivergenceBallEnvelope, Envelope, make_envelope
from .rng import SplitMix64
from .scoring import CostMatrix, loss_to_dict, make_loss
from .solver import NotConverged, SolverOptions, minimax_game, solve_max_entropy, verify_saddle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SIG_DIGITS = 12
MAX_CELLS = 10_000
RESIDUAL_TOL = 1e-8
DISPARITY_TOL = 1e-8
# the audit bound is only as tight as the solver's duality gap
HARNESS_GAP_TOL = 1e-10
BUNDLED = ("bernoulli_hull", "healthcare_5050")


class ConfigError(ValueError):
    pass


class SizeLimit(ValueError):
    pass


# -- formatting ---------------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), f".{SIG_DIGITS}g")


def round_numbers(obj: Any) -> Any:
    """Round floats to 12 significant digits; non-finite values become strings."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if math.isfinite(x) else fmt(x)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: round_numbers(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_numbers(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_numbers(obj.tolist())
    return obj


def dump_json(obj) -> str:
    return json.dumps(round_numbers(obj), indent=2, sort_keys=True) + "\n"


def dump_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# -- config ---------------------------------------------------------------------

def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    raw.setdefault("name", path.stem)
    return raw


def bundled_config(name: str) -> dict:
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled scenario {name!r}; have {BUNDLED}")
    text = resources.files("mdlcal.scenarios").joinpath(f"{name}.toml").read_text()
    return tomllib.loads(text)


@dataclass
class ScenarioConfig:
    """Validated scenario: everything resolved to library objects."""

    name: str
    raw: dict
    envelope: Envelope
    loss: Any
    solver: SolverOptions
    probes: list[FiniteJoint]
    probe_ids: list[str]
    seed: int | None
    disparity_steps: int = 11
    lipschitz_samples: int = 0
    saddle_probes: int = 50
    cost_matrix: CostMatrix | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()


def _loader(base_dir: Path):
    def load(ref) -> FiniteJoint:
        if isinstance(ref, dict):
            return FiniteJoint.from_dict(ref)
        path = base_dir / str(ref)
        if not path.exists():
            raise ConfigError(f"distribution file {path} does not exist")
        return FiniteJoint.load(path)

    return load


def parse_config(raw: dict, base_dir=None, seed: int | None = None) -> ScenarioConfig:
    """Resolve a raw config mapping; ``seed`` overrides the config's seed."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    load = _loader(base_dir)
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    try:
        env_spec = raw["envelope"]
        loss = make_loss(raw.get("loss", "log"))
        env = make_envelope(env_spec, load)
        solver = SolverOptions.from_dict({"gap_tol": HARNESS_GAP_TOL, **raw.get("solver", {})})
    except KeyError as e:
        raise ConfigError(f"config is missing {e}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from e
    cfg_seed = raw.get("seed")
    audit = raw.get("audit", {})

    probe_spec = raw.get("probes", "vertices")
    probes, ids = [], []
    if probe_spec == "vertices":
        if not isinstance(env, ConvexHullEnvelope):
            raise ConfigError(f"probes = 'vertices' needs a hull envelope, not {env.kind}")
        probes, ids = list(env.vertices), list(env.ids)
    elif isinstance(probe_spec, dict) and "random" in probe_spec:
        s = probe_spec.get("seed", cfg_seed)
        if s is None:
            raise ConfigError("random probes need a seed")
        rng = np.random.default_rng(int(s))
        count = int(probe_spec["random"])
        probes = [env.random_member(rng) for _ in range(count)]
        ids = [f"random{i}" for i in range(count)]
        if isinstance(env, ConvexHullEnvelope) and probe_spec.get("include_vertices", True):
            probes = list(env.vertices) + probes
            ids = list(env.ids) + ids
    elif isinstance(probe_spec, list):
        for i, item in enumerate(probe_spec):
            if isinstance(item, dict) and "dist" in item:
                probes.append(load(item["dist"]))
                ids.append(str(item.get("id", f"probe{i}")))
            else:
                probes.append(load(item))
                ids.append(f"probe{i}")
    else:
        raise ConfigError(f"cannot interpret probes setting {probe_spec!r}")
    for pid, q in zip(ids, probes):
        if not env.reference.same_spaces(q):
            raise ConfigError(f"probe {pid!r} is not on the envelope's spaces")
        if not env.contains(q, 1e-6):
            raise ConfigError(f"probe {pid!r} is not a member of the envelope")

    lip = int(audit.get("lipschitz_samples", 0))
    if lip and not isinstance(env, DivergenceBallEnvelope):
        raise ConfigError("lipschitz_samples needs a divergence-ball envelope")
    if lip and cfg_seed is None:
        raise ConfigError("lipschitz sampling needs a seed")

    cm = None
    dec = raw.get("decision")
    if dec and dec.get("cost_matrix") is not None:
        ref = dec["cost_matrix"]
        try:
            cm = CostMatrix.from_dict(ref) if isinstance(ref, dict) else CostMatrix.load(base_dir / ref)
        except (KeyError, ValueError, OSError) as e:
            raise ConfigError(f"bad cost matrix: {e}") from e
        if cm.n_labels != env.shape[1]:
            raise ConfigError("cost matrix and envelope disagree on the number of labels")

    return ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        raw=raw,
        envelope=env,
        loss=loss,
        solver=solver,
        probes=probes,
        probe_ids=ids,
        seed=None if cfg_seed is None else int(cfg_seed),
        disparity_steps=int(audit.get("disparity_steps", 11)),
        lipschitz_samples=lip,
        saddle_probes=int(audit.get("saddle_probes", 50)),
        cost_matrix=cm,
        base_dir=base_dir,
    )


# -- pipeline -------------------------------------------------------------------

@dataclass
class RunManifest:
    name: str
    config_hash: str
    tool_version: str
    seed: int | None
    started: str
    finished: str
    files: dict[str, str]
    failures: list[str]
    warnings: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "files": self.files,
            "ok": self.ok,
            "failures": self.failures,
            "warnings": self.warnings,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: dict[str, str] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        (self.out_dir / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()


def _solve(cfg: ScenarioConfig, w: _Writer, failures: list, notes: list):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConverged)
        res = solve_max_entropy(cfg.envelope, cfg.loss, cfg.solver)
    notes.extend(str(c.message) for c in caught if issubclass(c.category, NotConverged))
    out = {"scenario": cfg.name, "loss": loss_to_dict(cfg.loss), "envelope": cfg.envelope.kind}
    out.update(res.to_dict())
    if isinstance(cfg.envelope, ConvexHullEnvelope) and cfg.solver.rounds > 0:
        game = minimax_game(cfg.envelope, cfg.loss, cfg.solver.rounds)
        out["game"] = {
            "value": game.value,
            "weights": game.weights,
            "rounds": game.iterations,
            "duality_gap": game.duality_gap,
            "agrees": abs(game.value - res.value) <= 0.02 * cfg.loss.bound,
        }
        if not out["game"]["agrees"]:
            failures.append("multiplicative-weights value disagrees with Frank-Wolfe")
    w.write("solve.json", dump_json(out))

    cert = verify_saddle(cfg.envelope, res, cfg.loss, cfg.saddle_probes, seed=cfg.seed or 0)
    w.write("saddle.json", dump_json(cert.to_dict()))
    if not cert.passed:
        failures.append(f"saddle certificate failed (left {cert.left_slack:.3g}, right {cert.right_slack:.3g})")
    return res


def _audit(cfg: ScenarioConfig, res, w: _Writer, failures: list, notes: list):
    ids = ["q_star"] + cfg.probe_ids
    probes = [res.q_star] + cfg.probes
    report = audit_envelope(cfg.envelope, res, cfg.loss, probes, ids)
    rows = []
    for row in report:
        rows.append([row.dist_id, row.risk, row.calibration_error, row.refinement,
                     row.entropy_gap, str(row.bound_satisfied).lower(), row.identity_residual])
        if not row.bound_satisfied:
            failures.append(f"calibration bound violated for {row.dist_id}")
        if row.clip_active:
            notes.append(f"loss clip active for {row.dist_id}")
        elif row.identity_residual > RESIDUAL_TOL:
            failures.append(f"decomposition residual {row.identity_residual:.3g} for {row.dist_id}")
    w.write("audit.csv", dump_csv(
        ["dist_id", "risk", "calib", "refinement", "entropy_gap", "bound_ok", "residual"], rows))
    if report["q_star"].calibration_error > 1e-9:
        failures.append("h* is not calibrated on Q*")

    for pid, q in zip(cfg.probe_ids, cfg.probes):
        curve = disparity_curve(q, res, cfg.loss, cfg.disparity_steps)
        w.write(f"disparity_{pid}.csv", dump_csv(["t", "calib"], [list(r) for r in zip(curve.ts, curve.calib_errors)]))
        if curve.calib_errors[-1] > DISPARITY_TOL:
            failures.append(f"disparity curve for {pid} does not vanish at Q*")
        try:
            tradeoff_ledger(q, res, cfg.loss)
        except AssertionError as e:
            failures.append(f"trade-off ledger for {pid}: {e}")

    if cfg.lipschitz_samples:
        rep = lipschitz_check(cfg.envelope, cfg.loss, cfg.lipschitz_samples, seed=cfg.seed)
        w.write("lipschitz.json", dump_json(rep.to_dict()))
        if not rep.holds:
            failures.append("Lipschitz bound not met on the probe set")
    return report


def _decide(cfg: ScenarioConfig, res, w: _Writer, notes: list):
    cm = cfg.cost_matrix
    rule = induced_rule(res.h_star, cm)
    w.write("decisions.csv", decision_table_csv(rule, cm))
    consistent, optimal, rep = verify_worstcase_optimality(cfg.envelope, res, cm, cfg.probes, cfg.probe_ids)
    if not consistent:
        notes.append("Q* does not maximise the cost entropy among the probes; worst-case optimality not implied")
    out = {"consistent": consistent, "optimal": optimal}
    out.update(rep.to_dict())
    w.write("worstcase.json", dump_json(out))
    if cm.costs.shape == (2, 2):
        try:
            w.write("threshold.json", dump_json(threshold_from_costs(cm).to_dict()))
        except DegenerateCosts:
            pass


def decision_table_csv(rule, cm: CostMatrix) -> str:
    rows = []
    for nu, a in zip(rule.forecasts, rule.actions):
        rows.append([";".join(fmt(v) for v in nu), cm.actions[a], float(cm.costs[a] @ nu)])
    return dump_csv(["forecast", "action", "expected_cost"], rows)


def run_scenario(cfg: ScenarioConfig, out_dir, strict: bool = False, stages=("solve", "audit", "decide")) -> RunManifest:
    """Run the pipeline for one scenario and write reports plus ``manifest.json``."""
    started = _now()
    w = _Writer(Path(out_dir))
    failures: list[str] = []
    notes: list[str] = []
    res = _solve(cfg, w, failures, notes)
    if "audit" in stages:
        _audit(cfg, res, w, failures, notes)
    if "decide" in stages and cfg.cost_matrix is not None:
        _decide(cfg, res, w, notes)
    if strict and notes:
        failures.extend(f"strict: {n}" for n in notes)
    manifest = RunManifest(
        name=cfg.name,
        config_hash=cfg.config_hash,
        tool_version=__version__,
        seed=cfg.seed,
        started=started,
        finished=_now(),
        files=dict(sorted(w.files.items())),
        failures=failures,
        warnings=notes,
    )
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest


# -- scenario generation --------------------------------------------------------

def random_joints(seed: int, n: int, m: int, k: int) -> list[FiniteJoint]:
    """``k`` flat-Dirichlet joints over ``n x m`` from one SplitMix64 stream, row-major."""
    if min(n, k) < 1 or m < 2:
        raise ValueError("need n >= 1, m >= 2 and k >= 1")
    if n * m > MAX_CELLS:
        raise SizeLimit(f"{n} x {m} exceeds {MAX_CELLS} cells")
    stream = SplitMix64(seed)
    return [FiniteJoint(np.array(stream.dirichlet_ones(n * m)).reshape(n, m)) for _ in range(k)]


def generate_random_scenario(seed: int, n: int, m: int, k: int, out_dir, loss: str = "log") -> tuple[ScenarioConfig, list[Path]]:
    """Write ``k`` random joints and a hull scenario config using them."""
    joints = random_joints(seed, n, m, k)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    names = []
    for i, j in enumerate(joints):
        p = out_dir / f"joint_{i}.json"
        p.write_text(json.dumps(j.to_dict(), indent=2) + "\n")
        files.append(p)
        names.append(p.name)
    raw = {
        "name": f"random_s{seed}_n{n}_m{m}_k{k}",
        "seed": int(seed),
        "loss": {"name": loss, "bound": 20.0} if loss == "log" else {"name": loss},
        "envelope": {"kind": "hull", "vertices": names},
        "probes": "vertices",
        "solver": {"gap_tol": 1e-10},
        "audit": {"disparity_steps": 11},
    }
    cfg_path = out_dir / "scenario.json"
    cfg_path.write_text(json.dumps(raw, indent=2) + "\n")
    files.append(cfg_path)
    return parse_config(raw, out_dir), files
