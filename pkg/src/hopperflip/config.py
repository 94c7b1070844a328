"""Run configuration documents and CSV output helpers.

All artifacts are reproducibility-first: CSVs carry a schema-version column
first and the run seed in every row, numbers are written with 9 significant
digits, and nothing time- or host-dependent is ever emitted, so identical
seeds produce byte-identical files. Each run directory additionally gets a
``resolved_config.json`` with every effective setting inlined.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .actuator import DEFAULT_ENVELOPES, DEFAULT_GAINS, MorEnvelope, PdGains
from .env import EnvConfig, ReferencePose
from .learn import LearnConfig
from .model import HopperModel, default_model, model_from_dict, model_to_dict

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "HOPPERFLIP_OUTPUT_ROOT"


@dataclass
class ModelAssets:
    """Physical model plus the actuator parameters from a model document."""

    model: HopperModel
    envelopes: tuple[MorEnvelope, MorEnvelope, MorEnvelope] = DEFAULT_ENVELOPES
    gains: PdGains = DEFAULT_GAINS
    reference: ReferencePose | None = None


def assets_from_dict(doc: dict) -> ModelAssets:
    model = model_from_dict(doc)
    envelopes = list(DEFAULT_ENVELOPES)
    gains = DEFAULT_GAINS
    reference = None
    act = doc.get("actuators", {})
    for i, joint in enumerate(("knee_pitch", "ankle_pitch", "ankle_roll")):
        if joint in act.get("envelopes", {}):
            e = act["envelopes"][joint]
            envelopes[i] = MorEnvelope(tau_cur=e["tau_cur"], omega_max=e["omega_max"],
                                       beta=e["beta"])
    if "pd" in act:
        gains = PdGains(kp=act["pd"]["kp"], kd=act["pd"]["kd"])
    if "reference_pose" in doc:
        rp = doc["reference_pose"]
        reference = ReferencePose(base_pitch=rp["base_pitch"], q=np.asarray(rp["q"]))
    return ModelAssets(model=model, envelopes=tuple(envelopes), gains=gains,
                       reference=reference)


def assets_to_dict(assets: ModelAssets) -> dict:
    doc = model_to_dict(assets.model)
    doc["actuators"] = {
        "envelopes": {
            joint: {"tau_cur": e.tau_cur, "omega_max": e.omega_max, "beta": e.beta}
            for joint, e in zip(("knee_pitch", "ankle_pitch", "ankle_roll"),
                                assets.envelopes)
        },
        "pd": {"kp": assets.gains.kp.tolist(), "kd": assets.gains.kd.tolist()},
    }
    if assets.reference is not None:
        doc["reference_pose"] = {"base_pitch": assets.reference.base_pitch,
                                 "q": assets.reference.q.tolist()}
    return doc


def load_model_file(path: str) -> ModelAssets:
    with open(path) as fh:
        return assets_from_dict(json.load(fh))


@dataclass
class RunConfig:
    """Everything one training/evaluation run needs, JSON-round-trippable."""

    seed: int = 0
    output_dir: str = "runs/default"
    model_path: str | None = None
    env: EnvConfig = field(default_factory=EnvConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)

    def resolved_output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            return os.path.join(root, self.output_dir)
        return self.output_dir

    def load_assets(self, base_dir: str = ".") -> ModelAssets:
        if self.model_path is None:
            return ModelAssets(model=default_model())
        path = self.model_path
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise FileNotFoundError(f"model config not found: {path}")
        return load_model_file(path)


def _apply_fields(cls, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")
    coerced = {}
    for key, val in doc.items():
        if isinstance(val, list):
            val = tuple(val)
        coerced[key] = val
    return cls(**coerced)


def run_config_from_dict(doc: dict) -> RunConfig:
    known = {"schema_version", "seed", "output_dir", "model", "env", "learn"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown field(s) in run config: {', '.join(sorted(unknown))}")
    env = _apply_fields(EnvConfig, doc.get("env", {}), "env")
    learn = _apply_fields(LearnConfig, doc.get("learn", {}), "learn")
    return RunConfig(seed=int(doc.get("seed", 0)),
                     output_dir=doc.get("output_dir", "runs/default"),
                     model_path=doc.get("model"), env=env, learn=learn)


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        cfg = run_config_from_dict(json.load(fh))
    # env.seed follows the run seed unless the document pinned one explicitly
    with open(path) as fh:
        doc = json.load(fh)
    if "seed" not in doc.get("env", {}):
        cfg = dataclasses.replace(cfg, env=dataclasses.replace(cfg.env, seed=cfg.seed))
    return cfg


def run_config_to_dict(cfg: RunConfig, assets: ModelAssets | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "model": cfg.model_path,
        "env": dataclasses.asdict(cfg.env),
        "learn": dataclasses.asdict(cfg.learn),
    }
    if assets is not None:
        doc["resolved_model"] = assets_to_dict(assets)
    return doc


def write_resolved_config(cfg: RunConfig, out_dir: str,
                          assets: ModelAssets | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(run_config_to_dict(cfg, assets), fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def fmt(value) -> str:
    """Fixed 9-significant-digit cell formatting; empty for None."""
    if value is None or value == "":
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.9g}"


class CsvWriter:
    """RFC-4180 CSV with a fixed column set; schema_version leads every row."""

    def __init__(self, path: str, columns: list[str], seed: int):
        self.columns = ["schema_version", "seed"] + columns
        self.seed = seed
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def write(self, row: dict) -> None:
        base = {"schema_version": SCHEMA_VERSION, "seed": self.seed}
        out = []
        for col in self.columns:
            val = base.get(col, row.get(col))
            out.append(fmt(val))
        self._writer.writerow(out)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


METRICS_COLUMNS = [
    "iteration", "steps_total", "mean_return_motion", "mean_return_barrier",
    "mean_ep_len", "rollout_aerial_cav_raw", "pi_loss", "v_loss_motion",
    "v_loss_barrier", "est_loss", "entropy", "approx_kl", "clip_frac",
    "grad_norm", "eval_aerial_cav_raw", "eval_net_pitch_deg", "eval_peak_cav",
    "eval_max_flight_s", "eval_peak_tau_load",
]


class MetricsWriter(CsvWriter):
    def __init__(self, path: str, seed: int):
        super().__init__(path, METRICS_COLUMNS, seed)


EVAL_STEP_COLUMNS = (
    ["episode", "t", "phase", "base_pitch", "base_pitch_rate", "com_height"]
    + [f"cam_{ax}" for ax in "xyz"] + [f"cav_{ax}" for ax in "xyz"]
    + ["i_com_pitch"]
    + [f"q_{j}" for j in range(3)] + [f"qd_{j}" for j in range(3)]
    + [f"tau_cmd_{j}" for j in range(3)] + [f"tau_clip_{j}" for j in range(3)]
    + [f"tau_load_{j}" for j in range(3)] + [f"contact_{k}" for k in range(4)]
    + ["r_cav", "r_lin", "r_tau", "r_p", "r_v", "r_a", "r_slip", "r_act",
       "r_cs", "r_ci", "b_pos", "b_vel", "b_load", "r_motion", "r_barrier"]
)

EVAL_SUMMARY_COLUMNS = [
    "episode", "steps", "net_pitch_deg", "pitch_rate_integral_deg", "peak_cav",
    "max_flight_s", "peak_tau_load", "return_motion", "return_barrier",
]

SWEEP_COLUMNS = [
    "axis", "variant_train", "variant_eval", "status", "episodes",
    "return_motion", "return_barrier", "net_pitch_deg", "peak_cav",
    "max_flight_s", "peak_tau_load",
]


def eval_step_row(episode: int, info: dict, reward) -> dict:
    row = {
        "episode": episode, "t": info["t"], "phase": info["phase"],
        "base_pitch": info["base_pitch"], "base_pitch_rate": info["base_pitch_rate"],
        "com_height": info["com_height"], "i_com_pitch": info["i_com_pitch"],
    }
    for i, ax in enumerate("xyz"):
        row[f"cam_{ax}"] = info["cam"][i]
        row[f"cav_{ax}"] = info["cav"][i]
    for j in range(3):
        row[f"q_{j}"] = info["q"][j]
        row[f"qd_{j}"] = info["qdot"][j]
        row[f"tau_cmd_{j}"] = info["tau_cmd"][j]
        row[f"tau_clip_{j}"] = info["tau_applied"][j]
        row[f"tau_load_{j}"] = info["tau_load"][j]
    for k in range(4):
        row[f"contact_{k}"] = info["contact_flags"][k]
    for name in ("r_cav", "r_lin", "r_tau", "r_p", "r_v", "r_a", "r_slip",
                 "r_act", "r_cs", "r_ci", "b_pos", "b_vel", "b_load",
                 "r_motion", "r_barrier"):
        row[name] = getattr(reward, name)
    return row
