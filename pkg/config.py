import json
import os
from pathlib import Path
from typing import Any

CONFIG_FILE = Path(__file__).resolve().parent / "hddp_config.json"
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"


DEFAULT_SETTINGS = {
    # cost weights
    "weight_foot": 1e3,
    "weight_com": 1e3,
    "weight_friction": 1e2,
    "weight_cop": 1e2,
    "weight_joint": 1e2,
    "weight_posture": 1e-1,
    "weight_torque": 1e-4,
    # wrench cone
    "mu": 0.7,
    "coverage": 0.5,
    # solver
    "max_iters": 500,
    "tol": 1e-9,
    "reg_init": 1e-9,
    "reg_min": 1e-9,
    "reg_max": 1e9,
    "alpha_min": 2.0**-10,
    "acceptance_ratio": 0.1,
    "gap_tol": 1e-9,
    # dynamics
    "baumgarte_alpha": 0.0,
    "baumgarte_beta": 0.0,
    # replay
    "kp": 300.0,
    "feedforward": True,
    "substeps": 4,
    "rate": 1000,
    "fall_threshold": 0.3,
    "hysteresis": 0.002,
    "max_deviation_xy": 0.03,
    "max_deviation_z": 0.02,
    # limit checks
    "limit_tolerance": 0.05,
    "saturation_margin": 1e-6,
    # design scaling
    "factor_step": 0.5,
    "factor_cap": 10.0,
    "fixtures_dir": str(FIXTURES_DIR),
}


def load_config() -> dict:
    """Load config from hddp_config.json (or HDDP_CONFIG) plus environment variables."""
    config = {}

    config_file = Path(os.getenv("HDDP_CONFIG") or CONFIG_FILE)
    if config_file.exists():
        try:
            config = json.loads(config_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            print(f"⚠️  Ignoring malformed config file {config_file}")
            config = {}

    fixtures = os.getenv("HDDP_FIXTURES")
    if fixtures:
        config["fixtures_dir"] = fixtures

    return config


def save_config(config: dict) -> None:
    """Save config to file. Fails quietly on read-only filesystems."""
    try:
        CONFIG_FILE.write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")
    except (OSError, PermissionError):
        pass


def get_settings(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """DEFAULT_SETTINGS, then the config file, then ``overrides`` (unknown keys are ignored)."""
    settings = dict(DEFAULT_SETTINGS)
    config = load_config()
    for key in DEFAULT_SETTINGS:
        if key in config:
            settings[key] = config[key]
    for key, value in (overrides or {}).items():
        if key in settings and value is not None:
            settings[key] = value
    return settings


def fixtures_dir() -> Path:
    return Path(get_settings()["fixtures_dir"])
