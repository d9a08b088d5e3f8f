import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def fmt17(value: float) -> str:
    """Shortest stable text for a float at 17 significant digits."""
    text = format(float(value), ".17g")
    return "0" if text == "-0" else text


def git_blob_hash(path: str | Path) -> str:
    """Content hash in git's blob format (same value `git hash-object` prints)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class RunManifest:
    command: str
    experiment_path: str | None
    model_path: str | None
    options: dict
    output_dir: str
    wall_time_s: float = 0.0
    input_hashes: dict = field(default_factory=dict)
    started_at: str = field(default_factory=now_iso)
    exit_code: int | None = None
    summary: dict = field(default_factory=dict)


def build_manifest(
    command: str,
    output_dir: str | Path,
    options: dict,
    experiment_path: str | Path | None = None,
    model_path: str | Path | None = None,
    extra_inputs: list[str | Path] | None = None,
) -> RunManifest:
    inputs = [p for p in (experiment_path, model_path, *(extra_inputs or [])) if p]
    hashes = {str(p): git_blob_hash(p) for p in inputs if Path(p).is_file()}
    return RunManifest(
        command=command,
        experiment_path=str(experiment_path) if experiment_path else None,
        model_path=str(model_path) if model_path else None,
        options=dict(options),
        output_dir=str(output_dir),
        input_hashes=hashes,
    )


def write_manifest(manifest: RunManifest) -> Path:
    path = ensure_dir(manifest.output_dir) / MANIFEST_NAME
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def read_manifest(output_dir: str | Path) -> dict:
    return json.loads((Path(output_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
