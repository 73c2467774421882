"""
manifest.py - pvlab
Run manifest: config hash, tool version, wall-clock time and a sha256 checksum
of every output file. Written as manifest.json next to the outputs.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import config_hash
from .errors import FormatError

logger = logging.getLogger("pvlab.manifest")

MANIFEST_NAME = "manifest.json"
UNTRACKED     = {MANIFEST_NAME, "run.log"}   # files that differ between identical runs
CHUNK_SIZE    = 1 << 20


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    seed: int
    exit_code: int = 0
    wall_clock_s: float = 0.0
    checksums: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, resolved_config: dict, tool_version: str) -> "RunManifest":
        manifest = cls(command, config_hash(resolved_config), tool_version, int(resolved_config["seed"]))
        manifest._t0 = time.perf_counter()
        return manifest

    def finish(self, out_dir, exit_code: int) -> Path:
        """Checksum everything under out_dir (except untracked files) and save."""
        out_dir = Path(out_dir)
        self.exit_code = exit_code
        self.wall_clock_s = round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 3)
        self.checksums = {
            p.relative_to(out_dir).as_posix(): file_sha256(p)
            for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name not in UNTRACKED
        }
        path = self.save(out_dir / MANIFEST_NAME)
        logger.info("Manifest: %d output files, %.2fs, config %s",
                    len(self.checksums), self.wall_clock_s, self.config_hash[:12])
        return path

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**doc)
        except (json.JSONDecodeError, TypeError) as e:
            raise FormatError(f"{path}: not a run manifest ({e})") from e

    def same_outputs(self, other: "RunManifest") -> bool:
        return self.config_hash == other.config_hash and self.checksums == other.checksums
