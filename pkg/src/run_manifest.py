# src/run_manifest.py
"""
Run manifests: what was run, with which configuration and library versions,
how long it took and the peak number of retained N x N matrices.
"""

import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from typing import Dict, Optional

from cryptography.hazmat.primitives import hashes

from src import config

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ("numpy", "scipy", "cryptography")


def canonical_json(data: dict) -> bytes:
    """Key-sorted, whitespace-free JSON; equal configs give equal bytes."""
    if not isinstance(data, dict):
        raise ValueError("Only JSON objects can be digested.")
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def sha256_hex(payload: bytes) -> str:
    if payload is None:
        raise ValueError("Nothing to digest.")
    digest = hashes.Hash(hashes.SHA256())
    digest.update(payload)
    return digest.finalize().hex()


def config_digest(data: dict) -> str:
    return sha256_hex(canonical_json(data))


def file_digest(file_path: str) -> str:
    digest = hashes.Hash(hashes.SHA256())
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.finalize().hex()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), config.APP_NAME: config.APP_VERSION}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: Optional[int] = None
    threads: int = config.DEFAULT_THREADS
    versions: Dict[str, str] = field(default_factory=package_versions)
    started: float = field(default_factory=time.time)
    runtime_seconds: float = 0.0
    peak_live_matrices: int = 0
    exit_code: Optional[int] = None
    outputs: Dict[str, str] = field(default_factory=dict)
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    def note_peak(self, count: int):
        self.peak_live_matrices = max(self.peak_live_matrices, int(count))

    def finish(self, exit_code: int, output_dir: Optional[str] = None):
        """Stops the clock and records SHA-256 digests of the files written to output_dir."""
        self.runtime_seconds = time.perf_counter() - self._clock
        self.exit_code = exit_code
        if output_dir and os.path.isdir(output_dir):
            for name in sorted(os.listdir(output_dir)):
                path = os.path.join(output_dir, name)
                if name in (config.MANIFEST_JSON, config.LOG_FILE) or name.startswith(".tmp-"):
                    continue
                if os.path.isfile(path):
                    self.outputs[name] = file_digest(path)
        logger.info("Run finished with exit code %d after %.2f s", exit_code, self.runtime_seconds)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_sha256": self.config_digest,
            "seed": self.seed,
            "threads": self.threads,
            "versions": dict(self.versions),
            "started_unix": self.started,
            "runtime_s": self.runtime_seconds,
            "peak_live_matrices": self.peak_live_matrices,
            "exit_code": self.exit_code,
            "outputs_sha256": dict(self.outputs),
        }
