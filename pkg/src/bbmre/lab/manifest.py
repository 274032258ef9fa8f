from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    version: str
    seeds: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    backend: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs.append({"file": path.name, "sha256": sha256_file(path)})

    def checksums(self) -> dict:
        return {o["file"]: o["sha256"] for o in self.outputs}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True, default=_plain) + "\n")
        return path

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def _plain(v):
    # numpy scalars
    if hasattr(v, "item"):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")
