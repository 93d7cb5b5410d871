"""Run manifests: a JSON snapshot written next to every command's outputs
holding the resolved configuration, the seed, the kernel backend, and
sha256 hashes of every artifact, so any run can be reproduced bit-exactly
by pointing the same subcommand at the manifest.
"""

import hashlib
import json
import os

from udr.backend import active_backend


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed: int,
                   outputs, extra: dict | None = None) -> str:
    entry = {
        "command": command,
        "seed": int(seed),
        "backend": active_backend(),
        "config": {k: _jsonable(v) for k, v in config.items()},
        "outputs": {
            os.path.basename(str(p)): _sha256(p) for p in outputs
        },
    }
    if extra:
        entry.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(entry, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _jsonable(v):
    if isinstance(v, (bool, int, float, str)):
        return v
    return str(v)


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
