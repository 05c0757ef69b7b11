#!/usr/bin/env python3
"""Regenerates assets/manifest.json after a component file changes.

Component hashes are FNV-1a 64-bit over the full file bytes, matching the
loader's drift check.
"""
import json
import pathlib
import sys

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
MASK = (1 << 64) - 1


def fnv1a64_hex(data: bytes) -> str:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK
    return f"{h:016x}"


def main() -> int:
    assets = pathlib.Path(__file__).resolve().parent.parent / "assets"
    components_dir = assets / "components"
    entries = []
    for path in sorted(components_dir.glob("*.txt")):
        raw = path.read_bytes()
        header = json.loads(raw.split(b"\n---\n", 1)[0])
        entries.append({
            "id": header["id"],
            "kind": header["kind"],
            "path": f"components/{path.name}",
            "fnv64": fnv1a64_hex(raw),
        })
    manifest = {"components": entries}
    out = assets / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(entries)} components)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
