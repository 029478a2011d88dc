"""Scripted stand-in for a real container builder.

Run as ``python -m dockrepro.simbuilder <context> <dockerfile> <output>``
with SIMBUILDER_SCRIPT pointing at a JSON file::

    {"clean": [step, step], "hardened": [step, step]}

Each invocation consumes the next step for its mode (HARDENED=0|1); the
last step repeats once a list runs out. A step is either a digest string,
one of "build-error" / "timeout" / "no-digest", or an object with optional
``status``, ``digest``, ``image`` (copied to the output path) and ``sleep``.
Call counts live in SIMBUILDER_STATE (default: the script path + ".state").
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .errors import BuilderContractViolation
from .oci import Digest, load_image
from .protocol import BuildOutcome, BuildSpec, Builder
from .testing import copy_image

Step = Union[str, dict]


def normalize_step(step: Step) -> dict:
    if isinstance(step, dict):
        out = dict(step)
        out.setdefault("status", "success")
        return out
    if step in ("build-error", "timeout", "no-digest"):
        return {"status": step}
    return {"status": "success", "digest": step}


def realize(step: Step, output: str) -> dict:
    """Write the step's image (if any) and fill in its digest."""
    s = normalize_step(step)
    if s["status"] != "success":
        return s
    if "image" in s:
        copy_image(s["image"], output)
        if "digest" not in s:
            s["digest"] = str(load_image(output).digest)
    else:
        Path(output).write_text(f"simulated image {s['digest']}\n")
    return s


def _pick(steps: Sequence[Step], n: int) -> Step:
    if not steps:
        raise ValueError("empty step list")
    return steps[min(n, len(steps) - 1)]


@dataclass
class ScriptedBuilder(Builder):
    """In-process builder that replays scripted outcomes."""

    clean: List[Step]
    hardened: List[Step] = field(default_factory=list)
    calls: List[BuildSpec] = field(default_factory=list)

    def build(self, spec: BuildSpec, output: str) -> BuildOutcome:
        mode = "hardened" if spec.hardened else "clean"
        n = sum(1 for c in self.calls if c.hardened == spec.hardened)
        self.calls.append(spec)
        s = realize(_pick(getattr(self, mode), n), output)
        if s["status"] == "no-digest":
            raise BuilderContractViolation("builder reported success without a digest", "")
        if s["status"] != "success":
            return BuildOutcome(s["status"], log_excerpt=f"scripted {s['status']}")
        return BuildOutcome("success", Digest.parse(s["digest"]), output, f"scripted {mode} build {n + 1}")


def _load_state(path: Path) -> Dict[str, int]:
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return {"clean": 0, "hardened": 0}


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print("usage: simbuilder <context> <dockerfile> <output>", file=sys.stderr)
        return 64
    context, dockerfile, output = argv
    script_path = Path(os.environ["SIMBUILDER_SCRIPT"])
    state_path = Path(os.environ.get("SIMBUILDER_STATE", str(script_path) + ".state"))
    script = json.loads(script_path.read_text())
    hardened = os.environ.get("HARDENED") == "1"
    mode = "hardened" if hardened else "clean"
    if hardened and "SOURCE_DATE_EPOCH" not in os.environ:
        print("hardened build without SOURCE_DATE_EPOCH", file=sys.stderr)
        return 1

    state = _load_state(state_path)
    n = state.get(mode, 0)
    state[mode] = n + 1
    state_path.write_text(json.dumps(state))

    print(f"simbuilder: {mode} build {n + 1} of {dockerfile} in {context}")
    s = realize(_pick(script.get(mode) or script.get("clean", []), n), output)
    if "sleep" in s:
        time.sleep(float(s["sleep"]))
    if s["status"] == "timeout":
        time.sleep(float(s.get("sleep", 3600)))
        return 1
    if s["status"] == "build-error":
        print("error: scripted build failure", file=sys.stderr)
        return 1
    print("pull-policy: never")
    if s["status"] == "no-digest":
        Path(output).write_text("simulated image without digest\n")
        print("build finished")
        return 0
    print(f"digest: {s['digest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
