"""Regenerate tests/fixtures/corpus/: 100 varied Dockerfiles from a fixed seed.

    python3 tests/fixtures/make_corpus.py
"""

import random
from pathlib import Path

OUT = Path(__file__).parent / "corpus"

BASES = [
    "python:3.11-slim", "ubuntu", "debian:bookworm-slim", "node:20-alpine AS build",
    "golang:1.22 AS builder", "registry.example.com:5000/team/app:1.2",
    "alpine@sha256:" + "ab" * 32, "--platform=$BUILDPLATFORM busybox", "scratch",
]
RUNS = [
    "apt-get update && apt-get install -y --no-install-recommends curl && rm -rf /var/lib/apt/lists/*",
    "pip install --no-cache-dir flask==3.0.0",
    "npm ci --cache /tmp/npm && rm -rf /tmp/npm",
    "echo 'a && b; c' > /x || true",
    'echo "quoted \\"inner\\" $(date +%s)"',
    "go build -trimpath -o /out/app ./...",
    '["/bin/sh", "-c", "echo exec form"]',
    "set -eux; \\\n    apk add --no-cache git; \\\n    git --version",
    "apt-get update \\\n    && apt-get install -y \\\n        build-essential \\\n        wget",
    "for f in a b c; do echo $f; done",
    "--mount=type=cache,target=/root/.cache pip install -r requirements.txt",
    "cat /etc/os-release | grep -i id # trailing comment",
]
OTHERS = [
    "WORKDIR /app", "COPY . .", "COPY --from=build /out /usr/local/bin/", "ADD https://example.com/x.tgz /tmp/",
    "ENV A=1 B=\"two words\"", "ENV LEGACY value with spaces", "ARG VERSION=1.0", "ARG SOURCE_DATE_EPOCH",
    "LABEL org.opencontainers.image.source=\"https://example.com\"", "EXPOSE 8080/tcp", "USER 1000:1000",
    "VOLUME [\"/data\"]", 'CMD ["python", "app.py"]', "ENTRYPOINT /entry.sh", "SHELL [\"/bin/bash\", \"-c\"]",
    "HEALTHCHECK --interval=30s CMD curl -f http://localhost/ || exit 1", "STOPSIGNAL SIGTERM",
    "ONBUILD RUN echo onbuild", "MAINTAINER someone@example.com", "FROBNICATE unknown instruction",
    "copy lower.txt /lower.txt", "Run echo mixed case",
]
COMMENTS = ["# a comment", "#no space", "   # indented comment", "# syntax=docker/dockerfile:1"]
HEREDOC = "RUN <<EOF\napt-get update\necho done && true\nEOF"


def make(rng: random.Random, i: int) -> str:
    lines = []
    if i % 7 == 0:
        lines.append("# syntax=docker/dockerfile:1.6")
    if i % 13 == 0:
        lines.append("# escape=`")
    lines.append("FROM " + rng.choice(BASES))
    for _ in range(rng.randint(1, 12)):
        r = rng.random()
        if r < 0.35:
            lines.append("RUN " + rng.choice(RUNS))
        elif r < 0.75:
            lines.append(rng.choice(OTHERS))
        elif r < 0.85:
            lines.append(rng.choice(COMMENTS))
        elif r < 0.92:
            lines.append("")
        elif r < 0.96:
            lines.append(HEREDOC)
        else:
            lines.append("RUN echo one \\\n    # comment inside continuation\n\n    && echo two")
    text = "\n".join(lines)
    if "# escape=`" in text:
        text = text.replace("\\\n", "`\n")
    if i % 5 == 0:
        text = text.replace("\n", "\r\n")
    if i % 3 != 0:
        text += "\r\n" if i % 5 == 0 else "\n"
    if i % 11 == 0:
        text += "\n\n# trailing comment\n"
    if i % 17 == 0:
        text = "﻿" + text if i % 2 else "  " + text
    return text


def main() -> None:
    rng = random.Random(20240615)
    OUT.mkdir(exist_ok=True)
    for i in range(100):
        (OUT / f"{i:03d}.Dockerfile").write_bytes(make(rng, i).encode("utf-8"))


if __name__ == "__main__":
    main()
