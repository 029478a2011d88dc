import calendar
import json
import subprocess
import sys
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockrepro.errors import BuilderContractViolation, MalformedTimestamp, NoCandidates
from dockrepro.oci import Digest
from dockrepro.protocol import (
    BuildOutcome,
    BuildSpec,
    CommandBuilder,
    Verdict,
    aggregate_verdicts,
    derive_epoch,
    discover_dockerfiles,
    git_commit_epoch,
    run_protocol,
    select_dockerfile,
)
from dockrepro.simbuilder import ScriptedBuilder

D1, D2, D3, D4 = ("sha256:" + c * 64 for c in "1234")
SIM = [sys.executable, "-m", "dockrepro.simbuilder"]


@pytest.fixture
def repo(tmp_path):
    ctx = tmp_path / "repo"
    ctx.mkdir()
    (ctx / "Dockerfile").write_text("FROM scratch\n")
    return ctx


@pytest.mark.parametrize(
    "candidates, expected",
    [
        (["docker/Dockerfile", "Dockerfile", "api/Dockerfile"], "Dockerfile"),
        (["services/web/Dockerfile", "docker/Dockerfile.prod", "docker/Dockerfile"], "docker/Dockerfile"),
        (["b/Dockerfile", "a/Dockerfile"], "a/Dockerfile"),
        (["Dockerfile.dev", "Dockerfile"], "Dockerfile"),
        (["docker\\Dockerfile", "x/y/Dockerfile"], "docker/Dockerfile"),
    ],
)
def test_select_dockerfile(candidates, expected):
    assert select_dockerfile(candidates) == expected


def test_select_dockerfile_empty():
    with pytest.raises(NoCandidates):
        select_dockerfile([])
    with pytest.raises(NoCandidates):
        select_dockerfile(["README.md"])


@given(st.permutations(["Dockerfile.ci", "docker/Dockerfile", "z/Dockerfile", "a/b/Dockerfile", "Dockerfile"]))
def test_select_is_order_independent(paths):
    assert select_dockerfile(paths) == "Dockerfile"


def test_discover_skips_vendored_dirs(tmp_path):
    for rel in ("Dockerfile", "docker/Dockerfile.prod", "node_modules/x/Dockerfile", ".git/Dockerfile", "src/app.py"):
        p = tmp_path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("")
    assert discover_dockerfiles(tmp_path) == ["Dockerfile", "docker/Dockerfile.prod"]


def _oracle(ts: str) -> int:
    dt = datetime.strptime(ts.replace("Z", "+0000"), "%Y-%m-%dT%H:%M:%S%z")
    return calendar.timegm(dt.astimezone(timezone.utc).timetuple())


@pytest.mark.parametrize(
    "ts", ["1970-01-01T00:00:00Z", "2025-12-02T17:46:38Z", "2024-02-29T23:59:59+0530", "1999-12-31T20:00:00-0400"]
)
def test_derive_epoch_matches_oracle(ts):
    assert derive_epoch(ts) == _oracle(ts)


def test_derive_epoch_examples():
    assert derive_epoch("1970-01-01T00:00:00Z") == 0
    assert derive_epoch("2025-12-02T17:46:38Z") == 1764697598
    assert derive_epoch("2025-01-01T12:00:00+02:00") == derive_epoch("2025-01-01T10:00:00Z")


@pytest.mark.parametrize("ts", ["2025-12-02T17:46:38", "2025-12-02", "yesterday", "", "2025-13-01T00:00:00Z"])
def test_derive_epoch_rejects(ts):
    with pytest.raises(MalformedTimestamp):
        derive_epoch(ts)


@given(st.datetimes(min_value=datetime(1970, 1, 2), max_value=datetime(2100, 1, 1)),
       st.integers(-12 * 60, 14 * 60))
def test_derive_epoch_property(dt, offset_minutes):
    zone = timezone(timedelta(minutes=offset_minutes))
    aware = dt.replace(microsecond=0, tzinfo=zone)
    assert derive_epoch(aware.isoformat()) == int(aware.timestamp())


def test_git_commit_epoch(tmp_path):
    assert git_commit_epoch(tmp_path) is None
    env = {"GIT_COMMITTER_DATE": "2025-12-02T17:46:38Z", "GIT_AUTHOR_DATE": "2025-12-02T17:46:38Z",
           "HOME": str(tmp_path), "PATH": "/usr/bin:/bin"}
    try:
        subprocess.run(["git", "init", "-q", str(tmp_path)], check=True, env=env)
        subprocess.run(["git", "-C", str(tmp_path), "-c", "user.name=t", "-c", "user.email=t@e",
                        "commit", "-q", "--allow-empty", "-m", "x"], check=True, env=env)
    except (OSError, subprocess.CalledProcessError):
        pytest.skip("git unavailable")
    assert git_commit_epoch(tmp_path) == 1764697598


def test_build_spec_validation():
    with pytest.raises(ValueError):
        BuildSpec(".", "Dockerfile", hardened=True)
    with pytest.raises(ValueError):
        BuildSpec(".", "Dockerfile", disable_cache=False)
    assert BuildSpec(".", "Dockerfile", hardened=True, source_date_epoch=0).to_dict()["source_date_epoch"] == 0


def test_build_outcome_validation():
    with pytest.raises(ValueError):
        BuildOutcome("success")
    with pytest.raises(ValueError):
        BuildOutcome("build-error", image_digest=Digest.parse(D1))
    with pytest.raises(ValueError):
        BuildOutcome("exploded")


def test_verdict_order():
    assert sorted(Verdict) == [Verdict.NotBuildable, Verdict.NonReproducible, Verdict.SemanticallyReproducible,
                               Verdict.InfraReproducible, Verdict.BitwiseReproducible]
    assert not Verdict.NotBuildable.buildable


def test_bitwise_runs_two_builds(repo, tmp_path):
    b = ScriptedBuilder([D1, D1])
    trace = run_protocol(b, repo, 1764697598, workdir=tmp_path / "w")
    assert trace.verdict is Verdict.BitwiseReproducible
    assert trace.build_count == 2 and not any(s.hardened for s in b.calls)
    assert all(s.disable_cache for s in b.calls)
    assert trace.dockerfile == "Dockerfile"


def test_infra_passes_epoch(repo):
    b = ScriptedBuilder([D1, D2], [D3, D3])
    trace = run_protocol(b, repo, 1764697598)
    assert trace.verdict is Verdict.InfraReproducible
    assert [s.source_date_epoch for s in b.calls if s.hardened] == [1764697598, 1764697598]
    assert [str(a) for a, _ in trace.digest_pairs] == [D1, D3]


def test_clean_failure_on_second_build(repo):
    b = ScriptedBuilder([D1, "build-error"])
    trace = run_protocol(b, repo, 0)
    assert trace.verdict is Verdict.NotBuildable and trace.build_count == 2
    assert "clean build 2" in trace.reason


def test_hardened_failure_falls_back_to_clean_images(repo, make_image):
    a = make_image({"a": b"1"}, mtime=1)
    c = make_image({"a": b"1"}, mtime=2)
    b = ScriptedBuilder([{"image": str(a)}, {"image": str(c)}], ["build-error"])
    trace = run_protocol(b, repo, 0)
    assert trace.verdict is Verdict.SemanticallyReproducible
    assert trace.build_count == 4 and "hardened build failed" in trace.reason


def test_trace_json_round_trips(repo, make_image):
    a, c = make_image({"a": b"1"}), make_image({"a": b"2"})
    trace = run_protocol(ScriptedBuilder([D1, D2], [{"image": str(a)}, {"image": str(c)}]), repo, 7)
    assert trace.verdict is Verdict.NonReproducible
    data = json.loads(trace.to_json())
    assert data["verdict"] == "NonReproducible" and len(data["builds"]) == 4
    assert data["diff_report"]["semantic_equal"] is False


def test_no_dockerfile(tmp_path):
    with pytest.raises(NoCandidates):
        run_protocol(ScriptedBuilder([D1]), tmp_path, 0)


def test_scripted_contract_violation(repo):
    with pytest.raises(BuilderContractViolation):
        run_protocol(ScriptedBuilder(["no-digest"]), repo, 0)


def _script(tmp_path, data):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(data))
    return path


def test_command_builder_success(repo, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMBUILDER_SCRIPT", str(_script(tmp_path, {"clean": [D1, D2], "hardened": [D4, D4]})))
    trace = run_protocol(CommandBuilder(SIM), repo, 1764697598, workdir=tmp_path / "w")
    assert trace.verdict is Verdict.InfraReproducible
    outcomes = [o for _, o in trace.builds]
    assert all(o.pull_policy == "never" for o in outcomes)
    assert "hardened build 2" in outcomes[-1].log_excerpt


def test_command_builder_strips_inherited_epoch(repo, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMBUILDER_SCRIPT", str(_script(tmp_path, {"clean": [D1]})))
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "5")
    out = CommandBuilder(SIM).build(BuildSpec(str(repo), str(repo / "Dockerfile")), str(tmp_path / "o"))
    assert out.ok and str(out.image_digest) == D1


def test_command_builder_missing_digest(repo, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMBUILDER_SCRIPT", str(_script(tmp_path, {"clean": ["no-digest"]})))
    with pytest.raises(BuilderContractViolation):
        run_protocol(CommandBuilder(SIM), repo, 0)


def test_command_builder_timeout(repo, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMBUILDER_SCRIPT", str(_script(tmp_path, {"clean": ["timeout"]})))
    trace = run_protocol(CommandBuilder(SIM), repo, 0, timeout=1)
    assert trace.verdict is Verdict.NotBuildable
    assert trace.builds[0][1].status == "timeout"


def test_command_builder_error_and_missing_program(repo, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMBUILDER_SCRIPT", str(_script(tmp_path, {"clean": ["build-error"]})))
    spec = BuildSpec(str(repo), str(repo / "Dockerfile"))
    out = CommandBuilder(SIM).build(spec, str(tmp_path / "o"))
    assert out.status == "build-error" and "scripted build failure" in out.log_excerpt
    missing = CommandBuilder(str(tmp_path / "nope")).build(spec, str(tmp_path / "o"))
    assert missing.status == "build-error"


def test_aggregate_verdicts():
    verdicts = [Verdict.NotBuildable] * 877 + [Verdict.BitwiseReproducible] * 1123
    counts = aggregate_verdicts(verdicts)
    assert counts.total == 2000 and counts.buildable == 1123 and counts.not_buildable == 877
    assert counts.to_dict()["buildable"] == 1123
