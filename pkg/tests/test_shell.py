import shlex

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockrepro.errors import UnterminatedQuote
from dockrepro.shell import segment_shell


def connectors(payload):
    return [s.connector_after for s in segment_shell(payload).segments]


def test_apt_chain_segments():
    sc = segment_shell("apt-get update && apt-get install -y nodejs && rm -rf /var/lib/apt/lists/*")
    assert [s.connector_after for s in sc.segments] == ["and", "and", "none"]
    assert sc.segments[2].argv == ("rm", "-rf", "/var/lib/apt/lists/*")


def test_quoted_connector_is_literal():
    sc = segment_shell("echo 'a && b'")
    assert len(sc.segments) == 1
    assert sc.segments[0].argv == ("echo", "a && b")


def test_npm_cache_flag():
    sc = segment_shell("npm ci --cache /tmp/npm && rm -rf /tmp/npm ~/.npm")
    assert len(sc.segments) == 2
    assert "--cache" in sc.segments[0].argv


@pytest.mark.parametrize(
    "payload, expected",
    [
        ("a; b || c", ["seq", "or", "none"]),
        ("a && b;", ["and", "seq", "none"]),  # trailing empty segment
        ('echo "x;y" && z', ["and", "none"]),
        ("echo $(a && b) && c", ["and", "none"]),
        ("echo `a; b`; c", ["seq", "none"]),
        ("echo a\\;b", ["none"]),
    ],
)
def test_connectors(payload, expected):
    assert connectors(payload) == expected


def test_double_quote_escapes():
    assert segment_shell('echo "say \\"hi\\""').segments[0].argv == ("echo", 'say "hi"')


def test_pipeline_split():
    seg = segment_shell("cat /etc/os-release | grep -i id").segments[0]
    assert [tuple(t.value for t in stage) for stage in seg.pipeline()] == [
        ("cat", "/etc/os-release"), ("grep", "-i", "id"),
    ]


def test_exec_form():
    sc = segment_shell('["/bin/sh", "-c", "echo exec form"]')
    assert sc.exec_form
    assert sc.segments[0].argv == ("/bin/sh", "-c", "echo exec form")


def test_trailing_comment_not_tokenized():
    sc = segment_shell("echo hi # trailing && comment")
    assert [s.argv for s in sc.segments] == [("echo", "hi")]


@pytest.mark.parametrize("payload", ["echo 'open", 'echo "open', "echo $(open"])
def test_unterminated(payload):
    with pytest.raises(UnterminatedQuote):
        segment_shell(payload)


def test_render_is_lossless():
    payload = "apt-get update   &&  apt-get install -y 'a b' ;echo done"
    assert segment_shell(payload).render() == payload


_WORD = st.text(st.sampled_from("abcxyz-_./=*&;| \"'$"), min_size=1, max_size=8)


@given(st.lists(_WORD, min_size=1, max_size=6))
def test_single_command_argv_matches_shlex(words):
    # quoting each word with shlex makes connectors literal; the oracle is shlex itself
    payload = " ".join(shlex.quote(w) for w in words)
    sc = segment_shell(payload)
    assert len(sc.segments) == 1
    assert sc.segments[0].argv == tuple(shlex.split(payload))


@given(st.lists(st.lists(st.text("abc", min_size=1, max_size=4), min_size=1, max_size=3), min_size=1, max_size=5),
       st.lists(st.sampled_from(["&&", "||", ";"]), min_size=5, max_size=5))
def test_segments_follow_connectors(commands, ops):
    payload = ""
    for i, argv in enumerate(commands):
        payload += " ".join(argv)
        if i < len(commands) - 1:
            payload += f" {ops[i]} "
    sc = segment_shell(payload)
    assert [s.argv for s in sc.segments] == [tuple(c) for c in commands]
    assert sc.render() == payload
