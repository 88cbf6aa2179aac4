import pytest

from lorapair.config import load_config

# A configuration small enough for the whole pipeline to run in seconds.
TINY = [
    "data_n=120", "pretrain_n=200", "pretrain_epochs=1", "epochs=2",
    "vocab_size=256", "embed_dim=16", "num_heads=2", "ffn_dim=32", "max_seq_len=16",
]


@pytest.fixture
def tiny_overrides():
    return list(TINY)


@pytest.fixture
def tiny_cfg(tmp_path):
    return load_config(overrides=TINY, out_dir=str(tmp_path / "run"))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and rep.passed:
                continue
            status = "PASS" if rep.passed else "FAIL"
            num, _, title = props["criterion"].partition(" ")
            detail = props.get("detail", "")
            lines.append((int(num), f"{status}  criterion {num}: {title}" + (f" ({detail})" if detail else "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
