import pytest
import torch

from refinetag.corpus import build_vocab
from refinetag.encoder import EncoderConfig, JointTagger
from refinetag.synthetic import make_corpus

torch.set_num_threads(1)

ACCEPTANCE_TITLES = {
    1: "ATIS end-to-end scores",
    2: "Snips end-to-end scores",
    3: "two-pass sentence accuracy gain",
    4: "uncoordinated-slot curve ordering",
    5: "latency ratios",
    6: "gradient fidelity",
    7: "CRF brute-force oracle",
    8: "slot F1 vs conlleval",
    9: "mechanism unit suite",
}

_outcomes: dict[int, list[tuple[str, str, str]]] = {}


def pytest_runtest_logreport(report):
    number = getattr(report, "acceptance_number", None)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(number, []).append((report.nodeid, report.outcome, report.capstdout.strip()))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker:
        outcome.get_result().acceptance_number = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        results = _outcomes.get(n)
        if not results:
            continue
        ok = all(o == "passed" for _, o, _ in results)
        failed = [nid.split("::")[-1] for nid, o, _ in results if o != "passed"]
        line = f"criterion {n} {ACCEPTANCE_TITLES[n]}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += f" ({', '.join(failed)})"
        terminalreporter.write_line(line)
        for _, _, out in results:
            for detail in filter(None, out.splitlines()):
                terminalreporter.write_line(f"    {detail}")


@pytest.fixture
def toy():
    """A small synthetic corpus, its vocabulary and an untrained dropout-free model."""
    data = make_corpus(24, seed=5)
    vocab = build_vocab(data)
    config = EncoderConfig(
        vocab_size=len(vocab.tokens),
        num_tags=len(vocab.tags),
        num_intents=len(vocab.intents),
        num_layers=2,
        num_heads=2,
        hidden_size=16,
        dropout=0.0,
    )
    model = JointTagger(config, seed=3).double().eval()
    return data, vocab, model
