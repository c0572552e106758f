import os
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
DEMO = FIXTURES / "demo"
GOLDEN = DEMO / "golden"

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    _, outcomes = _criteria.setdefault(n, (title, []))
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        outcomes.append("SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcomes = _criteria[n]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "SKIP" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}")


def _make_tiny_bert(directory: Path, words) -> Path:
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    pieces = [".", ",", "##s", "##ed", "##ing", "1", "2"]
    vocab = specials + pieces + sorted(set(words) - set(specials) - set(pieces))
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = transformers.BertTokenizer(str(directory / "vocab.txt"), do_lower_case=True)
    torch.manual_seed(0)
    cfg = transformers.BertConfig(
        vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2, num_attention_heads=2,
        intermediate_size=64, max_position_embeddings=64,
    )
    transformers.BertForMaskedLM(cfg).save_pretrained(directory)
    tok.save_pretrained(directory)
    return directory


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    """A randomly initialised 2-layer BERT saved locally, so the adapter runs offline."""
    import json
    import re

    words = set()
    for rec in json.loads((DEMO / "raw" / "dgen_integration.json").read_text()):
        text = " ".join([rec["sentence"], rec["answer"], *rec["distractors"]])
        words |= set(re.findall(r"[a-z]+", text.lower().replace("**blank**", " ")))
    words |= {"thing", "place", "cats", "cat"}
    os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")
    return _make_tiny_bert(tmp_path_factory.mktemp("tiny-bert"), words)
