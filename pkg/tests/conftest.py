import json

import pytest

CRITERION_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in CRITERION_RESULTS:
            terminalreporter.write_line(line)


TOY_PAIRS = [
    ("hello", "hi there"),
    ("what is your name", "my name is bot"),
    ("where is my bag", "check the baggage claim"),
    ("is the flight late", "the flight is delayed"),
    ("thank you so much", "you are welcome"),
    ("goodbye", "see you soon"),
]

TOY_TOPIC_DOCS = [
    "bag baggage claim airport luggage bag baggage lost checked",
    "flight delay delayed gate crew flight time hours late",
    "thank welcome flying feedback appreciate great thank loyalty",
]


@pytest.fixture(scope="session")
def toy_qa_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "qa.jsonl"
    path.write_text(
        "\n".join(json.dumps({"q": q, "a": a}) for q, a in TOY_PAIRS),
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def toy_topic_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "topics.txt"
    path.write_text("\n".join(TOY_TOPIC_DOCS), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def toy_bundle_path(tmp_path_factory, toy_qa_path, toy_topic_corpus_path,
                    monkeypatch_session):
    """A small trained bundle shared by service/API tests."""
    from topicchat import cli

    root = tmp_path_factory.mktemp("bundle")
    topic_path = root / "tm.json"
    bundle_path = root / "bundle.json"
    rc = cli.main([
        "topics-build", "--corpus", str(toy_topic_corpus_path), "--topics", "2",
        "--membership-k", "6", "--seed", "1", "--out", str(topic_path),
    ])
    assert rc == 0
    rc = cli.main([
        "train", "--qa", str(toy_qa_path), "--topic-model", str(topic_path),
        "--out", str(bundle_path), "--iterations", "300", "--batch-size", "6",
        "--hidden-dim", "16", "--attention-dim", "12", "--question-len", "8",
        "--answer-len", "8", "--vocab-cap", "100", "--dropout", "0.0",
        "--seed", "3", "--learning-rate", "0.05",
    ])
    assert rc == 0
    return bundle_path


@pytest.fixture(scope="session")
def monkeypatch_session():
    from _pytest.monkeypatch import MonkeyPatch

    mp = MonkeyPatch()
    mp.setenv("SOURCE_DATE_EPOCH", "1700000000")
    yield mp
    mp.undo()
