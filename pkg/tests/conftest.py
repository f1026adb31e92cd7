import pytest

from lexgraph.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def synth7():
    """The seed-7 planted dataset used across modules."""
    train_corpus, train_labels, test_corpus, test_labels, charges = generate(
        SynthSpec(seed=7)
    )
    return {
        "train_corpus": train_corpus,
        "train_labels": train_labels,
        "test_corpus": test_corpus,
        "test_labels": test_labels,
        "charges": charges,
    }
