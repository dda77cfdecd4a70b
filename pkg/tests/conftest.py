import pytest

from oskit.glyphs import write_glyph_corpus


@pytest.fixture(scope="session")
def glyph_root(tmp_path_factory):
    """Small shared IDX corpus; sized for split/eval tests, not training."""
    root = tmp_path_factory.mktemp("corpus")
    write_glyph_corpus(root, n_train=300, n_test=160, seed=0)
    return root
