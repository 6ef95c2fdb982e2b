import pytest
from hypothesis import given
from hypothesis import strategies as st

from docnmt.context import PositionMode, assemble, cross_attention_mask, select_context
from docnmt.corpus import SEP_ID, build_vocab
from docnmt.errors import EmptySource, SourceTooLong

V = build_vocab([["His", "cat", "is", "cute", "It", "likes", "fish"]], 20)


def fig1(mode):
    return assemble([V.encode("His cat is cute".split())], V.encode("It likes fish".split()), 512, mode)


def test_reversed_layout():
    x = fig1(PositionMode.REVERSED)
    assert V.decode(x.token_ids) == ["His", "cat", "is", "cute", "[SEP]", "It", "likes", "fish"]
    assert x.segment_ids == (0, 0, 0, 0, 0, 1, 1, 1)
    assert x.position_ids == (4, 5, 6, 7, 3, 0, 1, 2)
    assert x.context_mask == (True,) * 5 + (False,) * 3
    assert cross_attention_mask(x) == x.context_mask
    assert x.source_span == (5, 8)


def test_sequential_layout():
    x = fig1("sequential")
    assert x.position_ids == tuple(range(8))


@pytest.mark.parametrize("mode", list(PositionMode))
def test_no_context(mode):
    src = [7, 8, 9, 10]
    x = assemble([], src, 512, mode)
    assert x.token_ids == tuple(src)
    assert SEP_ID not in x.token_ids
    assert x.segment_ids == (1,) * 4
    assert x.position_ids == (0, 1, 2, 3)
    assert not any(x.context_mask)


def test_truncation_keeps_newest_context():
    context = [[100 + i for i in range(600)]]
    src = list(range(6, 26))
    x = assemble(context, src, 512, "sequential")
    assert len(x) == 512 == 491 + 1 + 20
    assert x.token_ids[:491] == tuple(context[0][-491:])
    assert x.token_ids[491] == SEP_ID
    assert x.token_ids[492:] == tuple(src)


def test_sep_dropped_when_no_context_fits():
    x = assemble([[50, 51]], [6] * 9, limit=10, mode="reversed")
    assert x.token_ids == (6,) * 9
    x = assemble([[50, 51]], [6] * 8, limit=10, mode="reversed")
    assert x.token_ids == (51, SEP_ID) + (6,) * 8


def test_errors():
    with pytest.raises(EmptySource):
        assemble([[6]], [], 512)
    with pytest.raises(SourceTooLong):
        assemble([], [6] * 11, 10)


def test_select_context():
    sents = [[6], [7], [8]]
    assert select_context(sents, 0, "large") == []
    assert select_context(sents, 2, "small") == [[7]]
    assert select_context(sents, 2, "large") == [[6], [7]]
    assert select_context(sents, 2, "none") == []


sentences = st.lists(st.integers(6, 40), min_size=1, max_size=12)


@given(st.lists(sentences, max_size=6), sentences, st.integers(13, 40), st.sampled_from(list(PositionMode)))
def test_invariants(context, source, limit, mode):
    x = assemble(context, source, limit, mode)
    n = len(x)
    start, end = x.source_span
    assert n <= limit
    assert x.token_ids[start:end] == tuple(source)
    assert all((x.segment_ids[i] == 1) == (start <= i < end) for i in range(n))
    assert all(x.context_mask[i] == (not start <= i < end) for i in range(n))
    assert sorted(x.position_ids) == list(range(n))
    assert sum(cross_attention_mask(x)) == n - (end - start)
    flat = [t for s in context for t in s]
    if start:
        # surviving context is a suffix of the full context, order preserved
        assert x.token_ids[start - 1] == SEP_ID
        assert list(x.token_ids[: start - 1]) == flat[len(flat) - (start - 1):]
    if mode is PositionMode.REVERSED:
        assert x.position_ids[start:end] == tuple(range(len(source)))
    assert assemble(context, source, limit, mode) == x
