import torch

from tage.grounding import (
    GroundingHead,
    assign_grounding,
    decode_bio,
    decode_bio_tags,
    ground_batch,
    tags_from_spans,
)
from tage.vocabulary import LabelVocabularies


def reference_decode(tags):
    """Independent decoder over the same repair rule, written index-first."""
    spans = []
    i = 0
    while i < len(tags):
        tag = tags[i]
        if tag.startswith("B-") or tag.startswith("I-"):
            cls = tag[2:]
            j = i + 1
            while j < len(tags) and tags[j] == f"I-{cls}":
                j += 1
            spans.append((i, j - 1, cls))
            i = j
        else:
            i += 1
    return spans


def test_decode_example():
    assert decode_bio_tags(["O", "O", "B-CUP", "O", "B-TABLE", "I-TABLE"]) == [(2, 2, "CUP"), (4, 5, "TABLE")]


def test_decode_all_outside():
    assert decode_bio_tags(["O"] * 6) == []


def test_orphan_inside_opens_span():
    assert decode_bio_tags(["O", "I-CUP", "I-CUP", "O"]) == [(1, 2, "CUP")]
    assert decode_bio_tags(["I-CUP", "I-TABLE"]) == [(0, 0, "CUP"), (1, 1, "TABLE")]


def test_decode_matches_reference_on_random_matrices(vocab):
    gen = torch.Generator().manual_seed(5)
    for _ in range(200):
        n = int(torch.randint(1, 15, (1,), generator=gen))
        matrix = torch.softmax(torch.randn(n, vocab.num_bio_tags, generator=gen) * 3, -1)
        tags = [vocab.bio_tags[int(i)] for i in matrix.argmax(-1)]
        assert decode_bio(matrix, vocab) == reference_decode(tags)


def test_decoded_spans_disjoint_and_ordered(vocab):
    gen = torch.Generator().manual_seed(6)
    for _ in range(50):
        matrix = torch.softmax(torch.randn(12, vocab.num_bio_tags, generator=gen) * 3, -1)
        spans = decode_bio(matrix, vocab)
        for (s1, e1, _), (s2, e2, _) in zip(spans, spans[1:]):
            assert e1 < s2 and s1 <= e1 and s2 <= e2


def test_grounding_head_shape_and_normalization():
    torch.manual_seed(0)
    vocab10 = LabelVocabularies(object_classes=tuple(f"C{i}" for i in range(10)))
    head = GroundingHead(enc_dim=32, num_tags=vocab10.num_bio_tags)
    probs = head(torch.randn(1, 12, 32))
    assert probs.shape == (1, 12, 21)
    assert torch.allclose(probs.sum(-1), torch.ones(1, 12), atol=1e-5)


def test_assign_grounding_exact_match():
    assert assign_grounding((4, 5), [(4, 5, "TABLE")]) == "TABLE"


def test_assign_grounding_no_overlap_is_none():
    assert assign_grounding((0, 0), [(4, 5, "TABLE")]) is None
    assert assign_grounding((1, 1), []) is None


def test_assign_grounding_max_overlap_wins():
    spans = [(4, 5, "TABLE"), (2, 3, "CUP")]
    assert assign_grounding((3, 5), spans) == "TABLE"  # overlap 2 beats 1


def test_assign_grounding_tie_goes_to_earlier_span():
    spans = [(0, 0, "CUP"), (2, 2, "TABLE")]
    assert assign_grounding((0, 2), spans) == "CUP"


def test_shared_span_grounds_identically_across_tasks():
    spans = [(1, 2, "CUP"), (6, 7, "TABLE")]
    per_task = [assign_grounding((1, 2), spans) for _ in range(3)]
    assert per_task == ["CUP", "CUP", "CUP"]


def test_ground_batch_respects_mask(vocab):
    torch.manual_seed(1)
    probs = torch.softmax(torch.randn(2, 8, vocab.num_bio_tags) * 3, -1)
    mask = torch.zeros(2, 8, dtype=torch.bool)
    mask[0, :8] = True
    mask[1, :3] = True
    out = ground_batch(probs, mask, vocab)
    assert all(e <= 2 for _, e, _ in out.decoded_spans[1])


def test_tags_from_spans_wellformed():
    tags = tags_from_spans(6, [(1, 2, "CUP"), (4, 4, "TABLE")])
    assert tags == ["O", "B-CUP", "I-CUP", "O", "B-TABLE", "O"]
