"""Stage 4: context windows and non-destructive enrichment."""

import pytest

from surgforge.backend.client import BackendClient, InProcessEndpoint
from surgforge.backend.mock import MockBackend
from surgforge.backend.protocol import Kind
from surgforge.enrichment import VideoMeta, build_context, enrich_caption
from surgforge.errors import TransportError
from surgforge.hierarchy import ClipCaptionPair, GranularityLevel

TASK = GranularityLevel.TASK


def pairs_at_level(n, video_id="v1", level=TASK):
    return [
        ClipCaptionPair(
            video_id=video_id,
            level=level,
            clip_index=i,
            t_start=i * 1_000,
            t_end=i * 1_000 + 900,
            caption=f"caption {i}",
        )
        for i in range(n)
    ]


def meta(procedure="cholecystectomy", title="a title"):
    return VideoMeta(
        video_id="v1", title=title, procedure_type=procedure, fps=30.0, source="public"
    )


def mock_client():
    return BackendClient({Kind.TEXT_ENRICH: InProcessEndpoint(MockBackend().handle)})


class TestBuildContext:
    def test_fewer_predecessors_than_window(self):
        ctx = build_context(pairs_at_level(10), j=2, n=5)
        assert ctx.captions == ("caption 0", "caption 1")

    def test_window_of_five_slides(self):
        ctx = build_context(pairs_at_level(10), j=7, n=5)
        assert ctx.captions == tuple(f"caption {i}" for i in range(2, 7))

    def test_first_pair_has_empty_window(self):
        ctx = build_context(pairs_at_level(10), j=0, n=5)
        assert ctx.captions == ()

    def test_never_includes_self(self):
        for j in range(10):
            ctx = build_context(pairs_at_level(10), j=j, n=20)
            assert f"caption {j}" not in ctx.captions

    def test_zero_window(self):
        assert build_context(pairs_at_level(10), j=4, n=0).captions == ()

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            build_context(pairs_at_level(3), j=3, n=5)


class TestEnrichCaption:
    def test_mock_template_with_context_count(self):
        pairs = pairs_at_level(4)
        ctx = build_context(pairs, j=3, n=5)
        enriched, failed = enrich_caption(pairs[3], ctx, meta(), mock_client())
        assert failed is False
        assert enriched == "In this cholecystectomy: caption 3 [context=3]"

    def test_degenerate_metadata_still_enriches(self):
        pairs = pairs_at_level(1)
        ctx = build_context(pairs, j=0, n=5)
        enriched, failed = enrich_caption(
            pairs[0], ctx, meta(procedure="appendectomy", title=""), mock_client()
        )
        assert failed is False
        assert enriched == "In this appendectomy: caption 0 [context=0]"

    def test_backend_failure_keeps_raw_and_flags(self):
        class DeadEndpoint:
            def send(self, req, timeout_s):
                raise TransportError("unreachable")

            def close(self):
                pass

        from surgforge.backend.client import RetryPolicy

        client = BackendClient(
            {Kind.TEXT_ENRICH: DeadEndpoint()},
            retry_policy=RetryPolicy(max_attempts=2, base_delay_s=0.0),
        )
        pairs = pairs_at_level(1)
        raw_before = pairs[0].caption
        enriched, failed = enrich_caption(
            pairs[0], build_context(pairs, 0, 5), meta(), client
        )
        assert enriched is None and failed is True
        assert pairs[0].caption == raw_before  # raw caption untouched

    def test_rerun_is_byte_identical(self):
        pairs = pairs_at_level(6)
        ctx = build_context(pairs, j=5, n=3)
        first, _ = enrich_caption(pairs[5], ctx, meta(), mock_client())
        second, _ = enrich_caption(pairs[5], ctx, meta(), mock_client())
        assert first.encode("utf-8") == second.encode("utf-8")
