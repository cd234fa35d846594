"""Shared fixtures: synthetic books, slices, and a trained pipeline.

Session scope keeps the expensive generation and training work to one
pass; everything downstream treats these objects as immutable.
"""

from __future__ import annotations

from datetime import date

import pytest

from groupcast.pipeline import PipelineConfig, train_pipeline
from groupcast.slicing import SliceSpec, resolve_slices
from groupcast.synth import SynthConfig, generate


def renewal_table(manifest: dict) -> dict[str, date]:
    return {
        gid: date.fromisoformat(g["renewal_date"])
        for gid, g in manifest["groups"].items()
    }


@pytest.fixture(scope="session")
def small_gen(tmp_path_factory):
    """A 12-group book written to disk, with its manifest."""
    out = tmp_path_factory.mktemp("smallbook")
    cfg = SynthConfig(
        seed=11, n_groups=12, group_size_median=28.0, min_group_size=15,
        concession_fraction=0.25,
    )
    return generate(cfg, str(out))


@pytest.fixture(scope="session")
def small_book(small_gen):
    return small_gen.book


@pytest.fixture(scope="session")
def small_manifest(small_gen):
    return small_gen.manifest


@pytest.fixture(scope="session")
def small_slices(small_gen):
    return resolve_slices(
        small_gen.book,
        SliceSpec(mode="dynamic"),
        renewal_table=renewal_table(small_gen.manifest),
    )


@pytest.fixture(scope="session")
def trained_mid(tmp_path_factory):
    """A 60-group book with planted concessions and its trained pipeline."""
    cfg = SynthConfig(
        seed=5, n_groups=60, group_size_median=40.0, min_group_size=20,
        concession_fraction=0.3,
    )
    out = tmp_path_factory.mktemp("midbook")
    gen = generate(cfg, str(out))
    slices = resolve_slices(
        gen.book, SliceSpec(mode="dynamic"),
        renewal_table=renewal_table(gen.manifest),
    )
    result = train_pipeline(gen.book, slices, PipelineConfig())
    return gen, slices, result
